"""Closed-form and quadrature quantities attached to a negative-drift increment law.

Everything here is derived from a single :class:`~excursion_area.increments.LatticePMF`:
the Cramér root ``lam`` (phi(lam) = 1), the optimal fluid profile
``psi(u) = -log(phi(lam (1 - u))) / lam``, the area rate ``I = int_0^1 psi`` and the
exponential rate ``theta = 2 lam sqrt(I)``, the tilted variance ``sigma2(u)``, the
Gaussian covariance of (position, area) under the time-varying tilt, the
product gap ``g(n)``, the saddle horizon and the Chebyshev-type bound, and the
two derived constants (duration variance and the local prefactor kappa).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from .errors import NoRoot, QuadratureError, SingularCovariance, TruncationTooCoarse
from .increments import LatticePMF, mgf, mgf_derivatives, tilted_probs, validate


# ---------------------------------------------------------------------------
# quadrature


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-10, max_depth: int = 50, min_depth: int = 4):
    """Adaptive Simpson rule with Richardson correction.

    Returns ``(value, error_estimate)``. Raises :class:`QuadratureError` when
    an interval has to be split beyond ``max_depth`` levels.
    """
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) * (fa + 4 * fm + fb) / 6
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    parts, err = [], 0.0
    while stack:
        a0, b0, fa0, fm0, fb0, whole0, tol0, depth = stack.pop()
        m = 0.5 * (a0 + b0)
        flm, frm = f(0.5 * (a0 + m)), f(0.5 * (m + b0))
        left = (m - a0) * (fa0 + 4 * flm + fm0) / 6
        right = (b0 - m) * (fm0 + 4 * frm + fb0) / 6
        delta = left + right - whole0
        if depth >= min_depth and abs(delta) <= 15 * tol0:
            parts.append(left + right + delta / 15)
            err += abs(delta) / 15
        elif depth >= max_depth:
            raise QuadratureError(
                f"adaptive Simpson did not converge on [{a0}, {b0}]", achieved=abs(delta) / 15)
        else:
            stack.append((m, b0, fm0, frm, fb0, right, 0.5 * tol0, depth + 1))
            stack.append((a0, m, fa0, flm, fm0, left, 0.5 * tol0, depth + 1))
    return math.fsum(parts), err


def composite_simpson(values: np.ndarray, h: float) -> float:
    """Composite Simpson rule on an odd number of equally spaced samples."""
    values = np.asarray(values, dtype=np.float64)
    if values.size % 2 == 0:
        raise ValueError("composite Simpson needs an odd number of samples")
    return h / 3 * (values[0] + values[-1] + 4 * values[1:-1:2].sum() + 2 * values[2:-1:2].sum())


# ---------------------------------------------------------------------------
# Cramér root and the fluid profile


def _phi_minus_one(pmf: LatticePMF, t: float) -> float:
    # sum p_k (e^{tk} - 1) keeps full relative precision near t = 0
    return math.fsum(pmf.probs * np.expm1(t * pmf.offsets))


def cramer_root(pmf: LatticePMF) -> float:
    """The unique positive root of phi(t) = 1.

    Brackets the root by doubling, bisects to width 1e-13 and polishes with
    a single Newton step.
    """
    report = validate(pmf)
    if not report.cramer_satisfiable:
        raise NoRoot("; ".join(report.messages) or "no positive root of phi(t) = 1")
    lo, hi = 1e-8, 1.0
    if _phi_minus_one(pmf, lo) >= 0:
        raise NoRoot("phi exceeds 1 immediately to the right of 0; drift too close to zero")
    while _phi_minus_one(pmf, hi) <= 0:
        lo, hi = hi, 2 * hi
        if hi > 1e6:
            raise NoRoot("failed to bracket the root of phi(t) = 1")
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        if _phi_minus_one(pmf, mid) > 0:
            hi = mid
        else:
            lo = mid
    lam = 0.5 * (lo + hi)
    d1, _ = mgf_derivatives(pmf, lam)
    polished = lam - _phi_minus_one(pmf, lam) / float(d1)
    if abs(_phi_minus_one(pmf, polished)) <= abs(_phi_minus_one(pmf, lam)):
        lam = polished
    return float(lam)


def _psi(pmf, lam, u):
    u = np.asarray(u, dtype=np.float64)
    val = -np.log(mgf(pmf, lam * (1.0 - u))) / lam
    # phi <= 1 on [0, lam] by convexity; endpoints are exactly zero
    val = np.where((u == 0.0) | (u == 1.0), 0.0, np.maximum(val, 0.0))
    return val if val.ndim else float(val)


def _sigma2(pmf, lam, u):
    u = np.asarray(u, dtype=np.float64)
    q = tilted_probs(pmf, lam * (1.0 - u))
    k = pmf.offsets.astype(np.float64)
    mean = np.asarray(q @ k)
    # centred second moment avoids cancellation
    var = np.einsum("...k,...k->...", q, (k - mean[..., None]) ** 2)
    return var if var.ndim else float(var)


# ---------------------------------------------------------------------------
# profile


@dataclass(frozen=True, eq=False)
class CramerProfile:
    """All analytic quantities derived from one increment law.

    ``V`` is the area variance entry of the unit-time covariance and
    ``V_cond`` the conditional variance of the area coordinate given a zero
    position coordinate; ``delta2`` is the duration variance constant built
    from ``V_cond``.
    """

    pmf: LatticePMF
    lam: float
    I: float
    theta: float
    V: float
    V_cond: float
    delta2: float
    u_grid: np.ndarray = field(repr=False)
    psi_grid: np.ndarray = field(repr=False)
    sigma2_grid: np.ndarray = field(repr=False)
    quadrature_tol: float = 1e-10
    I_error: float = 0.0

    @cached_property
    def kernel(self) -> "GaussianBridgeKernel":
        return GaussianBridgeKernel(self)

    @cached_property
    def gap_sup(self) -> float:
        """sup_n |g(n)| over n = 1..4096; g(1) = lam I dominates for the families studied."""
        return float(max(abs(euler_gap(self, n)) for n in range(1, 4097)))

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "I": self.I,
            "theta": self.theta,
            "V": self.V,
            "V_cond": self.V_cond,
            "delta2": self.delta2,
            "quadrature_tol": self.quadrature_tol,
            "I_error_estimate": self.I_error,
        }


def cramer_profile(pmf: LatticePMF, quadrature_tol: float = 1e-10, grid_size: int = 257) -> CramerProfile:
    """Compute the full analytic profile of ``pmf``."""
    lam = cramer_root(pmf)
    I, I_err = adaptive_simpson(lambda u: _psi(pmf, lam, u), 0.0, 1.0, tol=quadrature_tol)
    theta = 2 * lam * math.sqrt(I)
    u = np.linspace(0.0, 1.0, grid_size)
    psi_grid = _psi(pmf, lam, u)
    sig_grid = _sigma2(pmf, lam, u)
    for arr in (u, psi_grid, sig_grid):
        arr.setflags(write=False)
    s11, s12, s22 = _cov_entries(pmf, lam, 1.0, quadrature_tol, reverse=False)
    det = s11 * s22 - s12 * s12
    if det <= 0:
        raise SingularCovariance(f"unit-time covariance has determinant {det!r}")
    v_cond = det / s11
    delta2 = 1.0 / (2 * I ** 1.5 * (lam + 2 * I / v_cond))
    return CramerProfile(
        pmf=pmf, lam=lam, I=I, theta=theta, V=s22, V_cond=v_cond, delta2=delta2,
        u_grid=u, psi_grid=psi_grid, sigma2_grid=sig_grid,
        quadrature_tol=quadrature_tol, I_error=I_err,
    )


def psi(profile: CramerProfile, u):
    """psi(u) = -log(phi(lam (1 - u))) / lam."""
    return _psi(profile.pmf, profile.lam, u)


def area_rate(profile: CramerProfile) -> tuple[float, float]:
    """Return ``(I, theta)``."""
    return profile.I, profile.theta


def sigma2(profile: CramerProfile, u):
    """Variance of the increment law tilted at lam (1 - u)."""
    return _sigma2(profile.pmf, profile.lam, u)


# ---------------------------------------------------------------------------
# Gaussian kernel of (position, area)


def _cov_entries(pmf, lam, t, tol, reverse):
    if reverse:
        lo, hi = 1.0 - t, 1.0
        weight = lambda u: t - 1.0 + u  # noqa: E731
    else:
        lo, hi = 0.0, t
        weight = lambda u: t - u  # noqa: E731
    s = lambda u: _sigma2(pmf, lam, u)  # noqa: E731
    s11, _ = adaptive_simpson(s, lo, hi, tol=tol)
    s12, _ = adaptive_simpson(lambda u: s(u) * weight(u), lo, hi, tol=tol)
    s22, _ = adaptive_simpson(lambda u: s(u) * weight(u) ** 2, lo, hi, tol=tol)
    return s11, s12, s22


class GaussianBridgeKernel:
    """Covariances and densities of the limiting Gaussian (position, area) pair.

    The forward covariance at time ``t`` integrates sigma2 against the weights
    ``1, (t - u), (t - u)^2`` over ``[0, t]``; the reversed-time covariance uses
    ``(t - 1 + u)`` over ``[1 - t, 1]``. Matrices are cached per ``t``.
    """

    def __init__(self, profile: CramerProfile):
        self.profile = profile
        self._cache: dict = {}

    def _matrix(self, t: float, reverse: bool) -> np.ndarray:
        if not 0.0 < t <= 1.0:
            raise ValueError(f"t must lie in (0, 1], got {t!r}")
        key = (float(t), reverse)
        if key not in self._cache:
            p = self.profile
            s11, s12, s22 = _cov_entries(p.pmf, p.lam, float(t), p.quadrature_tol * 1e-2, reverse)
            mat = np.array([[s11, s12], [s12, s22]])
            mat.setflags(write=False)
            self._cache[key] = mat
        return self._cache[key]

    def covariance(self, t: float) -> np.ndarray:
        return self._matrix(t, reverse=False)

    def reversed_covariance(self, t: float) -> np.ndarray:
        return self._matrix(t, reverse=True)

    def density(self, t: float, x, y, reverse: bool = False):
        """Centred bivariate normal density with covariance Sigma_t (or its reversal)."""
        cov = self._matrix(t, reverse)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
        if not det > 0:
            raise SingularCovariance(f"covariance at t={t} has determinant {det!r}")
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        quad = (cov[1, 1] * x * x - 2 * cov[0, 1] * x * y + cov[0, 0] * y * y) / det
        val = np.exp(-0.5 * quad) / (2 * math.pi * math.sqrt(det))
        return val if val.ndim else float(val)

    @property
    def conditional_area_variance(self) -> float:
        """Variance of the area coordinate at t = 1 given position 0."""
        return self.profile.V_cond

    def endpoint_density(self, z):
        """f_1(0, z), the unit-time density at zero position."""
        return self.density(1.0, 0.0, z)


def covariance_matrix(kernel: GaussianBridgeKernel, t: float) -> np.ndarray:
    return kernel.covariance(t)


def reversed_kernel(kernel: GaussianBridgeKernel, t: float) -> np.ndarray:
    return kernel.reversed_covariance(t)


def bridge_density(kernel: GaussianBridgeKernel, t: float, x, y):
    return kernel.density(t, x, y)


# ---------------------------------------------------------------------------
# product gap, saddle and the Chebyshev-type bound


def euler_gap(profile: CramerProfile, n: int, precision: str = "double") -> float:
    """g(n) = sum_{j=1}^n log phi(u_{n,j}) + lam I n, which is O(1/n).

    ``precision="extended"`` evaluates the sum with 40-digit mpmath arithmetic
    (``lam`` and ``I`` are taken as exact inputs) as an escalation oracle.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lam, I, pmf = profile.lam, profile.I, profile.pmf
    if precision == "double":
        u = lam * np.arange(n, 0, -1) / n
        return math.fsum(np.log(mgf(pmf, u))) + lam * I * n
    if precision == "extended":
        import mpmath

        with mpmath.workdps(40):
            lam_m = mpmath.mpf(lam)
            terms = []
            for j in range(1, n + 1):
                u = lam_m * (n - j + 1) / n
                terms.append(mpmath.log(mpmath.fsum(
                    mpmath.mpf(float(p)) * mpmath.exp(u * int(k)) for k, p in pmf.entries)))
            return float(mpmath.fsum(terms) + lam_m * mpmath.mpf(I) * n)
    raise ValueError(f"unknown precision {precision!r}")


class Saddle(NamedTuple):
    t0: float
    n_minus: int
    n_plus: int


def saddle(profile: CramerProfile, x: float) -> Saddle:
    """Minimiser t0 = sqrt(x / I) of lam x / t + lam I t and its integer neighbours."""
    if not x > 0:
        raise ValueError("x must be positive")
    t0 = math.sqrt(x / profile.I)
    n_minus = math.floor(t0)
    return Saddle(t0, n_minus, n_minus + 1)


@dataclass(frozen=True)
class ChebyshevBound:
    """Upper bound for P(A >= x) and its fitted closed-form envelope."""

    x: float
    value: float
    series: float
    constant: float
    terms: int
    envelope_constant: float
    envelope: float


def _cheb_series(lam, I, x, rel=1e-18):
    # terms exp(-lam x / n - lam I n) are unimodal in n with peak near sqrt(x / I)
    peak = max(1, int(round(math.sqrt(x / I))))
    head = -lam * (x / peak + I * peak)
    n_hi = peak
    while True:
        n_hi = 2 * n_hi
        expo = -lam * (x / n_hi + I * n_hi)
        if expo - head < math.log(rel):
            break
    n = np.arange(1, n_hi + 1, dtype=np.float64)
    expo = -lam * (x / n + I * n)
    keep = expo - head >= math.log(rel)
    s = math.fsum(np.exp(expo[keep]))
    # remaining terms are below e^{-lam I n}; add that geometric tail for rigour
    r = math.exp(-lam * I)
    tail = r ** (n_hi + 1) / (1 - r) + math.fsum(np.exp(expo[~keep]))
    return s + tail, int(keep.sum())


DEFAULT_ENVELOPE_GRID = np.unique(np.round(np.geomspace(1, 10_000, 240)))


def chebyshev_bound(profile: CramerProfile, x: float, envelope_grid=None) -> ChebyshevBound:
    """Exponential Chebyshev upper bound for P(A_tau >= x).

    P(A_n >= x, tau = n + 1) <= e^{-lam x / n} prod_j phi(u_{n,j}) and the
    product equals exp(-lam I n + g(n)), so summing over n gives
    ``exp(sup|g|) * sum_n exp(-lam x / n - lam I n)``. The envelope
    ``C x^{1/4} e^{-theta sqrt(x)}`` uses the largest bound-to-shape ratio
    observed on ``envelope_grid``.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    lam, I, theta = profile.lam, profile.I, profile.theta
    const = math.exp(profile.gap_sup)
    series, terms = _cheb_series(lam, I, x)
    grid = DEFAULT_ENVELOPE_GRID if envelope_grid is None else np.asarray(envelope_grid, dtype=float)
    ratios = [const * _cheb_series(lam, I, g)[0] / (g ** 0.25 * math.exp(-theta * math.sqrt(g))) for g in grid]
    c_env = max(ratios)
    return ChebyshevBound(
        x=float(x), value=const * series, series=series, constant=const, terms=terms,
        envelope_constant=c_env, envelope=c_env * x ** 0.25 * math.exp(-theta * math.sqrt(x)),
    )


def chebyshev_series_values(profile: CramerProfile, xs) -> np.ndarray:
    """Vector of bound values exp(sup|g|) * series(x) for many x."""
    const = math.exp(profile.gap_sup)
    return np.array([const * _cheb_series(profile.lam, profile.I, float(x))[0] for x in xs])


def ruin_tail_bound(pmf: LatticePMF, a: int, horizon: int) -> float:
    """Upper bound on P(U_k <= -a for some k > horizon) for a positive-drift walk U.

    Uses P(U_k <= -a) <= e^{-h a} phi(-h)^k at the h minimising phi(-h).
    """
    if pmf.mean <= 0:
        raise ValueError("ruin bound needs a positive-drift increment law")
    from scipy.optimize import minimize_scalar

    neg = pmf.negated()
    hi = 1.0
    while float(mgf_derivatives(neg, hi)[0]) <= 0:
        hi *= 2
    res = minimize_scalar(lambda h: float(mgf(neg, h)), bounds=(0.0, hi), method="bounded",
                          options={"xatol": 1e-12})
    h, rho = float(res.x), float(res.fun)
    return math.exp(-h * a) * rho ** (horizon + 1) / (1 - rho)


# ---------------------------------------------------------------------------
# derived constants


def delta_squared(profile: CramerProfile) -> float:
    """Duration variance constant 1 / (2 I^{3/2} (lam + 2 I / V_cond))."""
    return profile.delta2


@dataclass(frozen=True)
class ConstantAssembly:
    """Survival constants, the prefactor Q and the local constant kappa.

    ``validated`` stays ``None`` until a dynamic-programming comparison has
    been made; reports carry it so consumers can see whether the derived
    constant was checked.
    """

    q0: float
    qhat_table: tuple
    Q: float
    Q_tail_bound: float
    kappa: float
    kappa_closed_form: float
    validated: bool | None = None
    validation_gap: float | None = None

    def to_dict(self) -> dict:
        return {
            "q0": self.q0,
            "qhat": list(self.qhat_table),
            "Q": self.Q,
            "Q_tail_bound": self.Q_tail_bound,
            "kappa": self.kappa,
            "kappa_closed_form": self.kappa_closed_form,
            "status": "derived; " + ("unvalidated" if self.validated is None else
                                     ("validated" if self.validated else "validation failed")),
            "validation_gap": self.validation_gap,
        }


def assemble_constants(profile: CramerProfile, pmf: LatticePMF, q0: float, qhat_table) -> ConstantAssembly:
    """Assemble Q = q(0) sum_y qhat(y) P(X <= -y) and kappa.

    kappa = Q I^{3/4} int exp(-lam I u^2) f_1(0, -2 I u) du, computed by
    adaptive quadrature; the Gaussian closed form is reported alongside.
    ``qhat_table[i]`` is qhat(i + 1); a mapping ``{y: qhat(y)}`` is accepted too.
    """
    if isinstance(qhat_table, dict):
        ys = sorted(qhat_table)
        if ys != list(range(1, len(ys) + 1)):
            raise ValueError("qhat_table must cover y = 1..y_max without gaps")
        qhat = [float(qhat_table[y]) for y in ys]
    else:
        qhat = [float(v) for v in qhat_table]
    if not 0 < q0 <= 1:
        raise ValueError("q0 must lie in (0, 1]")
    y_max = max(0, -pmf.min_offset)
    terms = [qhat[y - 1] * float(pmf.prob_at_most(-y)) for y in range(1, min(len(qhat), y_max) + 1)]
    partial = math.fsum(terms)
    tail = math.fsum(float(pmf.prob_at_most(-y)) for y in range(len(qhat) + 1, y_max + 1))
    if tail > 0.01 * partial:
        raise TruncationTooCoarse(f"qhat series tail bound {tail:.3g} exceeds 1% of partial sum {partial:.3g}")
    Q = q0 * partial
    lam, I = profile.lam, profile.I
    kern = profile.kernel
    rate = lam * I + 2 * I * I / profile.V_cond
    half = math.sqrt(60.0 / rate)
    integral, _ = adaptive_simpson(
        lambda u: math.exp(-lam * I * u * u) * kern.endpoint_density(-2 * I * u), -half, half, tol=1e-13)
    f00 = kern.endpoint_density(0.0)
    kappa = Q * I ** 0.75 * integral
    kappa_cf = Q * I ** 0.75 * f00 * math.sqrt(math.pi / rate)
    return ConstantAssembly(q0=float(q0), qhat_table=tuple(qhat), Q=Q, Q_tail_bound=q0 * tail,
                            kappa=kappa, kappa_closed_form=kappa_cf)
