"""Convergence diagnostics that compare exact tables with the limit theorems."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .analytics import CramerProfile, adaptive_simpson, chebyshev_series_values, psi
from .exact import (ExcursionTable, area_tails, conditional_tau, duration_law, excursion_law,
                    tilted_layer)
from .increments import LatticePMF
from .simulate import conditioned_excursion_area


@dataclass(frozen=True, eq=False)
class ConvergenceTrace:
    """A statistic along a strictly increasing grid next to its target.

    ``mode`` fixes how the per-point verdict is computed:
    ``"relative"`` checks ``|value / target - 1| <= tolerance``,
    ``"upper"`` checks ``value <= target`` (the target is a bound) and
    ``"info"`` records values without a per-point verdict.
    ``summary`` holds trace-level statistics and ``passed`` the trace verdict.
    """

    name: str
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    target: np.ndarray = field(repr=False)
    tolerance: float
    mode: str = "relative"
    summary: dict = field(default_factory=dict)
    passed: bool | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("trace grid must be strictly increasing")
        values = np.asarray(self.values, dtype=np.float64)
        target = np.broadcast_to(np.asarray(self.target, dtype=np.float64), values.shape)
        if values.shape != grid.shape:
            raise ValueError("values and grid must have equal length")
        if self.mode not in ("relative", "upper", "info"):
            raise ValueError(f"unknown verdict mode {self.mode!r}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "target", target)

    @property
    def gap(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(self.values - self.target) / np.abs(self.target)

    @property
    def verdicts(self) -> np.ndarray:
        if self.mode == "relative":
            return self.gap <= self.tolerance
        if self.mode == "upper":
            return self.values <= self.target
        return np.ones(self.grid.shape, dtype=bool)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "statistic", "target", "gap", "verdict"])
            for x, v, t, g, ok in zip(self.grid, self.values, self.target, self.gap, self.verdicts):
                w.writerow([int(x) if float(x).is_integer() else repr(float(x)), repr(float(v)),
                            repr(float(t)), repr(float(g)), int(bool(ok))])
        return path

    def to_dict(self) -> dict:
        return {"name": self.name, "tolerance": self.tolerance, "mode": self.mode,
                "passed": self.passed, "summary": self.summary}


def _top_decade(grid: np.ndarray, top: float) -> np.ndarray:
    return grid >= top / 10


def kappa_fit(table: ExcursionTable, profile: CramerProfile, tolerance: float = 0.05) -> ConvergenceTrace:
    """kappa_hat(x) = P(A_tau = x) x^{3/4} e^{theta sqrt(x)} along x = 1..a_max.

    The trace verdict is the relative variation (max - min) / mean over the
    top decade ``[a_max / 10, a_max]``; the target is the top-decade mean.
    """
    x = np.arange(1, table.a_max + 1)
    marg = np.asarray(table.marginal[1:], dtype=np.float64)
    keep = marg > 0
    x, marg = x[keep], marg[keep]
    kh = marg * x ** 0.75 * np.exp(profile.theta * np.sqrt(x))
    top = _top_decade(x, table.a_max)
    mean = float(kh[top].mean())
    variation = float((kh[top].max() - kh[top].min()) / mean)
    # a + b / sqrt(x) extrapolation on the top decade, reported for information
    design = np.column_stack([np.ones(top.sum()), 1 / np.sqrt(x[top])])
    coef, *_ = np.linalg.lstsq(design, kh[top], rcond=None)
    summary = {
        "top_decade": [int(x[top][0]), int(x[top][-1])],
        "relative_variation": variation,
        "max_over_min": float(kh[top].max() / kh[top].min()),
        "max_deviation_from_mean": float(np.max(np.abs(kh[top] / mean - 1))),
        "kappa_top": float(kh[-1]),
        "kappa_mean_top_decade": mean,
        "kappa_extrapolated": float(coef[0]),
    }
    return ConvergenceTrace("kappa_hat", x, kh, mean, tolerance, "relative", summary, variation <= tolerance)


def tail_ratio(table: ExcursionTable, profile: CramerProfile, tolerance: float = 0.05,
               kappa_tolerance: float = 0.10, kappa: float | None = None):
    """Ratio P(A > x) / ((2 / theta) sqrt(x) P(A = x)) and the closed-form tail check.

    Returns ``(ratio_trace, closed_form_trace)``. The closed form is
    ``(2 kappa / theta) x^{-1/4} e^{-theta sqrt(x)}`` with ``kappa`` defaulting
    to kappa_hat at the top of the grid.
    """
    tails = area_tails(table)
    x = np.arange(1, table.a_max + 1)
    marg = np.asarray(table.marginal[1:], dtype=np.float64)
    keep = marg > 0
    x, marg = x[keep], marg[keep]
    above = tails[x + 1]
    ratio = above / ((2 / profile.theta) * np.sqrt(x) * marg)
    top_ratio = float(ratio[-1])
    r_trace = ConvergenceTrace("tail_ratio", x, ratio, 1.0, tolerance, "relative",
                               {"x_top": int(x[-1]), "ratio_top": top_ratio},
                               abs(top_ratio - 1) <= tolerance)
    if kappa is None:
        kappa = float(marg[-1] * x[-1] ** 0.75 * math.exp(profile.theta * math.sqrt(x[-1])))
    closed = (2 * kappa / profile.theta) * x ** -0.25 * np.exp(-profile.theta * np.sqrt(x))
    cf_top = float(above[-1] / closed[-1])
    c_trace = ConvergenceTrace("tail_closed_form", x, above, closed, kappa_tolerance, "relative",
                               {"kappa": kappa, "ratio_top": cf_top}, abs(cf_top - 1) <= kappa_tolerance)
    return r_trace, c_trace


def cheb_check(table: ExcursionTable, profile: CramerProfile, x_min: int = 50, ratio_spread: float = 2.0):
    """Chebyshev bound against the exact tail on ``x_min..a_max``.

    Returns ``(bound_trace, gap_trace)``. The first trace has per-point
    verdict exact upper bracket <= bound with no tolerance. The second records
    (exact / bound) sqrt(x), whose max / min over the grid must stay below
    ``ratio_spread``.
    """
    tails = area_tails(table)
    x = np.arange(x_min, table.a_max + 1)
    unresolved = table.overflow["s"] + table.alive_mass_at_caps
    exact_upper = tails[x] + unresolved
    bound = chebyshev_series_values(profile, x)
    b_trace = ConvergenceTrace("chebyshev_bound", x, exact_upper, bound, 0.0, "upper",
                               {"violations": int(np.sum(exact_upper > bound)),
                                "max_exact_over_bound": float(np.max(exact_upper / bound))},
                               bool(np.all(exact_upper <= bound)))
    scaled = tails[x] / bound * np.sqrt(x)
    spread = float(scaled.max() / scaled.min())
    g_trace = ConvergenceTrace("chebyshev_gap_sqrt_x", x, scaled, np.nan, ratio_spread, "info",
                               {"min": float(scaled.min()), "max": float(scaled.max()), "max_over_min": spread},
                               spread <= ratio_spread)
    return b_trace, g_trace


@dataclass(frozen=True)
class DurationCLT:
    x: int
    tv: float
    sup_norm: float
    mean: float
    variance: float
    target_mean: float
    target_variance: float
    trace: ConvergenceTrace = field(repr=False)

    @property
    def mean_gap(self) -> float:
        return abs(self.mean / self.target_mean - 1)


def duration_clt(table: ExcursionTable, profile: CramerProfile, x: int) -> DurationCLT:
    """Compare P(tau = k | A_tau = x) with a Gaussian of mean sqrt(x / I), variance Delta^2 sqrt(x).

    The total-variation distance uses the Gaussian integrated over unit
    cells around each integer; the sup-norm uses the scaled density as in the
    local statement, ``sup_k x^{1/4} |P(tau = k | A = x) - density(k)|``.
    """
    p = conditional_tau(table, x)
    k = np.arange(1, p.size + 1)
    mu = math.sqrt(x / profile.I)
    var = profile.delta2 * math.sqrt(x)
    sd = math.sqrt(var)
    cells = norm.cdf((k + 0.5 - mu) / sd) - norm.cdf((k - 0.5 - mu) / sd)
    outside = 1.0 - float(cells.sum())
    tv = 0.5 * float(np.abs(p - cells).sum()) + 0.5 * max(outside, 0.0)
    dens = np.exp(-(k - mu) ** 2 / (2 * var)) / math.sqrt(2 * math.pi * var)
    sup = float(x ** 0.25 * np.max(np.abs(p - dens)))
    mean = float((k * p).sum())
    variance = float(((k - mean) ** 2 * p).sum())
    trace = ConvergenceTrace(f"conditional_tau_x{x}", k, p, cells, np.nan, "info", {"tv": tv})
    return DurationCLT(x, tv, sup, mean, variance, mu, var, trace)


def duration_clt_trace(table: ExcursionTable, profile: CramerProfile, xs, tv_tolerance: float = 0.05,
                       mean_tolerance: float = 0.02):
    """TV distance and conditional-mean ratio along ``xs``; returns ``(tv_trace, mean_trace)``."""
    res = [duration_clt(table, profile, int(x)) for x in xs]
    grid = np.array([r.x for r in res])
    tv = np.array([r.tv for r in res])
    tv_trace = ConvergenceTrace("duration_tv", grid, tv, tv_tolerance, tv_tolerance, "upper",
                                {"tv_top": float(tv[-1]), "decreasing": bool(np.all(np.diff(tv) < 0)),
                                 "var_over_sqrt_x_top": res[-1].variance / math.sqrt(res[-1].x),
                                 "delta2": profile.delta2},
                                bool(tv[-1] <= tv_tolerance))
    means = np.array([r.mean for r in res])
    targets = np.array([r.target_mean for r in res])
    mean_trace = ConvergenceTrace("duration_mean", grid, means, targets, mean_tolerance, "relative",
                                  {"mean_top": float(means[-1]), "target_top": float(targets[-1]),
                                   "offset_top": float(means[-1] - targets[-1])},
                                  bool(abs(means[-1] / targets[-1] - 1) <= mean_tolerance))
    return tv_trace, mean_trace


@dataclass(frozen=True)
class LLTResult:
    """Local limit comparison at horizon ``n`` and time fraction ``t``.

    ``peak_ratio`` compares the largest scaled probability with the
    largest value of the (scaled) limiting density.
    """

    n: int
    t: float
    mode: str
    sup_error: float
    peak_ratio: float
    constant: float


def llt_error(pmf: LatticePMF, profile: CramerProfile, n: int, t: float = 0.5, mode: str = "free",
              barrier: int | None = None, endpoint: int | None = None, q: float | None = None,
              qhat: float | None = None, layer=None) -> LLTResult:
    """sup-norm distance between n^2 P^(...) and the Gaussian local limit.

    ``mode="free"``: n^2 P^(S_m = s, A_m = a) against f_t at standardised
    arguments, m = floor(n t). ``mode="barrier"``: the same with the
    walk killed below ``-barrier`` against q f_t. ``mode="bridge"``:
    n^2 P^(A_n = y, S_n = endpoint, tau > n) against q qhat f_1(0, (y - n^2 I) / n^{3/2}).
    A precomputed ``layer`` (from :func:`tilted_layer` with matching arguments)
    can be passed to share it between endpoints.
    """
    kern = profile.kernel
    if mode in ("free", "barrier"):
        if mode == "barrier" and (barrier is None or q is None):
            raise ValueError("barrier mode needs the barrier and q(barrier)")
        if layer is None:
            layer = tilted_layer(pmf, n, t, barrier=barrier if mode == "barrier" else None, lam=profile.lam)
        int_psi, _ = adaptive_simpson(lambda u: psi(profile, u), 0.0, t, tol=1e-13)
        xs = (layer.s_values - n * float(psi(profile, t))) / math.sqrt(n)
        ys = (layer.a_values - n * n * int_psi) / n ** 1.5
        dens = kern.density(t, xs[:, None], ys[None, :])
        const = 1.0 if mode == "free" else float(q)
        scaled = n * n * np.asarray(layer.table)
        sup = float(np.max(np.abs(scaled - const * dens)))
        peak = float(scaled.max() / (const * kern.density(t, 0.0, 0.0)))
        return LLTResult(n, t, mode, sup, peak, const)
    if mode == "bridge":
        if endpoint is None or q is None or qhat is None:
            raise ValueError("bridge mode needs endpoint, q(0) and qhat(endpoint)")
        if layer is None:
            layer = tilted_layer(pmf, n, 1.0, barrier=0, lam=profile.lam)
        i = endpoint - layer.s_lo
        row = n * n * np.asarray(layer.table[i])
        z = (layer.a_values - n * n * profile.I) / n ** 1.5
        const = float(q) * float(qhat)
        dens = kern.endpoint_density(z)
        sup = float(np.max(np.abs(row - const * dens)))
        peak = float(row.max() / (const * kern.endpoint_density(0.0)))
        return LLTResult(n, 1.0, mode, sup, peak, const)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class ZeroMeanResult:
    """Driftless tail check x^{1/3} P(A > x) against 2 C0 sigma^{1/3} E[Y^{1/3}]."""

    c0: float
    c0_trace: ConvergenceTrace = field(repr=False)
    integral: float
    integral_se: float
    prediction: float
    prediction_ci: tuple
    dp_value: float
    dp_x: int
    dp_trace: ConvergenceTrace = field(repr=False)
    tolerance: float
    conditioned_n: int
    samples: int

    @property
    def interval(self) -> tuple[float, float]:
        lo, hi = self.prediction_ci
        return lo * (1 - self.tolerance), hi * (1 + self.tolerance)

    @property
    def passed(self) -> bool:
        lo, hi = self.interval
        return lo <= self.dp_value <= hi

    def to_dict(self) -> dict:
        return {"C0": self.c0, "integral": self.integral, "integral_se": self.integral_se,
                "prediction": self.prediction, "prediction_ci": list(self.prediction_ci),
                "interval": list(self.interval), "dp_x": self.dp_x, "dp_value": self.dp_value,
                "conditioned_n": self.conditioned_n, "samples": self.samples, "passed": self.passed}


def fit_c0(pmf_zero_mean: LatticePMF, n_max: int = 4000) -> ConvergenceTrace:
    """n^{3/2} P(tau = n) for n = 1..n_max; the constant is the top-quartile average."""
    law = duration_law(pmf_zero_mean, n_max)
    n = np.arange(1, n_max + 1)
    vals = n ** 1.5 * law[1:]
    top = n >= 0.75 * n_max
    c0 = float(vals[top].mean())
    spread = float((vals[top].max() - vals[top].min()) / c0)
    return ConvergenceTrace("c0_fit", n, vals, c0, 0.01, "info",
                            {"C0": c0, "top_quartile_relative_spread": spread}, None)


def zero_mean_check(pmf_zero_mean: LatticePMF, a_max: int = 4000, n_max: int = 4000, conditioned_n: int = 400,
                    samples: int = 20000, seed: int = 0, tolerance: float = 0.10, z: float = 1.959963984540054,
                    method: str = "guided", table: ExcursionTable | None = None) -> ZeroMeanResult:
    """Full driftless pipeline: C0 from the duration law, the area law by simulation, the tail by DP."""
    pmf = pmf_zero_mean
    c0_trace = fit_c0(pmf, n_max)
    c0 = c0_trace.summary["C0"]
    sample = conditioned_excursion_area(pmf, conditioned_n, samples, seed, method=method)
    cube = np.cbrt(sample.values)
    integral = sample.singular_integral()
    integral_se = 3 * float(cube.std(ddof=1)) / math.sqrt(cube.size)
    sigma = math.sqrt(pmf.variance)
    factor = 2 * c0 * sigma ** (1 / 3) / 3
    prediction = factor * integral
    ci = (factor * (integral - z * integral_se), factor * (integral + z * integral_se))
    if table is None:
        table = excursion_law(pmf, a_max)
    tails = area_tails(table)
    x = np.arange(1, table.a_max + 1)
    scaled = x ** (1 / 3) * tails[x + 1]
    dp_trace = ConvergenceTrace("zero_mean_tail", x, scaled, prediction, tolerance, "relative",
                                {"top": float(scaled[-1])}, None)
    return ZeroMeanResult(c0, c0_trace, integral, integral_se, prediction, ci, float(scaled[-1]),
                          int(x[-1]), dp_trace, tolerance, conditioned_n, samples)
