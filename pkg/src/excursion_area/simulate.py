"""Monte Carlo estimators: naive excursions, tilted importance sampling,
survival constants and conditioned excursions of a driftless walk.

Randomness is drawn from counter-based Philox streams keyed by
``(seed, stream_id, batch_id)``. Every estimator splits its replicas into
fixed-size batches, each with its own stream, so results do not depend on
how batches are scheduled. Replica scores are i.i.d., which makes every
:class:`EstimatorReport` a plain sample mean that merges exactly.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache, partial

import numpy as np

from .analytics import CramerProfile, _psi, ruin_tail_bound
from .errors import HorizonTooShort, RejectionTooSlow, ValidationError, WindowTooNarrow
from .exact import duration_law
from .increments import LatticePMF, mgf, mgf_derivatives, tilt_schedule, tilted_probs

Z_95 = 1.959963984540054
DEFAULT_BATCH = 4096


def replica_rng(seed: int, stream_id: int, batch_id: int) -> np.random.Generator:
    """Independent generator for one batch of one stream."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream_id, batch_id))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class EstimatorReport:
    """Sample-mean estimate over i.i.d. replica scores.

    ``m2`` is the sum of squared deviations from the mean, kept so that two
    reports can be merged into the report of the pooled sample.
    """

    estimate: float
    std_error: float
    replicas: int
    seed: int
    stream_count: int
    method: str
    m2: float = 0.0
    z: float = Z_95
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate - self.z * self.std_error, self.estimate + self.z * self.std_error

    @classmethod
    def from_scores(cls, scores, seed: int, method: str, stream_count: int = 1, **extras) -> "EstimatorReport":
        scores = np.asarray(scores, dtype=np.float64)
        n = scores.size
        mean = float(scores.mean()) if n else float("nan")
        m2 = float(((scores - mean) ** 2).sum()) if n else 0.0
        se = math.sqrt(m2 / (n - 1) / n) if n > 1 else float("inf")
        return cls(mean, se, n, seed, stream_count, method, m2, extras=dict(extras))

    def merge(self, other: "EstimatorReport") -> "EstimatorReport":
        """Pooled report of the union of both replica sets (Chan's update)."""
        if self.method != other.method:
            raise ValueError("cannot merge reports of different estimators")
        n = self.replicas + other.replicas
        delta = other.estimate - self.estimate
        mean = self.estimate + delta * other.replicas / n
        m2 = self.m2 + other.m2 + delta * delta * self.replicas * other.replicas / n
        se = math.sqrt(m2 / (n - 1) / n) if n > 1 else float("inf")
        return replace(self, estimate=mean, std_error=se, replicas=n, m2=m2,
                       stream_count=self.stream_count + other.stream_count)

    def to_dict(self) -> dict:
        lo, hi = self.ci
        out = {
            "method": self.method,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci": [lo, hi],
            "z": self.z,
            "replicas": self.replicas,
            "seed": self.seed,
            "stream_count": self.stream_count,
        }
        if self.extras:
            out["extras"] = self.extras
        return out


def _batched(work, total: int, seed: int, stream_id: int, batch_size: int, workers: int = 1) -> np.ndarray:
    """Run ``work(rng, count)`` over fixed batches and concatenate in batch order."""
    sizes = [batch_size] * (total // batch_size)
    if total % batch_size:
        sizes.append(total % batch_size)
    jobs = [(seed, stream_id, b, c) for b, c in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(partial(_run_job, work), jobs))
    else:
        parts = [_run_job(work, job) for job in jobs]
    return np.concatenate(parts, axis=0) if parts else np.empty(0)


def _run_job(work, job):
    seed, stream_id, batch_id, count = job
    return work(replica_rng(seed, stream_id, batch_id), count)


def _cdf(probs: np.ndarray) -> np.ndarray:
    c = np.cumsum(probs, axis=-1)
    c[..., -1] = 1.0
    return c


def _draw(rng, pmf: LatticePMF, cdf: np.ndarray, shape) -> np.ndarray:
    idx = np.searchsorted(cdf, rng.random(shape), side="right")
    return pmf.offsets[np.minimum(idx, cdf.size - 1)]


def _draw_steps(rng, pmf: LatticePMF, cdfs: np.ndarray, count: int) -> np.ndarray:
    """Draw ``count`` paths whose step ``j`` uses ``cdfs[j]``; shape (count, len(cdfs))."""
    u = rng.random((count, cdfs.shape[0]))
    idx = (u[:, :, None] >= cdfs[None, :, :-1]).sum(axis=-1)
    return pmf.offsets[idx]


# ---------------------------------------------------------------------------
# naive excursions


def sample_excursions(pmf: LatticePMF, count: int, rng, max_steps: int = 10**6):
    """Simulate ``count`` excursions; returns arrays ``(area, tau)``."""
    cdf = _cdf(pmf.probs)
    height = np.zeros(count, dtype=np.int64)
    area = np.zeros(count, dtype=np.int64)
    tau = np.zeros(count, dtype=np.int64)
    active = np.arange(count)
    step = 0
    while active.size:
        step += 1
        if step > max_steps:
            raise HorizonTooShort(f"{active.size} excursions still running after {max_steps} steps")
        height[active] += _draw(rng, pmf, cdf, active.size)
        done = height[active] <= 0
        tau[active[done]] = step
        active = active[~done]
        area[active] += height[active]
    return area, tau


def _naive_scores(pmf, local, tail, mean_tau, rng, count):
    area, tau = sample_excursions(pmf, count, rng)
    cols = [area == x for x in local] + [area >= x for x in tail]
    if mean_tau:
        cols.append(tau)
    return np.column_stack(cols).astype(np.float64) if cols else np.empty((count, 0))


def naive_excursion(pmf: LatticePMF, N: int, seed: int, local=(0,), tail=(), mean_tau: bool = True,
                    batch_size: int = 65536, workers: int = 1) -> dict:
    """Direct simulation estimates of P(A = x), P(A >= x) and E[tau].

    Returns a mapping from a functional label, e.g. ``"P(A=0)"``, to its report.
    """
    if pmf.mean >= 0:
        raise ValidationError("naive excursions need a negative-drift law")
    local, tail = tuple(int(x) for x in local), tuple(int(x) for x in tail)
    work = partial(_naive_scores, pmf, local, tail, mean_tau)
    scores = _batched(work, N, seed, 0, batch_size, workers)
    labels = [f"P(A={x})" for x in local] + [f"P(A>={x})" for x in tail] + (["E[tau]"] if mean_tau else [])
    streams = math.ceil(N / batch_size)
    return {lab: EstimatorReport.from_scores(scores[:, i], seed, "naive", streams) for i, lab in enumerate(labels)}


# ---------------------------------------------------------------------------
# tilted paths


@dataclass(frozen=True)
class PathSample:
    """A batch of tilted paths of horizon ``n`` with their log-domain weights.

    ``tau`` is the first index with a non-positive height, or 0 if the path
    stays positive up to ``n``.
    """

    n: int
    lam: float
    increments: np.ndarray = field(repr=False)
    log_weight: np.ndarray = field(repr=False)

    @property
    def heights(self) -> np.ndarray:
        return np.cumsum(self.increments, axis=1)

    @property
    def area(self) -> np.ndarray:
        return self.heights.sum(axis=1)

    @property
    def tau(self) -> np.ndarray:
        nonpos = self.heights <= 0
        return np.where(nonpos.any(axis=1), nonpos.argmax(axis=1) + 1, 0)

    def recompute_log_weight(self, pmf: LatticePMF) -> np.ndarray:
        u = tilt_schedule(self.lam, self.n).values
        return -self.lam * self.area / self.n + math.fsum(np.log(mgf(pmf, u)))


def sample_tilted_paths(pmf: LatticePMF, lam: float, n: int, count: int, rng) -> PathSample:
    """Paths whose step j follows the law tilted at lam (n - j + 1) / n."""
    u = tilt_schedule(lam, n).values
    inc = _draw_steps(rng, pmf, _cdf(tilted_probs(pmf, u)), count)
    log_prod = math.fsum(np.log(mgf(pmf, u)))
    area = np.cumsum(inc, axis=1).sum(axis=1)
    return PathSample(n, lam, inc, -lam * area / n + log_prod)


def flln_sup_deviation(pmf: LatticePMF, profile: CramerProfile, n: int, count: int, seed: int) -> np.ndarray:
    """sup_k |S_k / n - psi(k / n)| for ``count`` tilted paths of horizon ``n``."""
    rng = replica_rng(seed, 7, n)
    paths = sample_tilted_paths(pmf, profile.lam, n, count, rng)
    fluid = _psi(pmf, profile.lam, np.arange(1, n + 1) / n)
    return np.abs(paths.heights / n - fluid[None, :]).max(axis=1)


# ---------------------------------------------------------------------------
# importance sampling with an exactly integrated suffix


@dataclass(frozen=True, eq=False)
class _Horizon:
    n: int
    tail_steps: int
    cdfs: np.ndarray           # laws of the sampled prefix steps
    log_prod: float            # sum_j log phi(u_{n,j})
    table: np.ndarray          # rows: height 0..s_cap; columns: residual r_lo..r_hi
    r_lo: int


def _suffix_table(pmf: LatticePMF, laws: np.ndarray):
    """Exact value-to-go over the last ``L`` steps.

    ``V[s, r - r_lo]`` is the probability, from height ``s`` before the
    suffix, that the suffix stays positive, ends absorbed by the next step,
    and produces sum_i (L - i + 1) X_i = r.
    """
    L = laws.shape[0]
    kmin, kmax = pmf.min_offset, pmf.max_offset
    tri = L * (L + 1) // 2
    r_lo, r_hi = min(0, kmin * tri), max(0, kmax * tri)
    s_cap = (L + 1) * max(1, -kmin)
    width = r_hi - r_lo + 1
    V = np.zeros((s_cap + 1, width))
    V[1:, -r_lo] = pmf.prob_at_most(-np.arange(1, s_cap + 1))
    for i in range(L, 0, -1):
        c = L - i + 1
        nv = np.zeros_like(V)
        for k, q in zip(pmf.offsets, laws[i - 1]):
            k = int(k)
            shift = c * k
            # nv[s, r] += q * V[s + k, r - shift]
            rs = slice(max(0, -k), min(s_cap + 1, s_cap + 1 - k))
            src_rows = slice(rs.start + k, rs.stop + k)
            if rs.stop <= rs.start:
                continue
            if shift >= 0:
                nv[rs, shift:] += q * V[src_rows, :width - shift]
            else:
                nv[rs, :width + shift] += q * V[src_rows, -shift:]
        nv[0] = 0
        V = nv
    return V, r_lo


@lru_cache(maxsize=4096)
def _horizon_plan(pmf: LatticePMF, lam: float, n: int, tail_steps: int, tail_weight: bool) -> _Horizon:
    u = tilt_schedule(lam, n).values
    laws = tilted_probs(pmf, u)
    L = min(tail_steps, n // 2)
    m = n - L
    V, r_lo = _suffix_table(pmf, laws[m:])
    if tail_weight:
        # H(s, r0) = sum_{r >= r0} e^{-lam r / n} V(s, r)
        r = np.arange(r_lo, r_lo + V.shape[1])
        W = V * np.exp(-lam * r / n)[None, :]
        V = np.cumsum(W[:, ::-1], axis=1)[:, ::-1]
    V.setflags(write=False)
    return _Horizon(n, L, _cdf(laws[:m]), math.fsum(np.log(mgf(pmf, u))), V, r_lo)


def _horizon_bounds(profile: CramerProfile, x: float, ns: np.ndarray) -> np.ndarray:
    """Rigorous per-horizon bound on P(A_n >= x, tau = n + 1).

    Minimum of the tilted Chebyshev bound e^{-lam x / n} prod phi(u_{n,j}) and
    the Chernoff bound P(S_n >= 1) <= e^{-h} phi(h)^n at the minimiser h of phi.
    """
    pmf, lam = profile.pmf, profile.lam
    h, rho = _mgf_minimum(pmf)
    out = np.empty(ns.size)
    for i, n in enumerate(ns):
        u = lam * np.arange(1, n + 1) / n
        cheb = -lam * x / n + math.fsum(np.log(mgf(pmf, u)))
        chern = -h + n * math.log(rho)
        out[i] = math.exp(min(cheb, chern))
    return out


@lru_cache(maxsize=16)
def _mgf_minimum(pmf: LatticePMF):
    lo, hi = 0.0, 1.0
    while float(mgf_derivatives(pmf, hi)[0]) <= 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(mgf_derivatives(pmf, mid)[0]) > 0:
            hi = mid
        else:
            lo = mid
    h = 0.5 * (lo + hi)
    return h, float(mgf(pmf, h))


def _min_horizon(pmf: LatticePMF, x: int) -> int:
    """Smallest n for which A_n = x is reachable with A_n <= kmax n (n + 1) / 2."""
    n = 1
    while pmf.max_offset * n * (n + 1) // 2 < x:
        n += 1
    return n


def default_window(profile: CramerProfile, x: int, kind: str = "local", rel: float = 1e-4) -> range:
    """Horizons from the first feasible one up to where the remaining bound is negligible.

    The upper end is the first ``n >= t0`` for which the summed per-horizon
    bound beyond it falls below ``rel`` times the leading-order size
    ``x^{-3/4} e^{-theta sqrt(x)}`` (local) or ``x^{-1/4} e^{-theta sqrt(x)}`` (tail).
    """
    pmf = profile.pmf
    n_lo = _min_horizon(pmf, x)
    t0 = math.sqrt(x / profile.I)
    power = 0.75 if kind == "local" else 0.25
    target = rel * x ** -power * math.exp(-profile.theta * math.sqrt(x))
    h, rho = _mgf_minimum(pmf)
    n_hi = max(n_lo, math.ceil(t0))
    # the Chernoff tail sum_{n' > n} e^{-h} rho^{n'} is geometric
    while math.exp(-h) * rho ** (n_hi + 1) / (1 - rho) > target:
        n_hi += 1
    return range(n_lo, n_hi + 1)


def _window_bracket(profile: CramerProfile, x: int, window) -> float:
    ns = np.array(sorted(window))
    n_lo, n_hi = _min_horizon(profile.pmf, x), int(ns.max())
    missing = np.setdiff1d(np.arange(n_lo, n_hi + 1), ns)
    inner = _horizon_bounds(profile, x, missing).sum() if missing.size else 0.0
    h, rho = _mgf_minimum(profile.pmf)
    # beyond n_hi: the smaller of the Chernoff geometric tail and a long explicit sum
    far = math.exp(-h) * rho ** (n_hi + 1) / (1 - rho)
    return float(inner + far)


def _is_scores(pmf, lam, x, window, tail_steps, tail, rng, count):
    total = np.zeros(count)
    for n in window:
        plan = _horizon_plan(pmf, lam, n, tail_steps, tail)
        L = plan.tail_steps
        inc = _draw_steps(rng, pmf, plan.cdfs, count)
        heights = np.cumsum(inc, axis=1)
        alive = (heights > 0).all(axis=1)
        s = heights[:, -1]
        prefix_area = heights.sum(axis=1)
        r = x - prefix_area - L * s
        j = r - plan.r_lo
        ok = alive & (s < plan.table.shape[0])
        if tail:
            j = np.clip(j, 0, None)
            ok &= j < plan.table.shape[1]
            vals = np.zeros(count)
            vals[ok] = plan.table[s[ok], j[ok]]
            logw = plan.log_prod - lam * (prefix_area + L * s) / n
            total += np.where(ok, np.exp(np.where(ok, logw, 0.0)) * vals, 0.0)
        else:
            ok &= (j >= 0) & (j < plan.table.shape[1])
            vals = np.zeros(count)
            vals[ok] = plan.table[s[ok], j[ok]]
            total += math.exp(plan.log_prod - lam * x / n) * vals
    return total


def _is_estimate(pmf, profile, x, n_window, N, seed, tail_steps, tail, batch_size, workers, check_window):
    if x == 0:
        p0 = float(pmf.prob_at_most(0))
        return EstimatorReport(p0 if not tail else 1.0, 0.0, N, seed, 0, "is-tail" if tail else "is-local",
                               extras={"window": [0, 0], "bracket": 0.0})
    window = default_window(profile, x, "tail" if tail else "local") if n_window is None else n_window
    window = sorted(int(n) for n in window)
    work = partial(_is_scores, pmf, profile.lam, x, tuple(window), tail_steps, tail)
    scores = _batched(work, N, seed, 1 if not tail else 2, batch_size, workers)
    bracket = _window_bracket(profile, x, window)
    report = EstimatorReport.from_scores(
        scores, seed, "is-tail" if tail else "is-local", math.ceil(N / batch_size),
        window=[window[0], window[-1]], horizons=len(window), bracket=bracket, tail_steps=tail_steps)
    if check_window and bracket > 0.1 * report.estimate:
        raise WindowTooNarrow(f"window bracket {bracket:.3g} exceeds 10% of the estimate {report.estimate:.3g}")
    return report


def is_local(pmf: LatticePMF, profile: CramerProfile, x: int, n_window=None, N: int = 256, seed: int = 0,
             tail_steps: int = 32, batch_size: int = 64, workers: int = 1, check_window: bool = True) -> EstimatorReport:
    """Importance-sampling estimate of P(A_tau = x).

    One replica is a bundle holding one tilted path per horizon ``n`` in the
    window; its score is sum_n e^{-lam x / n} prod phi(u_{n,j}) times the exact
    probability that the last ``min(tail_steps, n // 2)`` tilted steps keep the
    path positive, bring the area to ``x`` and are followed by absorption.
    Integrating that suffix exactly is a conditional expectation of the plain
    indicator score, so the estimator stays unbiased. The window bracket is a
    rigorous upper bound on the mass of horizons outside the window.
    """
    return _is_estimate(pmf, profile, int(x), n_window, N, seed, tail_steps, False, batch_size, workers,
                        check_window)


def is_tail(pmf: LatticePMF, profile: CramerProfile, x: int, N: int = 256, seed: int = 0, n_window=None,
            tail_steps: int = 32, batch_size: int = 64, workers: int = 1, check_window: bool = True) -> EstimatorReport:
    """Importance-sampling estimate of P(A_tau >= x), scored with weight e^{-lam A_n / n} prod phi."""
    return _is_estimate(pmf, profile, int(x), n_window, N, seed, tail_steps, True, batch_size, workers,
                        check_window)


# ---------------------------------------------------------------------------
# survival constants


def _survival_scores(pmf, a, horizon, rng, count):
    cdf = _cdf(pmf.probs)
    height = np.zeros(count, dtype=np.int64)
    alive = np.arange(count)
    for _ in range(horizon):
        if not alive.size:
            break
        height[alive] += _draw(rng, pmf, cdf, alive.size)
        alive = alive[height[alive] > -a]
    out = np.zeros(count)
    out[alive] = 1.0
    return out


def survival_q(pmf_tilted_at_lambda: LatticePMF, a: int, horizon: int, N: int, seed: int,
               batch_size: int = 16384, workers: int = 1, method: str = "survival-q") -> EstimatorReport:
    """Estimate P(min_{1<=k<=K} U_k > -a) for a walk with the given (positive-drift) increments.

    The report's ``bracket`` bounds the extra ruin probability after ``K``,
    so the infinite-horizon value lies in ``[estimate - bracket, estimate]``
    up to sampling error.
    """
    pmf = pmf_tilted_at_lambda
    if pmf.mean <= 0:
        raise ValidationError("survival estimators need a positive-drift increment law")
    work = partial(_survival_scores, pmf, int(a), int(horizon))
    scores = _batched(work, N, seed, 3 + int(a), batch_size, workers)
    bracket = ruin_tail_bound(pmf, int(a), int(horizon))
    report = EstimatorReport.from_scores(scores, seed, method, math.ceil(N / batch_size),
                                         a=int(a), horizon=int(horizon), bracket=bracket)
    if bracket > 0.01 * report.estimate:
        raise HorizonTooShort(f"ruin bracket {bracket:.3g} exceeds 1% of the estimate {report.estimate:.3g}")
    return report


def survival_qhat(pmf_negated: LatticePMF, a: int, horizon: int, N: int, seed: int,
                  batch_size: int = 16384, workers: int = 1) -> EstimatorReport:
    """Same as :func:`survival_q` for the reversed-time walk, whose increments are -X under the original law."""
    return survival_q(pmf_negated, a, horizon, N, seed + 1_000_003, batch_size, workers, method="survival-qhat")


# ---------------------------------------------------------------------------
# conditioned excursions of a driftless walk


@dataclass(frozen=True)
class ConditionedAreaSample:
    """Samples of A_n / (sigma n^{3/2}) given tau = n + 1, sorted ascending."""

    n: int
    sigma: float
    values: np.ndarray = field(repr=False)
    acceptance: float
    method: str
    seed: int

    def survival(self, y):
        """Empirical Gbar(y) = fraction of samples strictly above ``y``."""
        y = np.asarray(y, dtype=np.float64)
        return 1.0 - np.searchsorted(self.values, y, side="right") / self.values.size

    def dkw_halfwidth(self, alpha: float = 0.05) -> float:
        """Uniform confidence half-width for Gbar from the Dvoretzky-Kiefer-Wolfowitz inequality."""
        return math.sqrt(math.log(2 / alpha) / (2 * self.values.size))

    def moment(self, power: float) -> EstimatorReport:
        return EstimatorReport.from_scores(self.values ** power, self.seed, f"conditioned-moment-{power:g}")

    def singular_integral(self, refine: int | None = None) -> float:
        """int_0^inf z^{-2/3} Gbar(z) dz.

        After z = w^3 the integral is 3 int_0^inf Gbar(w^3) dw, which has no
        singularity. With ``refine`` the substituted integral is evaluated by
        the midpoint rule on ``refine`` cells up to the largest sample;
        otherwise the exact value 3 * mean(Y^{1/3}) for the empirical law is returned.
        """
        if refine is None:
            return 3.0 * float(np.mean(np.cbrt(self.values)))
        w_max = float(np.cbrt(self.values[-1]))
        w = (np.arange(refine) + 0.5) * (w_max / refine)
        return 3.0 * float(self.survival(w ** 3).sum()) * (w_max / refine)


def _rejection_scores(pmf, n, rng, count):
    """Run ``count`` excursions for up to n + 1 steps; return areas of those with tau = n + 1 (else -1)."""
    cdf = _cdf(pmf.probs)
    height = np.zeros(count, dtype=np.int64)
    area = np.zeros(count, dtype=np.int64)
    active = np.arange(count)
    for _ in range(n):
        height[active] += _draw(rng, pmf, cdf, active.size)
        active = active[height[active] > 0]
        area[active] += height[active]
        if not active.size:
            break
    out = np.full(count, -1.0)
    last = _draw(rng, pmf, cdf, active.size)
    hit = active[height[active] + last <= 0]
    out[hit] = area[hit]
    return out


def _excursion_h(pmf: LatticePMF, n: int) -> np.ndarray:
    """h[k, s] = P(stay positive for steps k+1..n and get absorbed at step n + 1 | S_k = s)."""
    jump = max(pmf.max_offset, 0)
    rows = n * jump + 1
    h = np.zeros((n + 1, rows))
    h[n, 1:] = pmf.prob_at_most(-np.arange(1, rows))
    for k in range(n - 1, -1, -1):
        nxt = h[k + 1]
        cur = np.zeros(rows)
        for off, p in zip(pmf.offsets, pmf.probs):
            off = int(off)
            lo = max(0, 1 - off)
            hi = min(rows, rows - off)
            if hi > lo:
                cur[lo:hi] += p * nxt[lo + off:hi + off]
        h[k] = cur
    return h


def _guided_scores(pmf, n, h, rng, count):
    height = np.zeros(count, dtype=np.int64)
    area = np.zeros(count, dtype=np.int64)
    offs = pmf.offsets
    rows = h.shape[1]
    for k in range(n):
        nxt = height[:, None] + offs[None, :]
        valid = (nxt >= 1) & (nxt < rows)
        w = np.where(valid, pmf.probs[None, :] * h[k + 1][np.clip(nxt, 0, rows - 1)], 0.0)
        cdf = np.cumsum(w, axis=1)
        u = rng.random(count) * cdf[:, -1]
        idx = (u[:, None] >= cdf[:, :-1]).sum(axis=1)
        height += offs[idx]
        area += height
    return area.astype(np.float64)


def conditioned_excursion_area(pmf_zero_mean: LatticePMF, n: int, N: int, seed: int,
                               method: str = "guided", batch_size: int = 65536,
                               workers: int = 1) -> ConditionedAreaSample:
    """Sample A_n / (sigma n^{3/2}) conditional on tau = n + 1 for a mean-zero walk.

    ``method="guided"`` (default) samples the conditioned path exactly, step
    by step, from the backward absorption probabilities. ``method="rejection"``
    simulates excursions and keeps those of duration exactly ``n + 1``; it
    is slow but shares no code with the guided sampler, which makes it a
    useful cross-check at small ``n``.
    """
    pmf = pmf_zero_mean
    if abs(pmf.mean) > 1e-12:
        raise ValidationError("conditioned excursions need a mean-zero increment law")
    sigma = math.sqrt(pmf.variance)
    accept = float(duration_law(pmf, n + 1)[n + 1])
    if method == "rejection":
        if accept < 1e-6:
            raise RejectionTooSlow(f"acceptance probability {accept:.3g} < 1e-6 at n = {n}; use a smaller n "
                                   "or method='guided'")
        values, batch = [], 0
        got = 0
        while got < N:
            out = _rejection_scores(pmf, n, replica_rng(seed, 5, batch), batch_size)
            kept = out[out >= 0]
            values.append(kept)
            got += kept.size
            batch += 1
        areas = np.concatenate(values)[:N]
    elif method == "guided":
        h = _excursion_h(pmf, n)
        areas = _batched(partial(_guided_scores, pmf, n, h), N, seed, 6, 8192, workers)
    else:
        raise ValueError(f"unknown method {method!r}")
    vals = np.sort(areas / (sigma * n ** 1.5))
    vals.setflags(write=False)
    return ConditionedAreaSample(n, sigma, vals, accept, method, seed)
