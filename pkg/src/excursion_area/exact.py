"""Exact dynamic-programming laws for lattice walks.

Two families of tables are computed here. :func:`excursion_law` gives the
joint law of the duration and the area of the positive excursion under the
original increment law. :func:`tilted_layer` gives the joint law of position
and running area after ``m`` steps of a walk whose step ``j`` follows the law
tilted at ``u_{n,j}``, optionally killed on leaving ``(-a, inf)``.

Every table keeps the mass it could not resolve, split by cap, so that each
reported probability carries an exact truncation bracket.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .analytics import cramer_root, ruin_tail_bound
from .errors import CapsTooSmall, ValidationError, ZeroConditioningEvent
from .increments import LatticePMF, TiltSchedule, mgf, tilt_schedule, tilted_probs

_DTYPES = {"double": np.float64, "dd": np.longdouble}


def _shift_rows_by_area(new: np.ndarray, s_lo: int, width: int):
    """Move row ``i`` (position ``s = s_lo + i``) right by ``s`` columns.

    Returns ``(shifted, mass_below, mass_above)``, where the two masses are
    what fell outside the ``width`` columns on either side.
    """
    rows = new.shape[0]
    buf = np.zeros((rows, width + rows), dtype=new.dtype)
    step = buf.itemsize
    view = as_strided(buf, shape=(rows, width), strides=((width + rows + 1) * step, step))
    view[...] = new
    # buf[:, c] now holds area column c + s_lo
    c_start = max(0, -s_lo)
    c_end = min(width + rows, width - s_lo)
    out = np.zeros((rows, width), dtype=new.dtype)
    if c_end > c_start:
        out[:, c_start + s_lo:c_end + s_lo] = buf[:, c_start:c_end]
    below = buf[:, :c_start].sum()
    above = buf[:, max(c_end, c_start):].sum()
    return out, below, above


def _step_positions(cur: np.ndarray, offsets, probs) -> np.ndarray:
    """new[i] = sum_k p_k cur[i - k] along the first axis (mass leaving the array is dropped)."""
    new = np.zeros_like(cur)
    rows = cur.shape[0]
    for k, p in zip(offsets, probs):
        k = int(k)
        if k >= rows or -k >= rows:
            continue
        if k > 0:
            new[k:] += p * cur[:rows - k]
        elif k < 0:
            new[:rows + k] += p * cur[-k:]
        else:
            new += p * cur
    return new


# ---------------------------------------------------------------------------
# excursion law


@dataclass(frozen=True, eq=False)
class ExcursionTable:
    """Joint law P(A_tau = a, tau = n + 1) on ``0 <= n <= n_max``, ``0 <= a <= a_max``.

    ``stopped[n, a]`` is the probability; ``marginal`` is its column sum
    accumulated with Kahan compensation. Mass not resolved by the caps is kept
    in ``overflow`` (keys ``"a"`` for area beyond ``a_max`` and ``"s"`` for
    height beyond ``s_max`` at area within the cap) and in
    ``alive_mass_at_caps`` for excursions still running when the recursion stopped.
    """

    pmf: LatticePMF
    a_max: int
    n_max: int
    s_max: int
    stopped: np.ndarray = field(repr=False)
    marginal: np.ndarray = field(repr=False)
    alive_mass_at_caps: float
    overflow: dict
    precision: str = "double"

    @property
    def layers(self) -> int:
        return self.stopped.shape[0]

    @property
    def total_stopped_mass(self) -> float:
        return math.fsum(np.asarray(self.marginal, dtype=np.float64))

    @property
    def overflow_mass(self) -> float:
        return self.overflow["a"] + self.overflow["s"]

    def conservation_error(self) -> float:
        return abs(self.total_stopped_mass + self.alive_mass_at_caps + self.overflow_mass - 1.0)

    def duration_pmf(self) -> np.ndarray:
        """P(tau = k, A_tau <= a_max) for k = 1..layers (index k - 1)."""
        return self.stopped.sum(axis=1)

    def header(self) -> dict:
        return {
            "pmf": [[k, p] for k, p in self.pmf.entries],
            "pmf_digest": self.pmf.digest(),
            "a_max": self.a_max,
            "n_max": self.n_max,
            "s_max": self.s_max,
            "layers": self.layers,
            "precision": self.precision,
            "dtype": np.dtype(self.stopped.dtype).str,
            "overflow": {"a": self.overflow["a"], "s": self.overflow["s"]},
            "alive_mass_at_caps": self.alive_mass_at_caps,
            "total_stopped_mass": self.total_stopped_mass,
        }


def default_height_cap(pmf: LatticePMF, a_max: int) -> int:
    """Smallest height cap that cannot bind: reaching height s costs area >= s^2 / (2 J)."""
    jump = max(1, pmf.max_offset)
    return math.ceil(math.sqrt(2 * jump * a_max)) + jump


def excursion_law(pmf: LatticePMF, a_max: int, n_max: int | None = None, s_max: int | None = None,
                  budget: float = 1e-12, precision: str = "double") -> ExcursionTable:
    """Forward recursion over alive states (height s >= 1, area a <= a_max).

    At layer ``n`` the array holds P(S_n = s, A_n = a, tau > n); absorption
    mass sum_s layer(s, a) P(X <= -s) is recorded as ``stopped[n, a]``. The
    recursion ends when the alive mass drops below ``1e-3 * budget`` times the
    current tail reference (mass at or beyond ``a_max``) or at ``n_max``.

    Raises :class:`CapsTooSmall` if the unresolved mass inside the caps
    exceeds ``budget`` times that tail reference.
    """
    if a_max < 1:
        raise ValidationError("a_max must be positive")
    if pmf.mean > 1e-15:
        raise ValidationError("the excursion law needs an increment law with non-positive mean")
    if precision not in _DTYPES:
        raise ValidationError(f"precision must be one of {sorted(_DTYPES)}")
    dtype = _DTYPES[precision]
    jump = pmf.max_offset
    if s_max is None:
        s_max = default_height_cap(pmf, a_max)
    if n_max is None:
        n_max = a_max + 1
    rows = s_max + max(jump, 0) + 1          # landing rows above s_max before cleanup
    width = a_max + 1
    probs = pmf.probs.astype(dtype)
    absorb = np.asarray(pmf.prob_at_most(-np.arange(rows)), dtype=dtype)
    absorb[0] = 0

    stopped_rows = [np.zeros(width, dtype=dtype)]
    stopped_rows[0][0] = pmf.prob_at_most(0)
    over_a = dtype(0)
    over_s = dtype(0)
    layer = np.zeros((rows, width), dtype=dtype)
    for k, p in zip(pmf.offsets, probs):
        if k > 0:
            if k <= a_max:
                layer[k, k] += p
            else:
                over_a += p
    over_s += layer[s_max + 1:].sum()
    layer[s_max + 1:] = 0

    marginal = stopped_rows[0].copy()
    comp = np.zeros(width, dtype=dtype)
    alive = layer.sum()
    n = 1
    while True:
        row = absorb @ layer
        stopped_rows.append(row)
        # Kahan-compensated accumulation of the area marginal
        y = row - comp
        t = marginal + y
        comp = (t - marginal) - y
        marginal = t
        new = _step_positions(layer, pmf.offsets, probs)
        new[0] = 0
        layer, _, above = _shift_rows_by_area(new, 0, width)
        over_a += above
        over_s += layer[s_max + 1:].sum()
        layer[s_max + 1:] = 0
        alive = layer.sum()
        n += 1
        tail_ref = float(over_a + marginal[-1])
        if alive == 0 or n > n_max or alive <= 1e-3 * budget * tail_ref:
            break

    unresolved = float(alive + over_s)
    tail_ref = float(over_a + marginal[-1])
    if unresolved > budget * max(tail_ref, np.finfo(float).tiny):
        raise CapsTooSmall(
            f"unresolved mass {unresolved:.3g} exceeds budget {budget:g} x tail {tail_ref:.3g}; "
            f"raise n_max (now {n_max}) or s_max (now {s_max})")
    stopped = np.vstack(stopped_rows)
    stopped.setflags(write=False)
    marginal.setflags(write=False)
    return ExcursionTable(
        pmf=pmf, a_max=int(a_max), n_max=int(n_max), s_max=int(s_max), stopped=stopped,
        marginal=marginal, alive_mass_at_caps=float(alive),
        overflow={"a": float(over_a), "s": float(over_s)}, precision=precision,
    )


def area_marginal(table: ExcursionTable) -> np.ndarray:
    """P(A_tau = a) for a = 0..a_max."""
    return table.marginal


class TailProbability(NamedTuple):
    """P(A_tau >= x) is bracketed by ``[lower, upper]``; ``value`` is the lower end."""

    value: float
    lower: float
    upper: float


def area_tail(table: ExcursionTable, x: int) -> TailProbability:
    """P(A_tau >= x) with the exact truncation bracket; valid for 0 <= x <= a_max + 1."""
    if not 0 <= x <= table.a_max + 1:
        raise ValueError(f"x must lie in [0, {table.a_max + 1}]")
    within = math.fsum(np.asarray(table.marginal[x:], dtype=np.float64))
    lower = within + table.overflow["a"]
    upper = lower + table.overflow["s"] + table.alive_mass_at_caps
    return TailProbability(lower, lower, upper)


def area_tails(table: ExcursionTable) -> np.ndarray:
    """Vector of lower-bracket tails P(A_tau >= x) for x = 0..a_max + 1.

    Summed from the top so small tails are not formed by cancellation.
    """
    m = np.asarray(table.marginal, dtype=np.float64)
    out = np.empty(m.size + 1)
    out[-1] = table.overflow["a"]
    out[:-1] = np.cumsum(m[::-1])[::-1] + table.overflow["a"]
    return out


def conditional_tau(table: ExcursionTable, x: int) -> np.ndarray:
    """P(tau = k | A_tau = x) as an array indexed by ``k - 1``."""
    if not 0 <= x <= table.a_max:
        raise ValueError(f"x must lie in [0, {table.a_max}]")
    col = np.asarray(table.stopped[:, x], dtype=np.float64)
    total = math.fsum(col)
    if total <= 0:
        raise ZeroConditioningEvent(f"P(A_tau = {x}) is zero")
    return col / total


def save_table(table: ExcursionTable, directory, extra: dict | None = None) -> Path:
    """Write ``table.bin`` (stopped rows then marginal, native bytes) and ``table_header.json``.

    ``extra`` adds keys to the header (the CLI stores its config hash there).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(table.stopped).tobytes() + np.ascontiguousarray(table.marginal).tobytes()
    (directory / "table.bin").write_bytes(payload)
    header = table.header()
    header.update(extra or {})
    header["sha256"] = hashlib.sha256(payload).hexdigest()
    (directory / "table_header.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return directory


def load_table(directory, expect_pmf: LatticePMF | None = None) -> ExcursionTable:
    """Reload a persisted table bit-exactly; checks the checksum and, optionally, the pmf digest."""
    directory = Path(directory)
    header_path, bin_path = directory / "table_header.json", directory / "table.bin"
    if not header_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f"no persisted excursion table in {directory}; run the 'exact' command first")
    header = json.loads(header_path.read_text())
    payload = bin_path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ValidationError(f"checksum mismatch for {bin_path}")
    pmf = LatticePMF.from_pairs(header["pmf"])
    if expect_pmf is not None and expect_pmf.digest() != header["pmf_digest"]:
        raise ValidationError("persisted table was built for a different increment law")
    dtype = np.dtype(header["dtype"])
    width = header["a_max"] + 1
    data = np.frombuffer(payload, dtype=dtype)
    stopped = data[:header["layers"] * width].reshape(header["layers"], width).copy()
    marginal = data[header["layers"] * width:].copy()
    stopped.setflags(write=False)
    marginal.setflags(write=False)
    return ExcursionTable(
        pmf=pmf, a_max=header["a_max"], n_max=header["n_max"], s_max=header["s_max"],
        stopped=stopped, marginal=marginal, alive_mass_at_caps=header["alive_mass_at_caps"],
        overflow=dict(header["overflow"]), precision=header["precision"],
    )


# ---------------------------------------------------------------------------
# position / area layers under a sequence of step laws


@dataclass(frozen=True, eq=False)
class TiltedLayer:
    """P(S_m = s, A_m = a, min_{k<=m} S_k > -barrier) under per-step laws.

    ``table[i, j]`` is the probability at ``s = s_lo + i``, ``a = a_lo + j``.
    ``barrier`` of ``None`` means no killing. ``overflow`` holds mass pushed
    past the caps (``"s"`` and ``"a"``); killed mass is not overflow.
    """

    n: int
    m: int
    barrier: int | None
    schedule: TiltSchedule | None
    s_lo: int
    a_lo: int
    table: np.ndarray = field(repr=False)
    overflow: dict

    @property
    def mass(self) -> float:
        return math.fsum(self.table.ravel())

    @property
    def s_values(self) -> np.ndarray:
        return np.arange(self.s_lo, self.s_lo + self.table.shape[0])

    @property
    def a_values(self) -> np.ndarray:
        return np.arange(self.a_lo, self.a_lo + self.table.shape[1])

    def prob(self, s: int, a: int) -> float:
        i, j = s - self.s_lo, a - self.a_lo
        if 0 <= i < self.table.shape[0] and 0 <= j < self.table.shape[1]:
            return float(self.table[i, j])
        return 0.0


def walk_layer(pmf: LatticePMF, step_probs: np.ndarray, barrier: int | None = None,
               s_max: int | None = None, a_max: int | None = None):
    """Joint (position, area) law after ``len(step_probs)`` steps.

    ``step_probs[j]`` are the probabilities of ``pmf.offsets`` at step ``j + 1``.
    Returns ``(table, s_lo, a_lo, overflow)``.
    """
    m = len(step_probs)
    kmin, kmax = pmf.min_offset, pmf.max_offset
    # the frame always contains the start position 0
    s_lo = min(0, m * kmin if barrier is None else max(m * kmin, 1 - barrier))
    s_hi = max(0, m * kmax if s_max is None else min(m * kmax, s_max))
    dead = 0 if barrier is None else max(0, -barrier - s_lo + 1)   # rows with s <= -barrier
    a_lo = min(0, kmin * m * (m + 1) // 2)
    if barrier is not None:
        a_lo = max(a_lo, min(0, m * (1 - barrier)))
    a_hi = max(0, kmax * m * (m + 1) // 2) if a_max is None else a_max
    rows, width = s_hi - s_lo + 1, a_hi - a_lo + 1
    cur = np.zeros((rows, width))
    cur[-s_lo, -a_lo] = 1.0
    over = {"s": 0.0, "a": 0.0, "a_below": 0.0}
    for j in range(m):
        q = step_probs[j]
        new = _step_positions(cur, pmf.offsets, q)
        # mass stepping above the height cap
        for k, p in zip(pmf.offsets, q):
            if k > 0:
                over["s"] += float(p * cur[max(0, rows - k):].sum())
        new[:dead] = 0
        cur, below, above = _shift_rows_by_area(new, s_lo, width)
        over["a"] += float(above)
        over["a_below"] += float(below)
    return cur, s_lo, a_lo, over


def tilted_layer(pmf: LatticePMF, n: int, t: float, barrier: int | None = None,
                 s_max: int | None = None, a_max: int | None = None, lam: float | None = None) -> TiltedLayer:
    """Layer ``m = floor(n t)`` of the walk with step ``j`` tilted at ``lam (n - j + 1) / n``."""
    if not 0 < t <= 1:
        raise ValueError("t must lie in (0, 1]")
    m = math.floor(n * t + 1e-12)
    if m < 1:
        raise ValueError("n t must be at least 1")
    lam = cramer_root(pmf) if lam is None else lam
    sched = tilt_schedule(lam, n)
    q = tilted_probs(pmf, sched.values[:m])
    table, s_lo, a_lo, over = walk_layer(pmf, q, barrier, s_max, a_max)
    table.setflags(write=False)
    return TiltedLayer(n=n, m=m, barrier=barrier, schedule=sched, s_lo=s_lo, a_lo=a_lo, table=table, overflow=over)


def original_layer(pmf: LatticePMF, m: int, barrier: int | None = None,
                   s_max: int | None = None, a_max: int | None = None) -> TiltedLayer:
    """Same layer under the untilted law (the zero schedule)."""
    q = np.broadcast_to(pmf.probs, (m, pmf.probs.size))
    table, s_lo, a_lo, over = walk_layer(pmf, q, barrier, s_max, a_max)
    table.setflags(write=False)
    return TiltedLayer(n=m, m=m, barrier=barrier, schedule=None, s_lo=s_lo, a_lo=a_lo, table=table, overflow=over)


@dataclass(frozen=True, eq=False)
class ChangeOfMeasureCheck:
    """Both sides of P(A_n = x, S_n = y, tau > n) = e^{-lam x / n} prod phi(u_{n,j}) P^(...)."""

    n: int
    s_lo: int
    a_lo: int
    lhs: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)

    def at(self, x: int, y: int):
        """Return ``(lhs, rhs, relative_gap)`` at area ``x`` and endpoint ``y``."""
        i, j = y - self.s_lo, x - self.a_lo
        inside = 0 <= i < self.lhs.shape[0] and 0 <= j < self.lhs.shape[1]
        lhs = float(self.lhs[i, j]) if inside else 0.0
        rhs = float(self.rhs[i, j]) if inside else 0.0
        gap = abs(lhs - rhs) / lhs if lhs > 0 else abs(rhs)
        return lhs, rhs, gap

    def max_relative_gap(self, floor: float = 1e-14) -> float:
        mask = self.lhs >= floor
        return float(np.max(np.abs(self.lhs[mask] - self.rhs[mask]) / self.lhs[mask]))


def change_of_measure_identity(pmf: LatticePMF, n: int, x: int | None = None, y: int | None = None,
                               lam: float | None = None):
    """Compare the original-law layer with the reweighted tilted layer on the event tau > n.

    With ``x`` and ``y`` given, returns ``(lhs, rhs, relative_gap)``;
    otherwise the full :class:`ChangeOfMeasureCheck`.
    """
    lam = cramer_root(pmf) if lam is None else lam
    orig = original_layer(pmf, n, barrier=0)
    til = tilted_layer(pmf, n, 1.0, barrier=0, lam=lam)
    if (orig.s_lo, orig.a_lo, orig.table.shape) != (til.s_lo, til.a_lo, til.table.shape):
        raise RuntimeError("original and tilted layers use different frames")
    log_prod = math.fsum(np.log(mgf(pmf, til.schedule.values)))
    a = til.a_values.astype(np.float64)
    rhs = np.exp(-lam * a / n + log_prod)[None, :] * til.table
    check = ChangeOfMeasureCheck(n=n, s_lo=orig.s_lo, a_lo=orig.a_lo, lhs=np.asarray(orig.table), rhs=rhs)
    if x is None and y is None:
        return check
    return check.at(x, y)


# ---------------------------------------------------------------------------
# survival, duration, enumeration


class SurvivalValue(NamedTuple):
    """P(min_{k<=K} U_k > -a) and an upper bound on the ruin mass after K."""

    finite_horizon: float
    bracket: float


def survival_exact(pmf: LatticePMF, a: int, horizon: int) -> SurvivalValue:
    """Absorbing-barrier recursion over heights for P(min_{1<=k<=K} U_k > -a).

    The infinite-horizon survival probability lies in
    ``[finite_horizon - bracket, finite_horizon]`` when the drift is positive.
    """
    if a < 0 or horizon < 1:
        raise ValueError("need a >= 0 and horizon >= 1")
    lo = min(0, 1 - a)
    hi = horizon * max(pmf.max_offset, 0)
    cur = np.zeros(hi - lo + 1)
    cur[-lo] = 1.0
    dead = max(0, -a - lo + 1)   # indices of heights <= -a
    for _ in range(horizon):
        cur = _step_positions(cur, pmf.offsets, pmf.probs)
        cur[:dead] = 0
    value = math.fsum(cur)
    bracket = ruin_tail_bound(pmf, a, horizon) if pmf.mean > 0 else float("nan")
    return SurvivalValue(value, bracket)


def duration_law(pmf: LatticePMF, n_max: int) -> np.ndarray:
    """P(tau = n) for n = 0..n_max (entry 0 is zero)."""
    jump = max(pmf.max_offset, 0)
    rows = n_max * jump + 1
    out = np.zeros(n_max + 1)
    absorb = pmf.prob_at_most(-np.arange(rows))
    out[1] = pmf.prob_at_most(0)
    cur = np.zeros(rows)
    for k, p in zip(pmf.offsets, pmf.probs):
        if 0 < k < rows:
            cur[k] += p
    for n in range(2, n_max + 1):
        absorb[0] = 0
        out[n] = absorb @ cur
        cur = _step_positions(cur, pmf.offsets, pmf.probs)
        cur[0] = 0
    return out


def enumerate_excursions(pmf: LatticePMF, n_max: int) -> dict:
    """Brute-force P(A_tau = a, tau = n + 1) for n <= n_max by walking every path.

    Returns ``{(n, a): probability}``. Exponential in ``n_max``; meant as a
    test oracle for small horizons.
    """
    acc: dict = {}
    entries = pmf.entries

    def walk(depth, height, area, prob):
        for k, p in entries:
            nxt = height + k
            if nxt <= 0:
                acc.setdefault((depth, area), []).append(prob * p)
            elif depth < n_max:
                walk(depth + 1, nxt, area + nxt, prob * p)

    walk(0, 0, 0, 1.0)
    return {key: math.fsum(vals) for key, vals in acc.items()}
