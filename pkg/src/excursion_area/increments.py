"""Integer-valued increment laws, exponential tilting and the tilt schedule."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .errors import ValidationError

MAX_OFFSET = 10**6
NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LatticePMF:
    """A finitely supported law on the integers.

    Offsets are stored sorted and distinct, every probability is strictly
    positive and the total mass is one within ``1e-12``. Instances are
    immutable; the arrays are flagged read-only.
    """

    offsets: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.offsets)
        probs = np.asarray(self.probs, dtype=np.float64)
        if offsets.ndim != 1 or offsets.shape != probs.shape or offsets.size == 0:
            raise ValidationError("offsets and probs must be non-empty 1-d arrays of equal length")
        if not np.all(np.isfinite(offsets)) or np.any(offsets != np.round(offsets)):
            raise ValidationError("offsets must be integers")
        offsets = offsets.astype(np.int64)
        if np.any(np.abs(offsets) > MAX_OFFSET):
            raise ValidationError(f"offsets must satisfy |k| <= {MAX_OFFSET}")
        order = np.argsort(offsets, kind="stable")
        offsets, probs = offsets[order], probs[order]
        if np.any(np.diff(offsets) == 0):
            raise ValidationError("offsets must be distinct")
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0) or np.any(probs > 1):
            raise ValidationError("probabilities must lie in (0, 1]; omit zero-mass offsets")
        total = math.fsum(probs)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValidationError(f"probabilities sum to {total!r}, not 1 within {NORMALIZATION_TOL}")
        offsets.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_pairs(cls, pairs) -> "LatticePMF":
        """Build from an iterable of ``(offset, prob)``; probs may be decimal strings."""
        pairs = list(pairs)
        offs = [int(k) for k, _ in pairs]
        probs = [float(p) for _, p in pairs]
        return cls(np.array(offs, dtype=np.int64), np.array(probs))

    @classmethod
    def from_dict(cls, mapping) -> "LatticePMF":
        return cls.from_pairs(mapping.items())

    @classmethod
    def from_json(cls, text: str) -> "LatticePMF":
        doc = json.loads(text)
        if not isinstance(doc, dict) or "pmf" not in doc:
            raise ValidationError('distribution file must be a JSON object with a "pmf" list')
        return cls.from_pairs(doc["pmf"])

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(int(k), float(p)) for k, p in zip(self.offsets, self.probs)]

    @property
    def min_offset(self) -> int:
        return int(self.offsets[0])

    @property
    def max_offset(self) -> int:
        return int(self.offsets[-1])

    @property
    def mean(self) -> float:
        return math.fsum(self.offsets * self.probs)

    @property
    def second_moment(self) -> float:
        return math.fsum(self.offsets.astype(np.float64) ** 2 * self.probs)

    @property
    def variance(self) -> float:
        m = self.mean
        return math.fsum((self.offsets - m) ** 2 * self.probs)

    def prob_at_most(self, y):
        """P(X <= y), vectorised over integer ``y``."""
        cdf = np.concatenate(([0.0], np.cumsum(self.probs)))
        idx = np.searchsorted(self.offsets, np.asarray(y), side="right")
        return cdf[idx]

    def negated(self) -> "LatticePMF":
        """Law of -X."""
        return LatticePMF(-self.offsets[::-1], self.probs[::-1])

    def to_json(self) -> str:
        return json.dumps({"pmf": [[k, repr(p)] for k, p in self.entries]})

    def digest(self) -> str:
        """SHA-256 of the canonical entry list, used to key cached tables."""
        canon = json.dumps([[k, p.hex()] for k, p in self.entries], separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, LatticePMF):
            return NotImplemented
        return np.array_equal(self.offsets, other.offsets) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.digest())

    def __repr__(self):
        body = ", ".join(f"{k}: {p:.6g}" for k, p in self.entries)
        return f"LatticePMF({{{body}}})"


def mgf(pmf: LatticePMF, t):
    """phi(t) = sum_k p_k exp(t k); broadcasts over array ``t``."""
    t = np.asarray(t, dtype=np.float64)
    return np.exp(np.multiply.outer(t, pmf.offsets)) @ pmf.probs


def mgf_derivatives(pmf: LatticePMF, t):
    """Return (phi'(t), phi''(t))."""
    t = np.asarray(t, dtype=np.float64)
    w = np.exp(np.multiply.outer(t, pmf.offsets)) * pmf.probs
    k = pmf.offsets.astype(np.float64)
    return w @ k, w @ (k * k)


def tilted_probs(pmf: LatticePMF, u) -> np.ndarray:
    """Rows of tilted probabilities for each tilt in ``u`` (shape ``u.shape + (K,)``)."""
    u = np.asarray(u, dtype=np.float64)
    logw = np.log(pmf.probs) + np.multiply.outer(u, pmf.offsets)
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def tilt(pmf: LatticePMF, u: float) -> LatticePMF:
    """Exponentially tilted law p_k e^{uk} / phi(u).

    Finite support makes every real ``u`` admissible, so only non-finite
    values are rejected.
    """
    if not math.isfinite(u):
        raise ValidationError(f"tilt parameter must be finite, got {u!r}")
    if u == 0:
        return pmf
    return LatticePMF(pmf.offsets, tilted_probs(pmf, u))


@dataclass(frozen=True)
class TiltSchedule:
    """The step-dependent tilts u_{n,j} = lam (n - j + 1) / n for j = 1..n."""

    n: int
    lam: float
    values: np.ndarray = field(repr=False)

    def __len__(self):
        return self.n


def tilt_schedule(lam: float, n: int) -> TiltSchedule:
    if n < 1:
        raise ValidationError("horizon n must be >= 1")
    if not lam > 0:
        raise ValidationError("tilt scale must be positive")
    j = np.arange(1, n + 1)
    values = lam * (n - j + 1) / n
    values.setflags(write=False)
    return TiltSchedule(n, float(lam), values)


@dataclass(frozen=True)
class ValidationReport:
    mean: float
    gcd: int
    aperiodic: bool
    has_positive_offset: bool
    negative_drift: bool
    cramer_satisfiable: bool
    messages: tuple[str, ...]

    @property
    def valid(self) -> bool:
        return self.aperiodic and self.negative_drift and self.cramer_satisfiable


def validate(pmf: LatticePMF) -> ValidationReport:
    """Diagnose the standing assumptions (drift, aperiodicity, Cramér root)."""
    diffs = (pmf.offsets - pmf.offsets[0]).tolist()
    g = reduce(math.gcd, diffs, 0)
    mean = pmf.mean
    aperiodic = g == 1
    positive = pmf.max_offset > 0
    negative = mean < 0
    messages = []
    if not aperiodic:
        messages.append(f"periodic support: gcd of offset differences is {g}")
    if not positive:
        messages.append("no positive offset: the excursion is empty and no Cramér root exists")
    if not negative:
        messages.append(f"mean {mean:.6g} is not negative")
    return ValidationReport(
        mean=mean,
        gcd=g,
        aperiodic=aperiodic,
        has_positive_offset=positive,
        negative_drift=negative,
        cramer_satisfiable=positive and negative,
        messages=tuple(messages),
    )
