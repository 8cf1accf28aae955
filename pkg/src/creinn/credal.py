"""Credal-set post-processing of probability intervals.

Covers reachability reduction, the intersection probability, upper/lower
entropy (total and aleatoric uncertainty), the binary interval measures,
interval averaging for ensembles, and the entropy decomposition used for
ensembles of point predictors.

Entropies are in bits with ``0 log 0 = 0``. All uncertainty is computed on
reachable bounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import value_of

__all__ = [
    "ProbabilityIntervals",
    "UncertaintyReport",
    "IntersectionProbability",
    "ImproperCredalSetError",
    "reachable",
    "reachable_bounds",
    "intersection_probability",
    "intersection_bounds",
    "predict_class",
    "shannon_entropy",
    "upper_entropy",
    "lower_entropy",
    "max_entropy_distribution",
    "min_entropy_distribution",
    "binary_uncertainty",
    "credal_uncertainty",
    "uncertainty",
    "batch_uncertainty",
    "average_intervals",
    "ensemble_entropy_decomposition",
]

# Float slack tolerated (and repaired) when checking properness.
PROPER_SLACK = 1e-9
# Total width below which a credal set is treated as a single distribution.
ZERO_WIDTH = 1e-12
LOG_FLOOR = 1e-12


class ImproperCredalSetError(ValueError):
    """Interval system with an empty credal set: sum(lower) > 1 or sum(upper) < 1."""

    def __init__(self, sum_lower, sum_upper):
        self.sum_lower = sum_lower
        self.sum_upper = sum_upper
        super().__init__(
            f"improper probability intervals: sum(lower)={sum_lower!r}, sum(upper)={sum_upper!r}"
        )


@dataclass
class ProbabilityIntervals:
    """Per-class ``[lower, upper]`` probability bounds, shape ``(..., C)``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape:
            raise ValueError(f"bound shapes differ: {self.lower.shape} vs {self.upper.shape}")

    @property
    def num_classes(self) -> int:
        return self.lower.shape[-1]

    @property
    def width(self):
        return self.upper - self.lower

    def __len__(self):
        return len(self.lower)

    def __getitem__(self, idx):
        return ProbabilityIntervals(self.lower[idx], self.upper[idx])

    def is_proper(self, slack=0.0) -> np.ndarray:
        return (self.lower.sum(-1) <= 1 + slack) & (self.upper.sum(-1) >= 1 - slack)


@dataclass
class IntersectionProbability:
    probs: np.ndarray
    alpha: np.ndarray | float


@dataclass
class UncertaintyReport:
    """Aleatoric, epistemic and total uncertainty of one prediction.

    ``method`` is ``credal_entropy`` (bits), ``binary_interval`` (unitless,
    in [0, 1]) or ``ensemble_decomposition`` (bits).
    """

    au: float
    eu: float
    tu: float
    method: str

    def get(self, measure: str) -> float:
        return getattr(self, measure.lower())


def _sum_others(x):
    """``out[..., k] = sum_{j != k} x[..., j]`` without cancellation."""
    c = x.shape[-1]
    off = 1.0 - np.eye(c)
    return (x.reshape(x.shape[:-1] + (1, c)) * off).sum(axis=-1)


def reachable_bounds(lower, upper):
    """Reachable bounds of a proper interval system (tape-compatible)."""
    up = np.minimum(upper, 1.0 - _sum_others(lower))
    lo = np.maximum(lower, 1.0 - _sum_others(upper))
    # exact arithmetic guarantees lo <= up; keep it under rounding too
    lo = np.minimum(lo, up)
    # a point system is its own reduction; skip the clamp so rounding cannot move it
    point = np.sum(value_of(upper) - value_of(lower), axis=-1, keepdims=True) <= ZERO_WIDTH
    if np.any(point):
        lo, up = np.where(point, lower, lo), np.where(point, upper, up)
    return lo, up


def intersection_bounds(lower, upper):
    """Intersection probability of reachable bounds (tape-compatible).

    Returns ``(probs, alpha)``; ``alpha`` has a trailing axis of length 1.
    """
    width = upper - lower
    den = width.sum(axis=-1, keepdims=True)
    num = 1.0 - lower.sum(axis=-1, keepdims=True)
    wide = value_of(den) > ZERO_WIDTH
    alpha = np.where(wide, num / np.where(wide, den, 1.0), 0.0 * num)
    alpha = np.minimum(np.maximum(alpha, 0.0), 1.0)
    return lower + alpha * width, alpha


def _checked_proper(pi: ProbabilityIntervals) -> ProbabilityIntervals:
    lo, up = pi.lower.copy(), pi.upper.copy()
    if np.any(lo < 0) or np.any(up > 1) or np.any(lo > up):
        raise ValueError("probability bounds must satisfy 0 <= lower <= upper <= 1")
    sl, su = lo.sum(-1, keepdims=True), up.sum(-1, keepdims=True)
    bad = (sl > 1 + PROPER_SLACK) | (su < 1 - PROPER_SLACK)
    if np.any(bad):
        i = np.flatnonzero(bad.reshape(-1))[0]
        raise ImproperCredalSetError(float(sl.reshape(-1)[i]), float(su.reshape(-1)[i]))
    lo = lo / np.maximum(sl, 1.0)
    up = np.where(su < 1, np.minimum(up / np.where(su > 0, su, 1.0), 1.0), up)
    return ProbabilityIntervals(np.minimum(lo, up), up)


def reachable(pi: ProbabilityIntervals) -> ProbabilityIntervals:
    """Tighten every bound to the value attained inside the credal set."""
    pi = _checked_proper(pi)
    lo, up = reachable_bounds(pi.lower, pi.upper)
    return ProbabilityIntervals(lo, up)


def intersection_probability(pi: ProbabilityIntervals) -> IntersectionProbability:
    """Single representative distribution ``lower + alpha * (upper - lower)``.

    ``pi`` should already be reachable. When all widths are zero ``alpha`` is 0
    and the point distribution is returned.
    """
    pi = _checked_proper(pi)
    q, alpha = intersection_bounds(pi.lower, pi.upper)
    alpha = alpha[..., 0]
    return IntersectionProbability(q, float(alpha) if alpha.ndim == 0 else alpha)


def predict_class(q) -> np.ndarray | int:
    """Argmax of the intersection probability; ties go to the lowest index."""
    probs = q.probs if isinstance(q, IntersectionProbability) else np.asarray(q)
    out = np.argmax(probs, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def shannon_entropy(q, axis=-1):
    q = np.asarray(q, dtype=np.float64)
    logs = np.log2(np.clip(q, LOG_FLOOR, 1.0))
    return -np.sum(np.where(q > 0, q * logs, 0.0), axis=axis)


def _as_rows(pi):
    lo, up = np.asarray(pi.lower, dtype=np.float64), np.asarray(pi.upper, dtype=np.float64)
    if lo.ndim != 1:
        raise ValueError("entropy solvers take a single interval system (1-D bounds)")
    return lo, up


def max_entropy_distribution(pi: ProbabilityIntervals) -> np.ndarray:
    """Maximum-entropy member of the credal set (water-filling).

    The optimum is ``q_k = clip(level, lower_k, upper_k)`` for the level at
    which the clipped values sum to one; the total is piecewise linear in the
    level, so the level is found exactly between consecutive breakpoints.
    """
    lo, up = _as_rows(pi)
    points = np.unique(np.concatenate([lo, up]))
    totals = np.clip(points[:, None], lo, up).sum(axis=1)
    i = int(np.searchsorted(totals, 1.0))
    if i == 0:
        level = points[0]
    elif i >= len(points):
        level = points[-1]
    else:
        t0, t1 = totals[i - 1], totals[i]
        frac = 0.0 if t1 == t0 else (1.0 - t0) / (t1 - t0)
        level = points[i - 1] + frac * (points[i] - points[i - 1])
    return np.clip(level, lo, up)


# Largest class count solved by exact vertex enumeration (C * 2**(C-1) vertices).
MAX_ENUM_CLASSES = 12


def _greedy_min_entropy(lo, up):
    best, best_h = None, np.inf
    for k in range(len(lo)):
        q = lo.copy()
        q[k] = up[k]
        rem = 1.0 - q.sum()
        if rem < 0:
            q[k] += rem
            rem = 0.0
        free = [j for j in range(len(lo)) if j != k]
        while rem > 0 and free:
            reach = [lo[j] + min(up[j] - lo[j], rem) for j in free]
            j = free.pop(int(np.argmax(reach)))
            add = min(up[j] - lo[j], rem)
            q[j] += add
            rem -= add
        h = shannon_entropy(q)
        if h < best_h:
            best, best_h = q, h
    return best


def _vertex_min_entropy(lo, up):
    c = len(lo)
    bits = ((np.arange(2 ** (c - 1))[:, None] >> np.arange(c - 1)) & 1).astype(bool)
    best, best_h = None, np.inf
    for f in range(c):
        others = np.delete(np.arange(c), f)
        q = np.empty((len(bits), c))
        q[:, others] = np.where(bits, up[others], lo[others])
        q[:, f] = 1.0 - q[:, others].sum(axis=1)
        ok = (q[:, f] >= lo[f] - 1e-12) & (q[:, f] <= up[f] + 1e-12)
        if not ok.any():
            continue
        q = q[ok]
        q[:, f] = np.clip(q[:, f], lo[f], up[f])
        h = shannon_entropy(q, axis=1)
        i = int(np.argmin(h))
        if h[i] < best_h:
            best, best_h = q[i], h[i]
    return best


def min_entropy_distribution(pi: ProbabilityIntervals) -> np.ndarray:
    """Minimum-entropy member of the credal set.

    Entropy is concave, so the minimum sits on a vertex (every class at a
    bound except at most one). Up to four classes a greedy pass is exact: each
    class in turn is taken as the dominant one at its upper bound, the others
    start at their lower bounds, and the leftover mass goes to whichever class
    can end up largest. Larger systems (up to ``MAX_ENUM_CLASSES``) enumerate
    the vertices; beyond that the greedy result is an upper bound on the
    minimum.
    """
    lo, up = _as_rows(pi)
    if 4 < len(lo) <= MAX_ENUM_CLASSES:
        return _vertex_min_entropy(lo, up)
    return _greedy_min_entropy(lo, up)


def upper_entropy(pi: ProbabilityIntervals) -> float:
    """Highest Shannon entropy (bits) over the credal set of reachable ``pi``."""
    return float(shannon_entropy(max_entropy_distribution(pi)))


def lower_entropy(pi: ProbabilityIntervals) -> float:
    """Lowest Shannon entropy (bits) over the credal set of reachable ``pi``."""
    return float(shannon_entropy(min_entropy_distribution(pi)))


def binary_uncertainty(lower: float, upper: float) -> UncertaintyReport:
    """Interval measures for a single positive-class probability interval."""
    if not 0.0 <= lower <= upper <= 1.0:
        raise ValueError(f"invalid probability interval [{lower}, {upper}]")
    return UncertaintyReport(
        au=min(lower, 1.0 - upper),
        eu=upper - lower,
        tu=min(1.0 - lower, upper),
        method="binary_interval",
    )


def credal_uncertainty(pi: ProbabilityIntervals) -> UncertaintyReport:
    """Upper entropy (TU), lower entropy (AU) and their gap (EU), in bits."""
    pi = reachable(pi)
    if float(np.sum(pi.width)) <= ZERO_WIDTH:
        h = float(shannon_entropy(intersection_bounds(pi.lower, pi.upper)[0]))
        return UncertaintyReport(au=h, eu=0.0, tu=h, method="credal_entropy")
    hi = upper_entropy(pi)
    # the solvers agree only to rounding on near-singleton credal sets
    lo = min(lower_entropy(pi), hi)
    return UncertaintyReport(au=lo, eu=hi - lo, tu=hi, method="credal_entropy")


def uncertainty(pi: ProbabilityIntervals, binary: bool | None = None) -> UncertaintyReport:
    """Uncertainty of one system; two-class systems default to the interval measures."""
    if binary is None:
        binary = pi.num_classes == 2
    if binary:
        if pi.num_classes != 2:
            raise ValueError("binary measures need exactly two classes")
        r = reachable(pi)
        return binary_uncertainty(float(r.lower[1]), float(r.upper[1]))
    return credal_uncertainty(pi)


def batch_uncertainty(pi: ProbabilityIntervals, binary: bool | None = None) -> dict[str, np.ndarray]:
    """Per-sample ``{"au", "eu", "tu"}`` arrays for a batch of systems."""
    reports = [uncertainty(pi[i], binary) for i in range(len(pi))]
    return {m: np.array([getattr(r, m) for r in reports]) for m in ("au", "eu", "tu")}


def average_intervals(members) -> ProbabilityIntervals:
    """Elementwise mean of the members' reachable bounds."""
    members = list(members)
    if not members:
        raise ValueError("need at least one member")
    c = members[0].num_classes
    if any(m.num_classes != c for m in members):
        raise ValueError("members disagree on the number of classes")
    members = [reachable(m) for m in members]
    lo = np.mean([m.lower for m in members], axis=0)
    up = np.mean([m.upper for m in members], axis=0)
    return ProbabilityIntervals(lo, up)


def ensemble_entropy_decomposition(predictions) -> UncertaintyReport:
    """TU = H(mean), AU = mean of H, EU = TU - AU for point-prediction ensembles."""
    p = np.asarray(predictions, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("predictions must be a non-empty (members, classes) array")
    if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("each member must be a probability distribution")
    tu = float(shannon_entropy(p.mean(axis=0)))
    au = float(np.mean(shannon_entropy(p, axis=1)))
    return UncertaintyReport(au=au, eu=max(tu - au, 0.0), tu=tu, method="ensemble_decomposition")
