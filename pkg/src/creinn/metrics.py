"""Uncertainty-evaluation metrics: accuracy-rejection curves, OOD detection
scores and the relative increase of uncertainty under interval inputs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "ARCurve",
    "ar_curve",
    "auroc",
    "average_precision",
    "ood_detect",
    "RelativeIncrease",
    "relative_increase",
]


@dataclass
class ARCurve:
    rejection_rate: np.ndarray
    accuracy: np.ndarray
    auarc: float


def ar_curve(uncertainty, correct) -> ARCurve:
    """Accuracy of the kept samples after rejecting the most uncertain ones.

    Rejection rates are ``0, 1/n, ..., (n-1)/n``; ties in uncertainty keep
    the original order. AUARC is the trapezoidal area over
    ``[0, (n-1)/n]`` divided by that interval's length.
    """
    u = np.asarray(uncertainty, dtype=np.float64)
    c = np.asarray(correct, dtype=np.float64)
    if u.shape != c.shape or u.ndim != 1:
        raise ValueError("uncertainty and correct must be 1-D arrays of equal length")
    n = len(u)
    if n == 0:
        raise ValueError("empty input")
    order = np.argsort(-u, kind="stable")
    kept_correct = np.cumsum(c[order][::-1])[::-1]  # correct count among order[i:]
    acc = kept_correct / np.arange(n, 0, -1)
    rate = np.arange(n) / n
    area = float(acc[0]) if n == 1 else float(np.trapezoid(acc, rate) / rate[-1])
    return ARCurve(rate, acc, area)


def auroc(u_id, u_ood) -> float:
    """Mann-Whitney AUROC of OOD (positive) vs ID scores; ties score one half."""
    u_id, u_ood = np.asarray(u_id, float), np.asarray(u_ood, float)
    ranks = rankdata(np.concatenate([u_id, u_ood]))
    n0, n1 = len(u_id), len(u_ood)
    return float((ranks[n0:].sum() - n1 * (n1 + 1) / 2) / (n0 * n1))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve (positives are 1)."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, float)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # end of each tie block
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def ood_detect(u_id, u_ood):
    """``(AUROC, AUPRC)`` with ID labelled 0 and OOD labelled 1."""
    u_id, u_ood = np.ravel(u_id), np.ravel(u_ood)
    if len(u_id) == 0 or len(u_ood) == 0:
        raise ValueError("both ID and OOD uncertainties must be non-empty")
    labels = np.r_[np.zeros(len(u_id)), np.ones(len(u_ood))]
    return auroc(u_id, u_ood), average_precision(np.r_[u_id, u_ood], labels)


@dataclass
class RelativeIncrease:
    ratios: dict
    excluded: int


def relative_increase(levels, baseline, floor=1e-9) -> RelativeIncrease:
    """Mean over runs of the mean per-sample ratio ``U_level / U_baseline``.

    ``levels`` maps a level key to an array ``(runs, samples)`` (a 1-D array
    is one run). Samples whose baseline uncertainty is below ``floor`` are
    left out of that run's mean; ``excluded`` counts them.
    """
    base = np.atleast_2d(np.asarray(levels[baseline], dtype=np.float64))
    keep = base >= floor
    excluded = int(np.count_nonzero(~keep))
    ratios = {}
    for key, u in levels.items():
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        if u.shape != base.shape:
            raise ValueError(f"level {key!r} has shape {u.shape}, baseline {base.shape}")
        per_run = [np.mean(u[e, keep[e]] / base[e, keep[e]]) for e in range(len(u)) if keep[e].any()]
        ratios[key] = float(np.mean(per_run)) if per_run else float("nan")
    return RelativeIncrease(ratios, excluded)
