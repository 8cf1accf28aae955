"""Interval tensors and the interval arithmetic kernels used by every layer.

The kernels are written with plain numpy calls, so they accept either numpy
arrays or :class:`creinn.autodiff.Var` bounds and are differentiable through
the tape without custom gradient code.
"""
from __future__ import annotations

import numpy as np

from .autodiff import value_of

__all__ = [
    "IntervalTensor",
    "IntervalError",
    "degenerate",
    "interval_linear_general",
    "interval_linear_nonneg",
    "interval_relu",
    "check_valid",
]

# Validity checks run unless Python is started with -O.
CHECK = __debug__


class IntervalError(ValueError):
    """Contract violation on interval shapes or bounds."""


class IntervalTensor:
    """Paired lower/upper bounds of identical shape."""

    __slots__ = ("lower", "upper")

    def __init__(self, lower, upper):
        if np.shape(lower) != np.shape(upper):
            raise IntervalError(f"bound shapes differ: {np.shape(lower)} vs {np.shape(upper)}")
        self.lower = lower
        self.upper = upper

    @property
    def shape(self):
        return np.shape(self.lower)

    @property
    def center(self):
        return (self.lower + self.upper) / 2

    @property
    def radius(self):
        return (self.upper - self.lower) / 2

    @property
    def width(self):
        return self.upper - self.lower

    def numpy(self) -> "IntervalTensor":
        """Copy with plain array bounds (drops any tape record)."""
        return IntervalTensor(np.array(value_of(self.lower)), np.array(value_of(self.upper)))

    def __getitem__(self, idx):
        return IntervalTensor(self.lower[idx], self.upper[idx])

    def __repr__(self):
        return f"IntervalTensor(lower={value_of(self.lower)!r}, upper={value_of(self.upper)!r})"

    @classmethod
    def from_center_radius(cls, center, radius):
        return cls(center - radius, center + radius)


def check_valid(t: IntervalTensor) -> IntervalTensor:
    lo, hi = value_of(t.lower), value_of(t.upper)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise IntervalError("non-finite interval bound")
    if np.any(lo > hi):
        worst = float(np.max(lo - hi))
        raise IntervalError(f"lower exceeds upper by up to {worst:.3g}")
    return t


def _checked(t):
    return check_valid(t) if CHECK else t


def degenerate(x) -> IntervalTensor:
    """Zero-width interval around a point value."""
    return IntervalTensor(x, x)


def _conform(W, a, b):
    m, n = W.shape
    if a.shape[-1:] != (n,) or b.shape != (m,):
        raise IntervalError(
            f"shape mismatch: W {W.shape}, a {a.shape}, b {b.shape}"
        )


def interval_linear_general(W: IntervalTensor, a: IntervalTensor, b: IntervalTensor) -> IntervalTensor:
    """``[W] (x) [a] (+) [b]`` for arbitrary-sign intervals.

    ``W`` is ``(m, n)``, ``a`` is ``(..., n)``, ``b`` is ``(m,)``. Each product
    interval is built from min/max compositions only (no sign case split), then
    summed over the input axis.
    """
    _conform(W, a, b)
    wl, wu = W.lower, W.upper
    al, au = a.lower[..., None, :], a.upper[..., None, :]
    wl_neg, wl_pos = np.minimum(wl, 0.0), np.maximum(wl, 0.0)
    wu_neg, wu_pos = np.minimum(wu, 0.0), np.maximum(wu, 0.0)
    al_neg, al_pos = np.minimum(al, 0.0), np.maximum(al, 0.0)
    au_neg, au_pos = np.minimum(au, 0.0), np.maximum(au, 0.0)
    lo = (
        wu_neg * au_neg
        + wl_pos * al_pos
        + np.minimum(wu_pos * al_neg - wl_neg * au_pos, 0.0)
        + wl_neg * au_pos
    )
    hi = (
        wu_neg * al_pos
        + wl_pos * au_neg
        + np.maximum(wl_neg * al_neg - wu_pos * au_pos, 0.0)
        + wu_pos * au_pos
    )
    return _checked(IntervalTensor(lo.sum(axis=-1) + b.lower, hi.sum(axis=-1) + b.upper))


def interval_linear_nonneg(W: IntervalTensor, a: IntervalTensor, b: IntervalTensor) -> IntervalTensor:
    """Two-term form of the interval product-sum, valid when ``a.lower >= 0``."""
    _conform(W, a, b)
    if np.any(value_of(a.lower) < 0):
        raise IntervalError("interval_linear_nonneg needs a.lower >= 0")
    wl, wu = W.lower, W.upper
    al, au = a.lower[..., None, :], a.upper[..., None, :]
    lo = np.minimum(wl, 0.0) * au + np.maximum(wl, 0.0) * al
    hi = np.maximum(wu, 0.0) * au + np.minimum(wu, 0.0) * al
    return _checked(IntervalTensor(lo.sum(axis=-1) + b.lower, hi.sum(axis=-1) + b.upper))


def interval_relu(a: IntervalTensor) -> IntervalTensor:
    return IntervalTensor(np.maximum(a.lower, 0.0), np.maximum(a.upper, 0.0))
