"""Network building blocks: interval dense layers, Interval SoftMax, interval
batch normalization, and the assembled credal classifier."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Param, Tape, value_of
from .credal import ProbabilityIntervals, _sum_others
from .interval import (
    IntervalError,
    IntervalTensor,
    check_valid,
    degenerate,
    interval_linear_general,
    interval_linear_nonneg,
    interval_relu,
)

__all__ = [
    "LayerSpec",
    "ModelSpec",
    "IntervalParameter",
    "IntervalBatchNorm",
    "IntervalDense",
    "CreINN",
    "softmax_bounds",
    "interval_softmax",
    "interval_softmax_jacobian",
    "ibn_forward",
    "dense_forward",
    "model_forward",
]


@dataclass(frozen=True)
class LayerSpec:
    fan_in: int
    fan_out: int
    activation: str = "relu"
    use_ibn: bool = False

    def __post_init__(self):
        if self.fan_in < 1 or self.fan_out < 1:
            raise ValueError("fan_in and fan_out must be >= 1")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)

    @classmethod
    def mlp(cls, sizes, use_ibn=False) -> "ModelSpec":
        """Dense ReLU stack; the last layer is linear and feeds the softmax head."""
        sizes = list(sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        layers = []
        for i, (n, m) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            layers.append(LayerSpec(n, m, "none" if last else "relu", use_ibn and not last))
        return cls(tuple(layers))

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def num_classes(self) -> int:
        return self.layers[-1].fan_out

    @property
    def has_ibn(self) -> bool:
        return any(l.use_ibn for l in self.layers)

    def describe(self) -> str:
        return ";".join(f"{l.fan_in}x{l.fan_out}:{l.activation}:{int(l.use_ibn)}" for l in self.layers)

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        layers = []
        for part in text.split(";"):
            dims, act, ibn = part.split(":")
            n, m = dims.split("x")
            layers.append(LayerSpec(int(n), int(m), act, bool(int(ibn))))
        return cls(tuple(layers))


class IntervalParameter:
    """Trainable interval stored as a center and a non-negative radius."""

    def __init__(self, center, radius, name=""):
        radius = np.asarray(radius, dtype=np.float64)
        if np.any(radius < 0):
            raise ValueError("radius must be non-negative")
        self.c = Param(center, name=f"{name}.center")
        self.r = Param(radius, nonneg=True, name=f"{name}.radius")

    center = property(lambda self: self.c.value)
    radius = property(lambda self: self.r.value)
    grad_center = property(lambda self: self.c.grad)
    grad_radius = property(lambda self: self.r.grad)

    @property
    def lower(self):
        return self.c.data - self.r.data

    @property
    def upper(self):
        return self.c.data + self.r.data

    def interval(self) -> IntervalTensor:
        return IntervalTensor(self.lower, self.upper)

    def params(self):
        return [self.c, self.r]


class IntervalBatchNorm:
    """Batch normalization applied separately to interval centers and radii."""

    def __init__(self, num_features, eps=1e-5, momentum=0.99, name="ibn"):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.eps = eps
        self.momentum = momentum
        self.gamma_c = Param(np.ones(num_features), name=f"{name}.gamma_c")
        self.beta_c = Param(np.zeros(num_features), name=f"{name}.beta_c")
        self.gamma_r = Param(np.ones(num_features), name=f"{name}.gamma_r")
        self.beta_r = Param(np.zeros(num_features), name=f"{name}.beta_r")
        self.running_mean_c = np.zeros(num_features)
        self.running_var_c = np.ones(num_features)
        self.running_mean_r = np.zeros(num_features)
        self.running_var_r = np.ones(num_features)

    def params(self):
        return [self.gamma_c, self.beta_c, self.gamma_r, self.beta_r]

    def stats(self):
        return [self.running_mean_c, self.running_var_c, self.running_mean_r, self.running_var_r]

    def __call__(self, a, mode="train", update_stats=True):
        return ibn_forward(self, a, mode, update_stats)


def ibn_forward(state: IntervalBatchNorm, a: IntervalTensor, mode="train", update_stats=True) -> IntervalTensor:
    """Normalize a batch ``(B, F)`` of intervals.

    Train mode uses batch statistics (biased variance) and, if
    ``update_stats``, moves the running statistics by
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    c = (a.lower + a.upper) / 2
    r = (a.upper - a.lower) / 2
    if mode == "train":
        if a.shape[0] < 2:
            raise ValueError("interval batch norm needs a batch of at least 2 in train mode")
        mu_c = c.mean(axis=0)
        mu_r = r.mean(axis=0)
        var_c = ((c - mu_c) ** 2).mean(axis=0)
        var_r = ((r - mu_r) ** 2).mean(axis=0)
        if update_stats:
            m = state.momentum
            state.running_mean_c = m * state.running_mean_c + (1 - m) * value_of(mu_c)
            state.running_var_c = m * state.running_var_c + (1 - m) * value_of(var_c)
            state.running_mean_r = m * state.running_mean_r + (1 - m) * value_of(mu_r)
            state.running_var_r = m * state.running_var_r + (1 - m) * value_of(var_r)
    elif mode == "infer":
        mu_c, var_c = state.running_mean_c, state.running_var_c
        mu_r, var_r = state.running_mean_r, state.running_var_r
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    c_hat = (c - mu_c) / np.sqrt(var_c + state.eps)
    r_hat = (r - mu_r) / np.sqrt(var_r + state.eps)
    c_out = state.gamma_c.data * c_hat + state.beta_c.data
    r_out = np.abs(state.gamma_r.data * r_hat + state.beta_r.data)
    return IntervalTensor(c_out - r_out, c_out + r_out)


class IntervalDense:
    """Interval-weight dense layer, optionally followed by IBN, then the activation."""

    def __init__(self, spec: LayerSpec, name="dense"):
        self.spec = spec
        shape = (spec.fan_out, spec.fan_in)
        self.weight = IntervalParameter(np.zeros(shape), np.zeros(shape), name=f"{name}.W")
        self.bias = IntervalParameter(np.zeros(spec.fan_out), np.zeros(spec.fan_out), name=f"{name}.b")
        self.ibn = IntervalBatchNorm(spec.fan_out, name=f"{name}.ibn") if spec.use_ibn else None

    def params(self):
        ps = self.weight.params() + self.bias.params()
        if self.ibn is not None:
            ps += self.ibn.params()
        return ps

    def __call__(self, a, mode="infer", update_stats=True):
        return dense_forward(self, a, mode, update_stats)


def dense_forward(layer: IntervalDense, a: IntervalTensor, mode="infer", update_stats=True) -> IntervalTensor:
    W, b = layer.weight.interval(), layer.bias.interval()
    if np.all(value_of(a.lower) >= 0):
        out = interval_linear_nonneg(W, a, b)
    else:
        out = interval_linear_general(W, a, b)
    if layer.ibn is not None:
        out = layer.ibn(out, mode, update_stats)
    if layer.spec.activation == "relu":
        out = interval_relu(out)
    return out


def softmax_bounds(lower, upper):
    """Interval SoftMax on bound arrays ``(..., C)`` (tape-compatible).

    Class ``k``'s bound uses its own lower (or upper) logit against the
    midpoints of every other class. Logits are shifted by the largest
    midpoint first; the shift cancels in each ratio.
    """
    mid = (lower + upper) / 2
    shift = np.max(value_of(mid), axis=-1, keepdims=True)
    e_mid = np.exp(mid - shift)
    others = _sum_others(e_mid)
    e_lo = np.exp(lower - shift)
    e_hi = np.exp(upper - shift)
    return e_lo / (e_lo + others), e_hi / (e_hi + others)


def interval_softmax(a: IntervalTensor) -> ProbabilityIntervals:
    if a.shape[-1] < 2:
        raise ValueError("Interval SoftMax needs at least two classes")
    lo, hi = softmax_bounds(np.asarray(value_of(a.lower), float), np.asarray(value_of(a.upper), float))
    return ProbabilityIntervals(lo, hi)


def interval_softmax_jacobian(a: IntervalTensor) -> dict[str, np.ndarray]:
    """Closed-form Jacobians of Interval SoftMax for one logit interval vector.

    Returns ``{"dlo_dlo", "dlo_dhi", "dhi_dhi", "dhi_dlo"}`` where entry
    ``[k, j]`` of ``"dlo_dhi"`` is the derivative of lower probability ``k``
    with respect to upper logit ``j``.
    """
    lower = np.asarray(value_of(a.lower), float)
    upper = np.asarray(value_of(a.upper), float)
    if lower.ndim != 1:
        raise ValueError("expects a single logit vector")
    mid = (lower + upper) / 2
    shift = mid.max()
    e_mid = np.exp(mid - shift)
    others = _sum_others(e_mid)
    den_lo = np.exp(lower - shift) + others
    den_hi = np.exp(upper - shift) + others
    q_lo, q_hi = softmax_bounds(lower, upper)
    off = 1.0 - np.eye(len(lower))
    cross_lo = -0.5 * q_lo[:, None] * e_mid[None, :] / den_lo[:, None] * off
    cross_hi = -0.5 * q_hi[:, None] * e_mid[None, :] / den_hi[:, None] * off
    return {
        "dlo_dlo": cross_lo + np.diag(q_lo * (1 - q_lo)),
        "dlo_dhi": cross_lo,
        "dhi_dhi": cross_hi + np.diag(q_hi * (1 - q_hi)),
        "dhi_dlo": cross_hi,
    }


class CreINN:
    """Interval MLP with an Interval SoftMax head."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.layers = [IntervalDense(l, name=f"layer{i}") for i, l in enumerate(spec.layers)]

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def ibn_layers(self):
        return [l.ibn for l in self.layers if l.ibn is not None]

    def weight_params(self):
        return [l.weight for l in self.layers]

    def freeze_radii(self, value=0.0):
        """Fix every weight and bias radius at ``value`` and stop training it."""
        for layer in self.layers:
            for ip in (layer.weight, layer.bias):
                ip.r.value[...] = value
                ip.r.frozen = True

    def bind(self, tape: Tape):
        for p in self.params():
            p.bind(tape)

    def unbind(self):
        for p in self.params():
            p.unbind()

    @contextlib.contextmanager
    def using(self, values):
        """Temporarily substitute parameter values (arrays or Vars), in ``params()`` order."""
        ps = self.params()
        saved = [p._bound for p in ps]
        for p, v in zip(ps, values):
            p._bound = v
        try:
            yield self
        finally:
            for p, s in zip(ps, saved):
                p._bound = s

    def logits(self, x, mode="infer", update_stats=True) -> IntervalTensor:
        """Interval logits for a batch ``(B, n)`` or a single input ``(n,)``."""
        a = x if isinstance(x, IntervalTensor) else degenerate(np.asarray(x, dtype=np.float64))
        if a.shape[-1] != self.spec.input_dim:
            raise IntervalError(f"input has {a.shape[-1]} features, model expects {self.spec.input_dim}")
        single = len(a.shape) == 1
        if single:
            a = IntervalTensor(a.lower[None, :], a.upper[None, :])
        for layer in self.layers:
            a = layer(a, mode, update_stats)
        if single:
            a = a[0]
        return a

    def forward_bounds(self, x, mode="infer", update_stats=True):
        """Interval SoftMax bounds ``(lower, upper)``; tape-compatible."""
        z = self.logits(x, mode, update_stats)
        return softmax_bounds(z.lower, z.upper)

    def forward(self, x, mode="infer", update_stats=True) -> ProbabilityIntervals:
        lo, hi = self.forward_bounds(x, mode, update_stats)
        return ProbabilityIntervals(value_of(lo), value_of(hi))

    __call__ = forward


def model_forward(spec: ModelSpec, params, x, mode="infer") -> ProbabilityIntervals:
    """Functional form: evaluate ``spec`` with the given parameter arrays."""
    model = CreINN(spec)
    for p, v in zip(model.params(), params):
        p.value = np.asarray(v, dtype=np.float64)
    return model.forward(x, mode)
