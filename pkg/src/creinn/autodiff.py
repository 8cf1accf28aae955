"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every primitive applied to its :class:`Var` objects in
creation order, so the reverse pass is a plain walk backwards over the list.
``Var`` implements ``__array_ufunc__``, which means numerical code written
with ordinary numpy calls (``np.minimum(x, 0)``, ``np.exp(x)``, ``x @ w``,
``x.sum(axis=-1)``) runs unchanged on plain arrays and on recorded variables.

Subgradient convention for ``minimum``/``maximum``: on an exact tie the whole
upstream gradient goes to the first operand.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "Param",
    "GradCheckReport",
    "record",
    "backward",
    "detach",
    "value_of",
    "finite_diff_check",
]


def value_of(x):
    """Underlying numpy value of a Var, or ``x`` itself."""
    return x.value if isinstance(x, Var) else x


def detach(x):
    """Value of ``x`` as a constant (no gradient flows through it)."""
    return np.array(x.value) if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# Each primitive: forward(*values, **kw) -> value;
# backward(g, out, *values, **kw) -> tuple of input gradients (None = no grad).

def _add_b(g, out, a, b):
    return g, g


def _sub_b(g, out, a, b):
    return g, -g


def _mul_b(g, out, a, b):
    return g * b, g * a


def _div_b(g, out, a, b):
    return g / b, -g * a / (b * b)


def _neg_b(g, out, a):
    return (-g,)


def _exp_b(g, out, a):
    return (g * out,)


def _log_b(g, out, a):
    return (g / a,)


def _log2_b(g, out, a):
    return (g / (a * np.log(2.0)),)


def _sqrt_b(g, out, a):
    return (g * 0.5 / out,)


def _square_b(g, out, a):
    return (g * 2.0 * a,)


def _abs_b(g, out, a):
    return (g * np.sign(a),)


def _minimum_b(g, out, a, b):
    first = a <= b
    return np.where(first, g, 0.0), np.where(first, 0.0, g)


def _maximum_b(g, out, a, b):
    first = a >= b
    return np.where(first, g, 0.0), np.where(first, 0.0, g)


def _matmul_b(g, out, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if b.ndim == 1:
        return np.multiply.outer(g, b), np.tensordot(g, a, axes=(range(g.ndim), range(g.ndim)))
    if a.ndim == 1:
        return b @ g, np.multiply.outer(a, g)
    return g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g


def _sum_f(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims)


def _sum_b(g, out, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _reshape_b(g, out, a, shape=None):
    return (g.reshape(a.shape),)


def _transpose_b(g, out, a, axes=None):
    inv = None if axes is None else np.argsort(axes)
    return (np.transpose(g, inv),)


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is None or p is Ellipsis or isinstance(p, (slice, int)) for p in parts)


def _getitem_b(g, out, a, index=None):
    grad = np.zeros_like(a)
    if _is_basic(index):
        grad[index] += g
    else:
        np.add.at(grad, index, g)
    return (grad,)


def _where_b(g, out, a, b, cond=None):
    return np.where(cond, g, 0.0), np.where(cond, 0.0, g)


PRIMITIVES = {
    "add": (np.add, _add_b),
    "sub": (np.subtract, _sub_b),
    "mul": (np.multiply, _mul_b),
    "div": (np.true_divide, _div_b),
    "neg": (np.negative, _neg_b),
    "exp": (np.exp, _exp_b),
    "log": (np.log, _log_b),
    "log2": (np.log2, _log2_b),
    "sqrt": (np.sqrt, _sqrt_b),
    "square": (np.square, _square_b),
    "abs": (np.abs, _abs_b),
    "min": (np.minimum, _minimum_b),
    "max": (np.maximum, _maximum_b),
    "matmul": (np.matmul, _matmul_b),
    "sum": (_sum_f, _sum_b),
    "reshape": (lambda a, shape=None: np.reshape(a, shape), _reshape_b),
    "transpose": (lambda a, axes=None: np.transpose(a, axes), _transpose_b),
    "getitem": (lambda a, index=None: a[index], _getitem_b),
    "where": (lambda a, b, cond=None: np.where(cond, a, b), _where_b),
}

_UFUNCS = {
    np.add: "add",
    np.subtract: "sub",
    np.multiply: "mul",
    np.true_divide: "div",
    np.negative: "neg",
    np.exp: "exp",
    np.log: "log",
    np.log2: "log2",
    np.sqrt: "sqrt",
    np.square: "square",
    np.absolute: "abs",
    np.minimum: "min",
    np.maximum: "max",
    np.matmul: "matmul",
}

_COMPARISONS = {
    np.greater, np.greater_equal, np.less, np.less_equal, np.equal, np.not_equal,
    np.isfinite, np.isnan, np.sign,
}


class Tape:
    """Ordered record of primitive applications.

    ``nodes`` holds every non-constant Var in creation order, which is already
    a topological order. ``ties`` counts elements where a ``min``/``max`` node
    saw equal operands.
    """

    def __init__(self):
        self.nodes: list[Var] = []
        self.ties = 0

    def leaf(self, value, requires_grad=True) -> Var:
        v = Var(self, np.asarray(value, dtype=np.float64), requires_grad=requires_grad)
        self.nodes.append(v)
        return v

    def const(self, value) -> Var:
        return Var(self, np.asarray(value, dtype=np.float64), requires_grad=False)

    def record(self, primitive: str, inputs, **kw) -> Var:
        inputs = tuple(x if isinstance(x, Var) else self.const(x) for x in inputs)
        fwd, _ = PRIMITIVES[primitive]
        values = [x.value for x in inputs]
        out = np.asarray(fwd(*values, **kw), dtype=np.float64)
        if primitive in ("min", "max"):
            self.ties += int(np.count_nonzero(values[0] == values[1]))
        requires = any(x.requires_grad for x in inputs)
        v = Var(self, out, primitive, inputs, kw, requires_grad=requires)
        if requires:
            self.nodes.append(v)
        return v


class Var:
    """A value recorded on a tape."""

    __array_priority__ = 1000
    __slots__ = ("tape", "value", "prim", "inputs", "kw", "requires_grad", "grad")

    def __init__(self, tape, value, prim=None, inputs=(), kw=None, requires_grad=False):
        self.tape = tape
        self.value = value
        self.prim = prim
        self.inputs = inputs
        self.kw = kw or {}
        self.requires_grad = requires_grad
        self.grad = None

    def __repr__(self):
        return f"Var({self.value!r}, prim={self.prim})"

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    size = property(lambda self: self.value.size)
    dtype = property(lambda self: self.value.dtype)

    def __len__(self):
        return len(self.value)

    def __float__(self):
        return float(self.value)

    def __array_ufunc__(self, ufunc, method, *args, **kwargs):
        if method != "__call__" or kwargs.get("out") is not None:
            return NotImplemented
        if ufunc in _COMPARISONS:
            return ufunc(*(value_of(a) for a in args), **kwargs)
        name = _UFUNCS.get(ufunc)
        if name is None or kwargs:
            return NotImplemented
        return self.tape.record(name, args)

    def __array_function__(self, func, types, args, kwargs):
        if func is np.sum:
            return args[0].sum(*args[1:], **kwargs)
        if func is np.mean:
            return args[0].mean(*args[1:], **kwargs)
        if func is np.where:
            cond, a, b = args
            return self.tape.record("where", (a, b), cond=np.asarray(value_of(cond), dtype=bool))
        if func is np.reshape:
            return args[0].reshape(*args[1:], **kwargs)
        if func is np.transpose:
            return args[0].transpose(*args[1:], **kwargs)
        if func in (np.shape, np.ndim, np.size, np.isfinite, np.all, np.any, np.max, np.min):
            return func(*(value_of(a) for a in args), **kwargs)
        return NotImplemented

    def __add__(self, o):
        return self.tape.record("add", (self, o))

    def __radd__(self, o):
        return self.tape.record("add", (o, self))

    def __sub__(self, o):
        return self.tape.record("sub", (self, o))

    def __rsub__(self, o):
        return self.tape.record("sub", (o, self))

    def __mul__(self, o):
        return self.tape.record("mul", (self, o))

    def __rmul__(self, o):
        return self.tape.record("mul", (o, self))

    def __truediv__(self, o):
        return self.tape.record("div", (self, o))

    def __rtruediv__(self, o):
        return self.tape.record("div", (o, self))

    def __neg__(self):
        return self.tape.record("neg", (self,))

    def __pow__(self, p):
        if p == 2:
            return self.tape.record("square", (self,))
        raise NotImplementedError("only squaring is supported")

    def __matmul__(self, o):
        return self.tape.record("matmul", (self, o))

    def __rmatmul__(self, o):
        return self.tape.record("matmul", (o, self))

    def __getitem__(self, index):
        return self.tape.record("getitem", (self,), index=index)

    def __lt__(self, o):
        return self.value < value_of(o)

    def __le__(self, o):
        return self.value <= value_of(o)

    def __gt__(self, o):
        return self.value > value_of(o)

    def __ge__(self, o):
        return self.value >= value_of(o)

    def sum(self, axis=None, keepdims=False):
        return self.tape.record("sum", (self,), axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod([self.value.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self.tape.record("reshape", (self,), shape=shape)

    def transpose(self, *axes):
        axes = tuple(axes[0]) if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else (axes or None)
        return self.tape.record("transpose", (self,), axes=axes)

    @property
    def T(self):
        return self.transpose()


def record(tape: Tape, primitive: str, inputs, **kw) -> Var:
    """Apply ``primitive`` to ``inputs`` and record it on ``tape``."""
    return tape.record(primitive, inputs, **kw)


def backward(tape: Tape, loss: Var):
    """Reverse pass from a scalar ``loss``; fills ``.grad`` on every node.

    Returns ``{id(leaf): grad}`` for leaves that require gradients.
    """
    if not isinstance(loss, Var):
        raise TypeError("loss must be a Var recorded on the tape")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    leaves = {}
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None:
            continue
        if node.prim is None:
            leaves[id(node)] = g
            continue
        _, bwd = PRIMITIVES[node.prim]
        values = [x.value for x in node.inputs]
        grads = bwd(g, node.value, *values, **node.kw)
        for x, gx in zip(node.inputs, grads):
            if gx is None or not x.requires_grad:
                continue
            gx = _unbroadcast(np.asarray(gx, dtype=np.float64), x.value.shape)
            x.grad = gx if x.grad is None else x.grad + gx
    return leaves


class Param:
    """A trainable array with a gradient slot.

    ``nonneg`` marks radius-like parameters projected back onto ``>= 0``
    after each optimizer step. ``frozen`` parameters are never updated.
    While bound to a tape, :attr:`data` is the recorded leaf instead of the
    raw array, so model code reads ``p.data`` either way.
    """

    def __init__(self, value, nonneg=False, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.nonneg = nonneg
        self.frozen = False
        self.name = name
        self._bound = None

    @property
    def data(self):
        return self.value if self._bound is None else self._bound

    def bind(self, tape: Tape):
        self._bound = tape.leaf(self.value, requires_grad=not self.frozen)
        return self._bound

    def unbind(self):
        v, self._bound = self._bound, None
        if v is not None and v.grad is not None:
            self.grad = v.grad.copy()
        else:
            self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Param({self.name or '?'}, shape={self.value.shape})"


@dataclass
class GradCheckReport:
    """Outcome of :func:`finite_diff_check`."""

    max_rel_error: float
    nondifferentiable: bool
    ties: int
    analytic: list
    numeric: list

    def __float__(self):
        return self.max_rel_error


def finite_diff_check(f, params, h=1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f(*params)`` with central differences.

    ``f`` must be written with numpy operations so it runs on both arrays and
    Vars. The relative error per coordinate is
    ``|analytic - numeric| / max(1e-8, |analytic|)``.

    The point is flagged ``nondifferentiable`` when a kink lies within the
    stencil. At a ``min``/``max`` tie this shows as a gap between forward and
    backward differences that does not shrink when the step is halved. A kink
    near but not at the point shows on a coordinate that disagrees with the
    analytic gradient: central differences over a ladder of smaller steps
    move by at least half the disagreement, which a smooth function with a
    wrong gradient would not do.

    Differences are evaluated in ``np.longdouble``. Where that type is wider
    than float64, the rounding noise of ``f(x+h) - f(x-h)`` drops well below
    the ``1e-8`` floor of the relative error, so coordinates with a
    vanishing gradient do not report spurious failures.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    out = f(*leaves)
    if not isinstance(out, Var):
        raise ValueError("f does not depend on its parameters")
    backward(tape, out)
    analytic = [np.zeros_like(p) if v.grad is None else v.grad for p, v in zip(params, leaves)]

    wide = [p.astype(np.longdouble) for p in params]

    def ev():
        return value_of(f(*wide))

    f0 = ev()
    numeric = []
    worst = 0.0
    kink = False
    for i, p in enumerate(wide):
        num = np.zeros(p.shape, dtype=np.longdouble)
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            fx = {}
            for step in ((h, -h, h / 2, -h / 2) if tape.ties else (h, -h)):
                flat[j] = orig + step
                fx[step] = ev()
            flat[j] = orig
            num.reshape(-1)[j] = (fx[h] - fx[-h]) / (2 * h)
            if tape.ties and not kink:
                gap = (fx[h] + fx[-h] - 2 * f0) / h
                gap_half = (fx[h / 2] + fx[-h / 2] - 2 * f0) / (h / 2)
                scale = max(1.0, abs(num.reshape(-1)[j]))
                kink = abs(gap_half) > 1e-6 * scale and abs(gap_half) > 0.75 * abs(gap)
        num = num.astype(np.float64)
        rel = np.abs(analytic[i] - num) / np.maximum(1e-8, np.abs(analytic[i]))
        for j in np.flatnonzero(rel.reshape(-1) > 1e-6):
            if kink:
                break
            # a kink inside the stencil makes the difference quotient depend on the step
            orig = flat[j]
            quotients = []
            for k in range(1, 11):
                s = h / 2**k
                flat[j] = orig + s
                up = ev()
                flat[j] = orig - s
                quotients.append(float((up - ev()) / (2 * s)))
            flat[j] = orig
            spread = max(abs(q - num.reshape(-1)[j]) for q in quotients)
            kink = spread > 0.5 * abs(num.reshape(-1)[j] - analytic[i].reshape(-1)[j])
        worst = max(worst, float(rel.max(initial=0.0)))
        numeric.append(num)
    return GradCheckReport(worst, kink, tape.ties, analytic, numeric)
