"""Initialization, loss, optimizers and the training loop.

All randomness comes from ``make_rng(seed)``: numpy's Philox4x64-10
counter-based bit generator, which produces the same stream on every
platform for a given seed.
"""
from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward, value_of
from .credal import intersection_bounds, reachable_bounds
from .interval import IntervalError, IntervalTensor
from .layers import CreINN, ModelSpec

__all__ = [
    "TrainConfig",
    "NumericalError",
    "make_rng",
    "init_params",
    "credal_head",
    "cross_entropy_loss",
    "batch_loss",
    "SGD",
    "Adam",
    "make_optimizer",
    "optimizer_step",
    "fit",
    "evaluate",
    "predict",
    "write_history_csv",
]

LOG_FLOOR = 1e-12


class NumericalError(RuntimeError):
    """Non-finite loss or parameters during training."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_schedule: list = field(default_factory=list)  # [(epoch, factor), ...]
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch; factors compound from their epoch on."""
        lr = self.learning_rate
        for start, factor in self.lr_schedule:
            if epoch >= start:
                lr *= factor
        return lr


def init_params(spec: ModelSpec, seed: int) -> CreINN:
    """Glorot-uniform centers, absolute Glorot-uniform radii, zero biases."""
    rng = make_rng(seed)
    model = CreINN(spec)
    for layer in model.layers:
        n, m = layer.spec.fan_in, layer.spec.fan_out
        limit = math.sqrt(6.0 / (n + m))
        layer.weight.c.value = rng.uniform(-limit, limit, size=(m, n))
        layer.weight.r.value = np.abs(rng.uniform(-limit, limit, size=(m, n)))
    return model


def credal_head(lower, upper):
    """Intersection probability of the reachable Interval SoftMax bounds."""
    lo, up = reachable_bounds(lower, upper)
    q, _ = intersection_bounds(lo, up)
    return q


def _one_hot(y, c):
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        return y
    out = np.zeros(y.shape + (c,))
    np.put_along_axis(out, y[..., None], 1.0, axis=-1)
    return out


def cross_entropy_loss(q, y):
    """Mean of ``-sum_k y_k log2 q_k`` over the batch; ``y`` one-hot.

    ``q`` may be an array, a Var or an IntersectionProbability.
    """
    q = getattr(q, "probs", q)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != np.shape(q) or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(-1) == 1):
        raise ValueError("y must be one-hot with the same shape as q")
    ce = -(y * np.log2(np.maximum(q, LOG_FLOOR))).sum(axis=-1)
    if np.ndim(ce) == 0:
        return ce
    return ce.mean()


def batch_loss(model: CreINN, lower, upper, y, mode="train", update_stats=True):
    """Loss of a batch of interval inputs with class-index labels ``y``."""
    lo, hi = model.forward_bounds(IntervalTensor(lower, upper), mode, update_stats)
    q = credal_head(lo, hi)
    return cross_entropy_loss(q, _one_hot(y, model.spec.num_classes)), q


class SGD:
    def __init__(self, params, lr=1e-3):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.frozen:
                continue
            p.value = p.value - self.lr * p.grad
        _project(self.params)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.frozen:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        _project(self.params)


def _project(params):
    for p in params:
        if p.nonneg:
            p.value = np.maximum(p.value, 0.0)


def make_optimizer(params, config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(params, config.learning_rate)
    return Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)


def optimizer_step(optimizer):
    """One update followed by the radius projection ``radius = max(radius, 0)``."""
    optimizer.step()


def _interval_inputs(data):
    if hasattr(data, "lower"):
        return data.lower, data.upper, data.labels
    x = np.asarray(data.inputs, dtype=np.float64).reshape(len(data.labels), -1)
    return x, x, data.labels


def predict(model: CreINN, data, batch_size=512):
    """Interval SoftMax bounds and intersection probabilities for a dataset."""
    lo_in, hi_in, _ = _interval_inputs(data)
    lo_in = lo_in.reshape(len(lo_in), -1)
    hi_in = hi_in.reshape(len(hi_in), -1)
    los, his = [], []
    for s in range(0, len(lo_in), batch_size):
        lo, hi = model.forward_bounds(IntervalTensor(lo_in[s:s + batch_size], hi_in[s:s + batch_size]), "infer")
        los.append(lo)
        his.append(hi)
    lo, hi = np.concatenate(los), np.concatenate(his)
    return lo, hi, credal_head(lo, hi)


def evaluate(model: CreINN, data):
    """``(loss, accuracy)`` in inference mode."""
    _, _, labels = _interval_inputs(data)
    _, _, q = predict(model, data)
    loss = float(cross_entropy_loss(q, _one_hot(labels, model.spec.num_classes)))
    acc = float(np.mean(np.argmax(q, axis=-1) == labels))
    return loss, acc


def fit(model, train_data, valid_data, config: TrainConfig, callback=None):
    """Train ``model`` (a CreINN or a ModelSpec) and return ``(best_model, history)``.

    The best model is chosen by validation accuracy, ties broken by lower
    validation loss. ``history`` has one dict per epoch with ``epoch``,
    ``train_loss``, ``train_acc``, ``valid_loss``, ``valid_acc``.
    """
    if isinstance(model, ModelSpec):
        model = init_params(model, config.seed)
    lower, upper, labels = _interval_inputs(train_data)
    lower = lower.reshape(len(lower), -1)
    upper = upper.reshape(len(upper), -1)
    n = len(labels)
    if n == 0 or len(valid_data.labels) == 0:
        raise ValueError("training and validation data must be non-empty")
    if model.spec.has_ibn and config.batch_size < 2:
        raise ValueError("batch_size must be >= 2 with interval batch norm")

    rng = make_rng(config.seed + 1)
    opt = make_optimizer(model.params(), config)
    history = []
    best, best_key = None, None
    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr_at(epoch)
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            if model.spec.has_ibn and len(idx) < 2:
                continue
            tape = Tape()
            model.bind(tape)
            try:
                loss, q = batch_loss(model, lower[idx], upper[idx], labels[idx])
            except IntervalError as exc:
                model.unbind()
                raise NumericalError(f"{exc} at epoch {epoch}") from None
            value = float(value_of(loss))
            if not math.isfinite(value):
                model.unbind()
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}")
            backward(tape, loss)
            model.unbind()
            optimizer_step(opt)
            total += value * len(idx)
            correct += int(np.sum(np.argmax(value_of(q), axis=-1) == labels[idx]))
        v_loss, v_acc = evaluate(model, valid_data)
        row = {
            "epoch": epoch,
            "train_loss": total / n,
            "train_acc": correct / n,
            "valid_loss": v_loss,
            "valid_acc": v_acc,
        }
        history.append(row)
        if callback is not None:
            callback(model, row)
        key = (v_acc, -v_loss)
        if best_key is None or key > best_key:
            best, best_key = copy.deepcopy(model), key
    return best, history


def write_history_csv(history, path):
    fields = ["epoch", "train_loss", "train_acc", "valid_loss", "valid_acc"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(row[k])) if k != "epoch" else row[k]) for k in fields})
