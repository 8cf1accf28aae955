"""Datasets and interval-input construction."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .training import make_rng

__all__ = [
    "LabeledDataset",
    "IntervalDataset",
    "IdxFormatError",
    "synth_blobs",
    "synth_ood",
    "blob_centers",
    "with_label_noise",
    "FeatureMap",
    "to_unit_box",
    "standardize",
    "split",
    "load_idx",
    "save_idx",
    "make_interval_noise",
    "make_interval_brightness",
    "adjust_brightness",
    "NOISE_LEVELS",
    "BRIGHTNESS_LEVELS",
    "NOISE_PAIRS",
    "BRIGHTNESS_PAIRS",
]

NOISE_LEVELS = (0.0, 0.08, 0.12, 0.16, 0.18, 0.2)
BRIGHTNESS_LEVELS = (0.0, 0.05, 0.1, 0.15, 0.2, 0.3)
NOISE_PAIRS = ((0.0, 0.08), (0.12, 0.16), (0.16, 0.18), (0.18, 0.2))
BRIGHTNESS_PAIRS = ((0.0, 0.05), (0.1, 0.15), (0.15, 0.2), (0.2, 0.3))

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    name: str = ""
    num_classes: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    @property
    def feature_shape(self):
        return self.inputs.shape[1:]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.name, self.num_classes, dict(self.meta))


@dataclass
class IntervalDataset:
    lower: np.ndarray
    upper: np.ndarray
    labels: np.ndarray
    kind: str = "noise"
    levels: tuple = (0.0, 0.0)
    name: str = ""
    num_classes: int = 0

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "IntervalDataset":
        return IntervalDataset(self.lower[idx], self.upper[idx], self.labels[idx], self.kind,
                               self.levels, self.name, self.num_classes)


def blob_centers(num_classes: int, separation: float) -> np.ndarray:
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    return separation * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def synth_blobs(num_classes=3, n_per_class=200, separation=4.0, seed=0, sigma=1.0) -> LabeledDataset:
    """Isotropic 2-D Gaussian clusters evenly spaced on a circle of radius ``separation``."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    rng = make_rng(seed)
    centers = blob_centers(num_classes, separation)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    x = centers[labels] + sigma * rng.standard_normal((len(labels), 2))
    order = rng.permutation(len(labels))
    return LabeledDataset(x[order], labels[order], "blobs", num_classes,
                          {"separation": separation, "sigma": sigma, "seed": seed})


def synth_ood(n=200, offset=10.0, seed=0, num_classes=3, separation=4.0, sigma=1.0) -> LabeledDataset:
    """Gaussian cluster at least ``offset`` away from every blob center.

    The center sits between the first two blobs at radius ``separation +
    offset``. Labels are -1 (no in-distribution class).
    """
    rng = make_rng(seed)
    angle = np.pi / num_classes
    center = (separation + offset) * np.array([np.cos(angle), np.sin(angle)])
    x = center + sigma * rng.standard_normal((n, 2))
    return LabeledDataset(x, -np.ones(n, dtype=int), "ood", num_classes,
                          {"center": center.tolist(), "offset": offset, "seed": seed})


def with_label_noise(data: LabeledDataset, rate: float, seed=0) -> LabeledDataset:
    """Replace a ``rate`` fraction of labels by a different, uniformly drawn class."""
    rng = make_rng(seed)
    labels = data.labels.copy()
    flip = rng.random(len(labels)) < rate
    shift = rng.integers(1, data.num_classes, size=len(labels))
    labels[flip] = (labels[flip] + shift[flip]) % data.num_classes
    out = LabeledDataset(data.inputs, labels, data.name, data.num_classes, dict(data.meta))
    out.meta["label_noise"] = rate
    return out


@dataclass
class FeatureMap:
    """Per-feature affine map ``x -> (x - shift) / scale``, optionally clipped to [0, 1].

    ``scale`` is positive, so the map is increasing and keeps interval
    bounds ordered.
    """

    shift: np.ndarray
    scale: np.ndarray
    clip: bool = False

    @classmethod
    def unit_box(cls, x, margin=0.25) -> "FeatureMap":
        lo, hi = x.min(axis=0), x.max(axis=0)
        pad = margin * (hi - lo)
        span = (hi + pad) - (lo - pad)
        return cls(lo - pad, np.where(span > 0, span, 1.0), clip=True)

    @classmethod
    def standardize(cls, x) -> "FeatureMap":
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 0, sd, 1.0), clip=False)

    def _map(self, x):
        y = (x - self.shift) / self.scale
        return np.clip(y, 0.0, 1.0) if self.clip else y

    def __call__(self, data):
        if isinstance(data, IntervalDataset):
            return IntervalDataset(self._map(data.lower), self._map(data.upper), data.labels,
                                   data.kind, data.levels, data.name, data.num_classes)
        return LabeledDataset(self._map(data.inputs), data.labels, data.name, data.num_classes, dict(data.meta))


def _features(data):
    return data.inputs if hasattr(data, "inputs") else 0.5 * (data.lower + data.upper)


def to_unit_box(reference, *others, margin=0.25):
    """Map features into [0, 1] using ``reference``'s range widened by ``margin``.

    Values outside the padded range are clipped. Returns the mapped datasets
    in the order given.
    """
    fmap = FeatureMap.unit_box(_features(reference), margin)
    return [fmap(d) for d in (reference,) + others]


def standardize(reference, *others):
    """Shift and scale features by ``reference``'s per-feature mean and std."""
    fmap = FeatureMap.standardize(_features(reference))
    return [fmap(d) for d in (reference,) + others]


def split(data, valid_fraction=1 / 6, seed=0):
    """Shuffle and split into ``(train, valid)``; the default is the 5:1 split."""
    rng = make_rng(seed)
    order = rng.permutation(len(data))
    n_valid = int(round(len(data) * valid_fraction))
    return data.subset(order[n_valid:]), data.subset(order[:n_valid])


class IdxFormatError(ValueError):
    pass


def _read_idx(path, expected_magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise IdxFormatError(f"{path}: truncated body, expected {count} bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(images_path, labels_path, name="idx") -> LabeledDataset:
    """Read an IDX image/label file pair (unsigned-byte data); pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    c = int(labels.max()) + 1 if len(labels) else 0
    return LabeledDataset(images.astype(np.float64) / 255.0, labels, name, c)


def save_idx(images, labels, images_path, labels_path):
    """Write uint8 images ``(n, rows, cols)`` and labels ``(n,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def make_interval_noise(data: LabeledDataset, mu1: float, mu2: float) -> IntervalDataset:
    """Inputs shifted by an unknown disturbance in ``[mu1, mu2]``, clipped to [0, 1]."""
    if not 0 <= mu1 <= mu2:
        raise ValueError("need 0 <= mu1 <= mu2")
    x = data.inputs
    return IntervalDataset(np.clip(x + mu1, 0.0, 1.0), np.clip(x + mu2, 0.0, 1.0), data.labels,
                           "noise", (mu1, mu2), data.name, data.num_classes)


def adjust_brightness(images, beta):
    """Add ``beta`` to the HSV value channel of RGB images in [0, 1]."""
    hsv = rgb_to_hsv(np.clip(images, 0.0, 1.0))
    hsv[..., 2] = np.clip(hsv[..., 2] + beta, 0.0, 1.0)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def make_interval_brightness(data: LabeledDataset, beta1: float, beta2: float) -> IntervalDataset:
    """Inputs under an unknown brightness shift in ``[beta1, beta2]``."""
    if data.inputs.ndim < 2 or data.inputs.shape[-1] != 3:
        raise ValueError("brightness intervals need RGB images (last axis of size 3)")
    if not 0 <= beta1 <= beta2:
        raise ValueError("need 0 <= beta1 <= beta2")
    lo = adjust_brightness(data.inputs, beta1)
    hi = adjust_brightness(data.inputs, beta2)
    # the V-shift is monotone per channel; min/max guards round-off only
    return IntervalDataset(np.minimum(lo, hi), np.maximum(lo, hi), data.labels,
                           "brightness", (beta1, beta2), data.name, data.num_classes)
