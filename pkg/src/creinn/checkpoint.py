"""Model persistence.

A checkpoint is one JSON header line followed by a binary body::

    {"format_version": 1, "spec": "2x16:relu:0;...", "spec_digest": "...", ...}\\n
    <float32 little-endian arrays>

The body holds, per layer, weight center, weight radius, bias center and
bias radius, then (for layers with interval batch norm) gamma_c, beta_c,
gamma_r, beta_r and the four running statistics. Array shapes follow from
the ModelSpec, so the body carries no framing of its own.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .layers import CreINN, ModelSpec

__all__ = ["FORMAT_VERSION", "CheckpointError", "Checkpoint", "save_checkpoint", "load_checkpoint", "spec_digest"]

FORMAT_VERSION = 1
MAGIC = "creinn-checkpoint"
BODY_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def spec_digest(spec: ModelSpec) -> str:
    return hashlib.sha256(spec.describe().encode()).hexdigest()[:16]


def _arrays(model: CreINN):
    out = []
    for layer in model.layers:
        out += [layer.weight.center, layer.weight.radius, layer.bias.center, layer.bias.radius]
        if layer.ibn is not None:
            out += [p.value for p in layer.ibn.params()] + layer.ibn.stats()
    return out


def _assign(model: CreINN, arrays):
    it = iter(arrays)
    for layer in model.layers:
        for ip in (layer.weight, layer.bias):
            ip.c.value = next(it)
            ip.r.value = next(it)
        if layer.ibn is not None:
            for p in layer.ibn.params():
                p.value = next(it)
            ibn = layer.ibn
            ibn.running_mean_c, ibn.running_var_c = next(it), next(it)
            ibn.running_mean_r, ibn.running_var_r = next(it), next(it)


class Checkpoint:
    """A model plus the metadata needed to reuse it (seed, dataset, preprocessing)."""

    def __init__(self, model: CreINN, seed=0, meta=None):
        self.model = model
        self.seed = int(seed)
        self.meta = dict(meta or {})

    @property
    def spec(self) -> ModelSpec:
        return self.model.spec

    def to_bytes(self) -> bytes:
        header = {
            "magic": MAGIC,
            "format_version": FORMAT_VERSION,
            "spec": self.spec.describe(),
            "spec_digest": spec_digest(self.spec),
            "seed": self.seed,
            "meta": self.meta,
        }
        line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
        body = b"".join(np.ascontiguousarray(a, dtype=BODY_DTYPE).tobytes() for a in _arrays(self.model))
        return line.encode("ascii") + body

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        end = raw.find(b"\n")
        if end < 0:
            raise CheckpointError("missing header line")
        try:
            header = json.loads(raw[:end].decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable header: {exc}") from None
        if header.get("magic") != MAGIC:
            raise CheckpointError("not a checkpoint file")
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format_version {header.get('format_version')}")
        spec = ModelSpec.parse(header["spec"])
        if spec_digest(spec) != header.get("spec_digest"):
            raise CheckpointError("spec digest mismatch")
        model = CreINN(spec)
        shapes = [a.shape for a in _arrays(model)]
        body = np.frombuffer(raw, dtype=BODY_DTYPE, offset=end + 1)
        expected = sum(int(np.prod(s)) for s in shapes)
        if body.size != expected:
            raise CheckpointError(f"body has {body.size} values, spec needs {expected}")
        arrays, pos = [], 0
        for shape in shapes:
            n = int(np.prod(shape))
            arrays.append(body[pos:pos + n].astype(np.float64).reshape(shape))
            pos += n
        _assign(model, arrays)
        if any(np.any(l.weight.radius < 0) or np.any(l.bias.radius < 0) for l in model.layers):
            raise CheckpointError("negative radius in checkpoint")
        return cls(model, header.get("seed", 0), header.get("meta", {}))


def save_checkpoint(path, model: CreINN, seed=0, meta=None):
    data = Checkpoint(model, seed, meta).to_bytes()
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return Checkpoint.from_bytes(fh.read())
