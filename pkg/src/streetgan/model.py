"""Model graph: an ordered layer stack with a named parameter registry,
plus the JSON checkpoint container shared by the GANs and the classifier.

Checkpoints are a single JSON document holding the architecture tag, the
build arguments, a training-config snapshot, and every parameter and
normalization buffer as base64-encoded little-endian float32 bytes, so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .tensor import DTYPE

CHECKPOINT_FORMAT = "streetgan-checkpoint-v1"


class ModelGraph:
    """Sequential stack of layers with stable parameter names."""

    def __init__(self, tag: str, layers: list, arch: dict):
        self.tag = tag
        self.layers = layers
        self.arch = dict(arch)  # build arguments, enough to reconstruct
        self._registry = []
        names = set()
        for i, layer in enumerate(self.layers):
            prefix = f"{i}.{type(layer).__name__}"
            for name, p in layer.params():
                full = f"{prefix}.{name}"
                if full in names:
                    raise ValueError(f"duplicate parameter name {full}")
                names.add(full)
                self._registry.append((full, p))

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params(self) -> list:
        return list(self._registry)

    def buffers(self) -> list:
        out = []
        for i, layer in enumerate(self.layers):
            for name, buf in layer.buffers():
                out.append((f"{i}.{type(layer).__name__}.{name}", layer, name, buf))
        return out

    def n_params(self) -> int:
        return sum(p.value.size for _, p in self._registry)


def _encode(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=DTYPE)
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f4").tobytes()).decode("ascii"),
    }


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    arr = np.frombuffer(raw, dtype="<f4").astype(DTYPE)
    return arr.reshape(entry["shape"]).copy()


def save_checkpoint(model: ModelGraph, path, config: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "tag": model.tag,
        "arch": model.arch,
        "config": config or {},
        "params": {name: _encode(p.value) for name, p in model.params()},
        "buffers": {name: _encode(buf) for name, _, _, buf in model.buffers()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ModelGraph, dict]:
    """Rebuild a model from a checkpoint; returns (model, config snapshot)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a recognized checkpoint file: {path}")
    model = build_from_arch(doc["tag"], doc["arch"])
    params = dict(model.params())
    for name, entry in doc["params"].items():
        if name not in params:
            raise ValueError(f"checkpoint parameter {name!r} not in architecture "
                             f"{doc['tag']!r}")
        value = _decode(entry)
        if value.shape != params[name].value.shape:
            raise ValueError(f"checkpoint parameter {name!r} has shape "
                             f"{value.shape}, expected {params[name].value.shape}")
        params[name].value[...] = value
    buffers = {name: (layer, attr) for name, layer, attr, _ in model.buffers()}
    for name, entry in doc["buffers"].items():
        if name not in buffers:
            raise ValueError(f"checkpoint buffer {name!r} not in architecture")
        layer, attr = buffers[name]
        setattr(layer, attr, _decode(entry))
    return model, doc.get("config", {})


def build_from_arch(tag: str, arch: dict) -> ModelGraph:
    """Dispatch to the architecture builders; import here to avoid cycles."""
    from . import classifier, cyclegan, dcgan

    if tag in ("dcgan_gen", "dcgan_disc"):
        return dcgan.build_one(tag, arch)
    if tag in ("cyc_gen_AB", "cyc_gen_BA", "cyc_disc_A", "cyc_disc_B"):
        return cyclegan.build_one(tag, arch)
    if tag == "resnetv2":
        return classifier.build_one(arch)
    raise ValueError(f"unknown architecture tag {tag!r}")
