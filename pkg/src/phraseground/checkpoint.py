"""Checkpoint serialization.

Format: one UTF-8 JSON manifest line (config, vocab, class names, the ordered
parameter list with shapes, Adam step counters) followed by the concatenated
little-endian float32 buffers in manifest order. Adam moment buffers travel
as extra entries named ``adam.m:<param>`` / ``adam.v:<param>`` so that
resuming training is bit-identical to never having stopped.
"""

from __future__ import annotations

import json

import numpy as np

from .data import Vocabulary
from .errors import SchemaError
from .model import GroundingModel, ModelConfig


def save_checkpoint(path: str, model: GroundingModel, vocab: Vocabulary,
                    class_names: list[str]) -> None:
    entries = []
    buffers = []
    for p in model.store:
        entries.append({"name": p.name, "shape": list(p.tensor.data.shape)})
        buffers.append(p.tensor.data)
        entries.append({"name": f"adam.m:{p.name}", "shape": list(p.m.shape)})
        buffers.append(p.m)
        entries.append({"name": f"adam.v:{p.name}", "shape": list(p.v.shape)})
        buffers.append(p.v)
    manifest = {
        "config": model.cfg.to_dict(),
        "vocab": vocab.to_list(),
        "classes": list(class_names),
        "params": entries,
        "adam_steps": {p.name: p.step for p in model.store},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        for buf in buffers:
            fh.write(np.ascontiguousarray(buf, dtype="<f4").tobytes())


def load_checkpoint(path: str):
    """Returns (manifest dict, {name: float32 array})."""
    with open(path, "rb") as fh:
        header = fh.readline()
        manifest = json.loads(header.decode("utf-8"))
        raw = fh.read()
    arrays = {}
    offset = 0
    for entry in manifest["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = offset + 4 * count
        if end > len(raw):
            raise SchemaError(f"checkpoint truncated at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(
            entry["shape"]
        ).copy()
        offset = end
    if offset != len(raw):
        raise SchemaError("checkpoint has trailing bytes")
    return manifest, arrays


def model_from_checkpoint(path: str):
    """Rebuild (model, vocab, class_names) with optimizer state restored."""
    manifest, arrays = load_checkpoint(path)
    cfg = ModelConfig.from_dict(manifest["config"])
    model = GroundingModel(cfg)
    for p in model.store:
        for key in (p.name, f"adam.m:{p.name}", f"adam.v:{p.name}"):
            if key not in arrays:
                raise SchemaError(f"checkpoint missing parameter {key}")
            if arrays[key].shape != p.tensor.data.shape:
                raise SchemaError(f"shape mismatch for {key}")
        p.tensor.data[...] = arrays[p.name]
        p.m = arrays[f"adam.m:{p.name}"]
        p.v = arrays[f"adam.v:{p.name}"]
        p.step = int(manifest["adam_steps"][p.name])
    vocab = Vocabulary.from_list(manifest["vocab"])
    return model, vocab, list(manifest["classes"])
