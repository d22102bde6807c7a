"""Versioned checkpoint files.

Layout::

    DCHA-CKPT-1\\n
    <one line of JSON: {"meta": ..., "tensors": [[path, shape], ...]}>\\n
    <float64 little-endian data for each tensor, in header order>

The JSON is written with sorted keys so identical models give identical bytes.
"""

import dataclasses
import json
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .errors import CheckpointError
from .model import ModelConfig, build_model

MAGIC = b"DCHA-CKPT-1"


def save_arrays(path, arrays, meta=None):
    path = Path(path)
    header = {
        "meta": meta or {},
        "tensors": [[name, list(np.shape(a))] for name, a in arrays.items()],
    }
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC + b"\n")
            fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
            for a in arrays.values():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from exc
    return path


def load_arrays(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    first = raw.find(b"\n")
    if raw[:first] != MAGIC:
        raise CheckpointError(f"{path}: not a DCHA-CKPT-1 file")
    second = raw.find(b"\n", first + 1)
    header = json.loads(raw[first + 1:second])
    pos = second + 1
    arrays = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        if pos + 8 * n > len(raw):
            raise CheckpointError(f"{path}: truncated at tensor {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    return arrays, header["meta"]


def model_config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def model_config_from_dict(d):
    d = dict(d)
    d["backbone"] = BackboneConfig(**d["backbone"])
    return ModelConfig(**d)


def save_model(path, model, extra=None):
    meta = {"model": model_config_to_dict(model.cfg)}
    if extra:
        meta.update(extra)
    arrays = {name: t.data for name, t in model.named_parameters().items()}
    return save_arrays(path, arrays, meta)


def load_model(path):
    arrays, meta = load_arrays(path)
    if "model" not in meta:
        raise CheckpointError(f"{path}: no model config in checkpoint")
    model = build_model(model_config_from_dict(meta["model"]))
    params = model.named_parameters()
    if set(params) != set(arrays):
        missing = sorted(set(params) ^ set(arrays))
        raise CheckpointError(f"{path}: parameter set mismatch, e.g. {missing[:3]}")
    for name, t in params.items():
        if t.shape != arrays[name].shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = arrays[name]
    return model
