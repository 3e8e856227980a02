"""Versioned single-file checkpoints.

Layout::

    bfly-checkpoint <version>\\n
    <one-line JSON header>\\n
    <raw little-endian parameter payloads, in header order>

The header carries the model configuration, seed, training metadata, fixed
buffers (permutations) and the name/shape/dtype of every payload array.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .train import ModelConfig, ShlModel

MAGIC = b"bfly-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: ShlModel
    seed: int
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def save_checkpoint(path, model: ShlModel, seed: int = 0, meta: dict | None = None) -> None:
    params = model.named_params()
    arrays = []
    for name, arr in params.items():
        arrays.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str})
    buffers = {
        f"{ln}.{bn}": np.asarray(b).tolist() for ln, layer in model.layers.items() for bn, b in layer.buffers().items()
    }
    if model.input_shift is not None:
        buffers["model.input_shift"] = model.input_shift.astype(np.float64).tolist()
    header = {
        "format_version": FORMAT_VERSION,
        "model": asdict(model.config),
        "dtype": np.dtype(model.dtype).name,
        "seed": seed,
        "meta": meta or {},
        "buffers": buffers,
        "arrays": arrays,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" " + str(FORMAT_VERSION).encode() + b"\n")
        fh.write(json.dumps(header).encode() + b"\n")
        for spec, arr in zip(arrays, params.values()):
            fh.write(np.ascontiguousarray(arr, dtype=spec["dtype"]).tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    first, sep, rest = raw.partition(b"\n")
    parts = first.split(b" ")
    if not sep or len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        version = int(parts[1])
    except ValueError:
        raise CheckpointError(f"{path}: unreadable format version {parts[1]!r}") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    line, sep, payload = rest.partition(b"\n")
    if not sep:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None

    sizes = [int(np.prod(a["shape"], dtype=np.int64)) * np.dtype(a["dtype"]).itemsize for a in header["arrays"]]
    if sum(sizes) != len(payload):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header describes {sum(sizes)}")

    config = ModelConfig(**header["model"])
    dtype = np.dtype(header["dtype"])
    model = ShlModel.create(config, np.random.default_rng(0), dtype)
    params = model.named_params()
    if [a["name"] for a in header["arrays"]] != list(params):
        raise CheckpointError(f"{path}: parameter names do not match the configured model")
    offset = 0
    for spec, size in zip(header["arrays"], sizes):
        target = params[spec["name"]]
        if list(target.shape) != spec["shape"]:
            raise CheckpointError(f"{path}: {spec['name']} has shape {spec['shape']}, model expects {target.shape}")
        target[...] = np.frombuffer(payload, dtype=spec["dtype"], count=size // np.dtype(spec["dtype"]).itemsize,
                                    offset=offset).reshape(spec["shape"])
        offset += size
    for ln, layer in model.layers.items():
        prefix = ln + "."
        layer.load_buffers({k[len(prefix):]: np.asarray(v) for k, v in header["buffers"].items() if k.startswith(prefix)})
    if "model.input_shift" in header["buffers"]:
        model.input_shift = np.asarray(header["buffers"]["model.input_shift"], dtype=np.float64).astype(dtype)
    return Checkpoint(model=model, seed=header["seed"], meta=header["meta"], version=version)
