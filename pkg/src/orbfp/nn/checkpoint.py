"""Checkpoint files.

Layout::

    b"ORBC" | u32 header length | UTF-8 JSON header | raw tensor data

The JSON header holds ``format_version``, the model config, training
metadata and a tensor directory of ``{name, shape, offset, nbytes}`` entries,
with offsets relative to the start of the data block. Tensor data is
little-endian float32. Files are written to a temporary name and renamed, so
an interrupted write never replaces the previous checkpoint.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, ParameterError
from .model import EmbeddingModel, ModelConfig
from .optim import AdamState

MAGIC = b"ORBC"
FORMAT_VERSION = 1
_LEN = struct.Struct("<I")


class CheckpointError(DataError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    best_val_auc: float | None = None
    adam: AdamState | None = None
    meta: dict = field(default_factory=dict)

    def build_model(self) -> EmbeddingModel:
        model = EmbeddingModel(self.config)
        model.load_state_dict(self.params)
        return model


def save(path, ckpt: Checkpoint) -> None:
    tensors: list[tuple[str, np.ndarray]] = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    if ckpt.adam is not None:
        tensors += [(f"adam.m/{k}", v) for k, v in ckpt.adam.m.items()]
        tensors += [(f"adam.v/{k}", v) for k, v in ckpt.adam.v.items()]
    directory, offset = [], 0
    blobs = []
    for name, arr in tensors:
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "step": int(ckpt.step),
        "epoch": int(ckpt.epoch),
        "best_val_auc": ckpt.best_val_auc,
        "adam_t": None if ckpt.adam is None else int(ckpt.adam.t),
        "meta": ckpt.meta,
        "tensors": directory,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + _LEN.pack(len(raw)) + raw)
        for blob in blobs:
            fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)[0]


def _read_header(fh) -> tuple[dict, int]:
    head = fh.read(4 + _LEN.size)
    if len(head) < 4 + _LEN.size or head[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (n,) = _LEN.unpack(head[4:])
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    return header, 4 + _LEN.size + n


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        header, start = _read_header(fh)
        data = fh.read()
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(data):
            raise CheckpointError(f"truncated tensor data for {entry['name']}")
        arr = np.frombuffer(data[entry["offset"] : end], dtype="<f4").reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.float32)
    try:
        config = ModelConfig.from_dict(header["config"])
    except (TypeError, ParameterError) as exc:
        raise CheckpointError(f"checkpoint config is invalid: {exc}") from exc

    def group(prefix):
        return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}

    adam = None
    if header.get("adam_t") is not None:
        adam = AdamState(header["adam_t"], group("adam.m/"), group("adam.v/"))
    return Checkpoint(
        config=config,
        params=group("param/"),
        step=header["step"],
        epoch=header["epoch"],
        best_val_auc=header["best_val_auc"],
        adam=adam,
        meta=header.get("meta", {}),
    )


def from_model(model: EmbeddingModel, **kwargs) -> Checkpoint:
    return Checkpoint(model.config, model.state_dict(), **kwargs)
