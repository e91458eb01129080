"""Checkpoint files.

Layout::

    b"TFHTRCKP"              magic
    u32                      format version
    u64 + bytes              JSON header (UTF-8)
    u64                      number of tensor records
    per record: u32 + bytes  record name, then one tensor record
                             (see :mod:`tfhtr.serialization`)

The header holds the model and training configs, epoch, metrics, the
shuffling/dropout RNG state and the optimizer step. Tensor names are
prefixed ``param/``, ``adam_m/``, ``adam_v/`` or ``best/``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import ModelConfig, TrainConfig, from_dict, to_dict
from .errors import ParseError
from .serialization import read_array, write_array
from .tensor import dtype_for_precision

MAGIC = b"TFHTRCKP"
VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict[str, np.ndarray]
    epoch: int = 0                                   # epochs completed
    adam_step: int = 0
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict | None = None
    best_params: dict[str, np.ndarray] | None = None
    metrics: dict[str, Any] = field(default_factory=dict)

    def build_model(self):
        from .model import HTRModel

        model = HTRModel(self.model_config)
        model.load_state_dict(self.params)
        return model

    def best_model(self):
        from .model import HTRModel

        model = HTRModel(self.model_config)
        model.load_state_dict(self.best_params if self.best_params is not None else self.params)
        return model


def _records(ckpt: Checkpoint):
    for prefix, group in (("param", ckpt.params), ("adam_m", ckpt.adam_m),
                          ("adam_v", ckpt.adam_v), ("best", ckpt.best_params or {})):
        for name in sorted(group):
            yield f"{prefix}/{name}", group[name]


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    dtype = dtype_for_precision(ckpt.model_config.precision)
    header = {
        "model": to_dict(ckpt.model_config),
        "train": to_dict(ckpt.train_config),
        "epoch": ckpt.epoch,
        "adam_step": ckpt.adam_step,
        "precision": ckpt.model_config.precision,
        "rng_state": ckpt.rng_state,
        "metrics": ckpt.metrics,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    records = list(_records(ckpt))
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(records)))
        for name, arr in records:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            write_array(fh, arr, dtype)
    tmp.replace(path)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ParseError(f"truncated checkpoint: {what}")
    return data


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise ParseError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, hlen, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: corrupt header ({exc})") from None
        dtype = dtype_for_precision(header["precision"])
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "record count"))
        groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}, "best": {}}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "record name length"))
            name = _read_exact(fh, nlen, "record name").decode("utf-8")
            prefix, _, key = name.partition("/")
            if prefix not in groups:
                raise ParseError(f"{path}: unknown record {name!r}")
            groups[prefix][key] = read_array(fh, dtype)
    mcfg = from_dict(ModelConfig, header["model"])
    mcfg.validate()
    return Checkpoint(
        model_config=mcfg,
        train_config=from_dict(TrainConfig, header["train"]),
        params=groups["param"],
        epoch=header["epoch"],
        adam_step=header["adam_step"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        rng_state=header["rng_state"],
        best_params=groups["best"] or None,
        metrics=header["metrics"],
    )
