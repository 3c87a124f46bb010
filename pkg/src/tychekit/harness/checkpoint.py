"""Versioned checkpoint container.

Layout (all integers little-endian)::

    0   8 bytes   magic b"TYCHECKP"
    8   uint32    format version
    12  uint64    header length N
    20  N bytes   UTF-8 JSON header
    20+N          tensor data, concatenated

The header holds ``model_config``, ``train_state`` and a ``tensors`` list of
``{name, shape, dtype, offset, nbytes}``; offsets are relative to the start
of the data section, dtype is ``"<f4"`` or ``"<f8"`` and arrays are C-ordered.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..model import ModelConfig, TycheNet

MAGIC = b"TYCHECKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    train_state: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: TycheNet, train_state=None) -> "Checkpoint":
        params = {
            name: t.detach().cpu().numpy().copy() for name, t in model.state_dict().items()
        }
        return cls(model.config, params, dict(train_state or {}))

    def build_model(self) -> TycheNet:
        model = TycheNet(ModelConfig.from_dict(self.model_config.to_dict()))
        state = {name: torch.from_numpy(np.ascontiguousarray(a)) for name, a in self.params.items()}
        model.load_state_dict(state)
        return model

    def save(self, path) -> Path:
        path = Path(path)
        tensors, blobs, offset = [], [], 0
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name])
            dtype = "<f8" if arr.dtype == np.float64 else "<f4"
            data = arr.astype(dtype).tobytes(order="C")
            tensors.append(
                {"name": name, "shape": list(arr.shape), "dtype": dtype,
                 "offset": offset, "nbytes": len(data)}
            )
            blobs.append(data)
            offset += len(data)
        header = json.dumps(
            {
                "model_config": self.model_config.to_dict(),
                "train_state": self.train_state,
                "tensors": tensors,
            },
            sort_keys=True,
        ).encode("utf-8")
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
            fh.write(header)
            for data in blobs:
                fh.write(data)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        raw = path.read_bytes()
        if raw[:8] != MAGIC:
            raise CheckpointError(f"{path} is not a tychekit checkpoint")
        version, n = struct.unpack("<IQ", raw[8:20])
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint format v{version}, this build reads v{FORMAT_VERSION}"
            )
        header = json.loads(raw[20 : 20 + n].decode("utf-8"))
        base = 20 + n
        params = {}
        for t in header["tensors"]:
            start = base + t["offset"]
            buf = raw[start : start + t["nbytes"]]
            arr = np.frombuffer(buf, dtype=np.dtype(t["dtype"])).reshape(t["shape"])
            params[t["name"]] = arr.astype(arr.dtype.newbyteorder("="))
        config = ModelConfig.from_dict(header["model_config"])
        return cls(config, params, header.get("train_state", {}))
