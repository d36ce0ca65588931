"""Binary checkpoints: named float64 tensors plus a JSON metadata block.

Layout (little-endian): magic ``RMCK``, u32 version=1, u32 tensor count;
per tensor a u16 name length, the UTF-8 name, u8 ndim, u32 dims, then
the float64 payload row-major; finally a u32-length-prefixed UTF-8 JSON
blob holding the model configuration and training history. Round trips
are byte-exact.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .dataio import atomic_write
from .errors import FormatError, ShapeError
from .model import EpochStats, RmenConfig, parameter_shapes
from .numerics import Tensor

CHECKPOINT_MAGIC = b"RMCK"
CHECKPOINT_VERSION = 1


def config_to_dict(config: RmenConfig) -> dict:
    out = dataclasses.asdict(config)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    return out


def config_from_dict(blob: dict) -> RmenConfig:
    kwargs = dict(blob)
    for key in ("encoder_channels", "convlstm_hidden", "dense_widths"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return RmenConfig(**kwargs)
    except TypeError as exc:
        raise FormatError(f"unknown model config field ({exc})") from exc


def save_checkpoint(params: dict[str, Tensor], config: RmenConfig,
                    history: list[EpochStats], path) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    meta = json.dumps(
        {
            "config": config_to_dict(config),
            "history": [dataclasses.asdict(h) for h in history],
        },
        sort_keys=True,
    ).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta)))
    chunks.append(meta)
    atomic_write(path, b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected: RmenConfig | None = None):
    """Read (params, config, history); optionally vet shapes against a config."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, count = r.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        size = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(dims)
        params[name] = Tensor(data.copy(), requires_grad=True)
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    if r.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.pos} trailing bytes")
    config = config_from_dict(meta["config"])
    history = [EpochStats(**h) for h in meta["history"]]
    if expected is not None:
        _check_shapes(params, expected, path)
    else:
        _check_shapes(params, config, path)
    return params, config, history


def _check_shapes(params: dict[str, Tensor], config: RmenConfig, path) -> None:
    wanted = parameter_shapes(config)
    for name, shape in wanted.items():
        if name not in params:
            raise ShapeError(f"{path}: checkpoint is missing tensor {name!r}")
        got = tuple(params[name].data.shape)
        if got != shape:
            raise ShapeError(
                f"{path}: tensor {name!r} has shape {got}, config expects {shape}"
            )
    extra = set(params) - set(wanted)
    if extra:
        raise ShapeError(f"{path}: unexpected tensors {sorted(extra)}")
