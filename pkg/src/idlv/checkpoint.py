"""Binary model checkpoints.

Layout (little-endian)::

    magic "IDLV-CKPT" | u32 version
    u32 n | n bytes architecture descriptor (JSON, sorted keys)
    f64 margin | u8 has_threshold | f64 threshold | u64 seed | u32 epochs
    u32 tensor count, then per tensor:
        u32 layer index | u32 n | n bytes name | u32 ndim | ndim x u32 dims | f64 values
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Architecture, ParamStore
from .errors import CheckpointError, ShapeError
from .siamese import SiameseModel

MAGIC = b"IDLV-CKPT"
VERSION = 1


@dataclass
class CheckpointMeta:
    margin: float = 1.0
    threshold: float | None = None
    seed: int = 0
    epochs: int = 0


def checkpoint_bytes(model: SiameseModel, meta: CheckpointMeta) -> bytes:
    arch = json.dumps(model.architecture.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(arch)), arch]
    has_tau = meta.threshold is not None
    out.append(
        struct.pack("<dBdQI", meta.margin, has_tau, meta.threshold if has_tau else 0.0, meta.seed, meta.epochs)
    )
    tensors = list(model.store.items())
    out.append(struct.pack("<I", len(tensors)))
    for i, name, p, _ in tensors:
        raw = name.encode()
        out.append(struct.pack(f"<II{len(raw)}sI{p.ndim}I", i, len(raw), raw, p.ndim, *p.shape))
        out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(model: SiameseModel, meta: CheckpointMeta, path):
    """Write atomically: the file is either the old or the complete new checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, meta))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def parse_checkpoint(data: bytes) -> tuple[SiameseModel, CheckpointMeta]:
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    r = _Reader(data)
    r.take(len(MAGIC))
    version, n = r.unpack("II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        arch = Architecture.from_dict(json.loads(r.take(n)))
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad architecture descriptor: {exc}") from None
    margin, has_tau, tau, seed, epochs = r.unpack("dBdQI")
    (count,) = r.unpack("I")
    params: dict[int, dict[str, np.ndarray]] = {}
    for _ in range(count):
        i, n = r.unpack("II")
        name = r.take(n).decode()
        (ndim,) = r.unpack("I")
        shape = r.unpack(f"{ndim}I")
        size = int(np.prod(shape))
        values = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        params.setdefault(i, {})[name] = values
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint tensors")
    try:
        model = SiameseModel(arch, ParamStore(params))
    except ShapeError as exc:
        raise CheckpointError(f"parameters inconsistent with architecture: {exc}") from None
    return model, CheckpointMeta(margin, tau if has_tau else None, seed, epochs)


def load_checkpoint(path) -> tuple[SiameseModel, CheckpointMeta]:
    return parse_checkpoint(Path(path).read_bytes())
