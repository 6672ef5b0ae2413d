"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic           4 bytes  b"SWCK"
    version         u32      currently 1
    precision       u8       run mode the checkpoint was written under
    pretrained tag  u16 len + utf-8   reserved for imported weights ("")
    epoch           u32
    best_val_acc    f64
    config          u32 len + utf-8   serialized RunConfig text
    tensor count    u32
      per tensor:   name (u16 len + utf-8), ndim u8, dims u32 each,
                    float32 little-endian values
    has_optimizer   u8
      if 1: tensor count + tensor blocks (momentum buffers)
    crc32           u32      of every byte after the version field

Tensors are stored as float32 regardless of the run precision (the mode
is recorded in the header); loading under a 64-bit run upcasts. A
version mismatch is a hard error, never a silent migration; truncation
or corruption raises with the failing byte offset.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig, parse_config, serialize_config
from .errors import CheckpointError

MAGIC = b"SWCK"
VERSION = 1


@dataclass
class Checkpoint:
    config: RunConfig
    epoch: int
    best_val_acc: float
    precision: int
    params: dict[str, T.Tensor]
    momentum: dict[str, np.ndarray] | None
    pretrained_tag: str = ""


def _pack_str(text: str, width: str = "<H") -> bytes:
    raw = text.encode("utf-8")
    return struct.pack(width, len(raw)) + raw


def _pack_tensor(name: str, data: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(data, dtype="<f4")
    parts = [_pack_str(name), struct.pack("<B", arr.ndim)]
    parts.extend(struct.pack("<I", d) for d in arr.shape)
    parts.append(arr.tobytes())
    return b"".join(parts)


def checkpoint_save(
    path: str,
    params: dict[str, T.Tensor],
    config: RunConfig,
    epoch: int,
    best_val_acc: float,
    momentum: dict[str, np.ndarray] | None = None,
    pretrained_tag: str = "",
) -> None:
    body = [
        struct.pack("<B", 32 if T.get_dtype() == np.float32 else 64),
        _pack_str(pretrained_tag),
        struct.pack("<I", epoch),
        struct.pack("<d", best_val_acc),
        _pack_str(serialize_config(config), "<I"),
        struct.pack("<I", len(params)),
    ]
    body.extend(_pack_tensor(name, t.data) for name, t in params.items())
    if momentum is None:
        body.append(struct.pack("<B", 0))
    else:
        body.append(struct.pack("<B", 1))
        body.append(struct.pack("<I", len(momentum)))
        body.extend(_pack_tensor(name, arr) for name, arr in momentum.items())
    payload = b"".join(body)
    blob = MAGIC + struct.pack("<I", VERSION) + payload
    blob += struct.pack("<I", zlib.crc32(payload))
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob: bytes, offset: int = 0):
        self.blob = blob
        self.offset = offset

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointError("checkpoint truncated", offset=self.offset)
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self, width: str = "u16") -> str:
        n = self.u16() if width == "u16" else self.u32()
        return self.take(n).decode("utf-8")

    def tensor(self) -> tuple[str, np.ndarray]:
        name = self.string()
        ndim = self.u8()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = self.take(4 * count)
        # copy: frombuffer views are read-only, parameters must be writable
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        return name, arr


def checkpoint_load(path: str) -> Checkpoint:
    """Read a checkpoint; tensors come back in the current precision mode."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)", offset=0)
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} (expected {VERSION})"
        )
    if len(blob) < r.offset + 4:
        raise CheckpointError("checkpoint truncated", offset=len(blob))
    payload = blob[r.offset:-4]
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != stored_crc:
        raise CheckpointError("checkpoint CRC mismatch", offset=len(blob) - 4)

    precision = r.u8()
    pretrained_tag = r.string()
    epoch = r.u32()
    best_val_acc = r.f64()
    config = parse_config(r.string("u32"))
    params = {}
    for _ in range(r.u32()):
        name, arr = r.tensor()
        params[name] = T.Tensor(arr, requires_grad=True)
    momentum = None
    if r.u8():
        momentum = {}
        for _ in range(r.u32()):
            name, arr = r.tensor()
            momentum[name] = np.ascontiguousarray(arr, dtype=T.get_dtype())
    if r.offset != len(blob) - 4:
        raise CheckpointError("trailing bytes after checkpoint body", offset=r.offset)
    return Checkpoint(config, epoch, best_val_acc, precision, params,
                      momentum, pretrained_tag)


def verify_architecture(ckpt: Checkpoint) -> None:
    """Check the stored tensor names/shapes against the embedded config."""
    from .model import init_parameters

    expected = init_parameters(ckpt.config.swin(), seed=0)
    missing = sorted(set(expected) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"parameter names do not match the embedded config "
            f"(missing {missing[:3]}, extra {extra[:3]})"
        )
    for name, t in expected.items():
        if ckpt.params[name].shape != t.shape:
            raise CheckpointError(
                f"parameter '{name}' has shape {ckpt.params[name].shape}, "
                f"config implies {t.shape}"
            )
