"""Binary checkpoint format.

Layout (all little-endian):
  magic  b"EVCK"
  u32    version (1)
  u32    tensor count
  per tensor:
    u16  name length, then name bytes (utf-8)
    u8   rank
    u32  dim, repeated rank times
    f32  payload, row-major
  u32    config text length, then config bytes (utf-8)

Tensors cover trainable parameters and batch-norm running statistics, so a
round trip reproduces eval outputs bit for bit.
"""

from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"EVCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dump_tensors(tensors: dict[str, np.ndarray], config_text: str) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr32.ndim))
        for d in arr32.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr32.tobytes())
    cb = config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(cb)))
    buf.write(cb)
    return buf.getvalue()


def load_tensors(blob: bytes) -> tuple[dict[str, np.ndarray], str]:
    buf = io.BytesIO(blob)
    if buf.read(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, count = struct.unpack("<II", buf.read(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", buf.read(2))
        name = buf.read(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", buf.read(1))
        dims = struct.unpack(f"<{rank}I", buf.read(4 * rank)) if rank else ()
        n = int(np.prod(dims)) if rank else 1
        payload = buf.read(4 * n)
        if len(payload) != 4 * n:
            raise CheckpointError(f"truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    (clen,) = struct.unpack("<I", buf.read(4))
    config_text = buf.read(clen).decode("utf-8")
    return tensors, config_text


def save_checkpoint(path, model, config_text: str):
    tensors = {name: p.data for name, p in model.named_parameters()}
    for name, buf in model.named_buffers():
        tensors[name] = buf
    with open(path, "wb") as fh:
        fh.write(dump_tensors(tensors, config_text))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str]:
    with open(path, "rb") as fh:
        return load_tensors(fh.read())


def restore_model(model, tensors: dict[str, np.ndarray]):
    """Copy saved tensors into a freshly built model of matching structure."""
    for name, p in model.named_parameters():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        if tensors[name].shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {tensors[name].shape} "
                f"vs model {p.data.shape}")
        p.data = tensors[name].astype(p.data.dtype)
    for name, _ in model.named_buffers():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing buffer {name!r}")
    _assign_buffers(model, tensors, prefix="")


def _assign_buffers(module, tensors, prefix):
    for bname in list(module._buffers):
        full = prefix + bname
        module._set_buffer(bname, tensors[full].copy())
    for cname, child in module._children.items():
        _assign_buffers(child, tensors, prefix + cname + ".")
