"""Versioned binary checkpoint container.

Layout: magic string, u32 format version, canonical-JSON config (u32 length
prefix), u32 record count, then one record per stored array
(name, dtype code, dims, raw little-endian data), and a trailing SHA-256 of
everything before it. Weights, BN statistics and fold constants all
round-trip bitwise. Files are written atomically (temp file + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .model import ClassifyHead, Model, ResNetConfig, build_model

MAGIC = b"RABLCKPT"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def _named_arrays(model: Model) -> list[tuple[str, np.ndarray]]:
    """All persisted arrays in a fixed order (parameters, BN stats, folds)."""
    out: list[tuple[str, np.ndarray]] = []
    for addr in model.backbone_addresses():
        key = str(addr)
        cb = model.registry.get(addr)
        if cb is not None:
            out.append((f"{key}/kernel", cb.kernel.weights))
            out.append((f"{key}/bn/gamma", cb.bn.gamma))
            out.append((f"{key}/bn/beta", cb.bn.beta))
            out.append((f"{key}/bn/mean", cb.bn.running_mean))
            out.append((f"{key}/bn/var", cb.bn.running_var))
        elif addr in model.folded:
            out.append((f"{key}/folded", model.folded[addr]))
    if isinstance(model.head, ClassifyHead):
        out.append(("head/fc/weight", model.head.weight))
        out.append(("head/fc/bias", model.head.bias))
    else:
        for i, blk in enumerate(model.head.blocks):
            out.append((f"head/up{i}/kernel", blk.kernel.weights))
            out.append((f"head/up{i}/bn/gamma", blk.bn.gamma))
            out.append((f"head/up{i}/bn/beta", blk.bn.beta))
            out.append((f"head/up{i}/bn/mean", blk.bn.running_mean))
            out.append((f"head/up{i}/bn/var", blk.bn.running_var))
        out.append(("head/final/kernel", model.head.final_kernel.weights))
        out.append(("head/final/bias", model.head.final_bias))
    return out


def serialize_model(model: Model) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(model.config.to_dict(), sort_keys=True,
                     separators=(",", ":")).encode()
    chunks.append(struct.pack("<I", len(cfg)))
    chunks.append(cfg)
    records = _named_arrays(model)
    chunks.append(struct.pack("<I", len(records)))
    for name, arr in records:
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise CheckpointFormatError(f"cannot store dtype {arr.dtype} for {name}")
        nb = name.encode()
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes())
    payload = b"".join(chunks)
    return payload + hashlib.sha256(payload).digest()


def fingerprint(model: Model) -> str:
    """Stable hex identity of a model's exact weights, stats and config."""
    return hashlib.sha256(serialize_model(model)).hexdigest()


def save_checkpoint(model: Model, path) -> None:
    path = os.fspath(path)
    blob = serialize_model(model)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {len(self.buf)}, "
                f"needed {self.pos + n}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _parse(blob: bytes) -> tuple[ResNetConfig, dict[str, np.ndarray]]:
    if len(blob) < len(MAGIC) + 4:
        raise CheckpointTruncatedError("file shorter than the fixed header")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("bad magic bytes: not a checkpoint file")

    # structural pass first: declared lengths running past EOF mean truncation,
    # an intact structure with a wrong hash means corruption
    r = _Reader(blob)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version}, expected {VERSION}"
        )
    try:
        cfg_dict = json.loads(r.take(r.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"malformed config block: {e}") from None

    records: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode()
        code = r.u8()
        if code not in _CODE_DTYPES:
            raise CheckpointFormatError(f"unknown dtype code {code} for {name}")
        ndim = r.u8()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        dt = _CODE_DTYPES[code]
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(size * dt.itemsize), dtype=dt).reshape(shape)
        records[name] = arr.astype(dt.newbyteorder("="), copy=True)

    remaining = len(blob) - r.pos
    if remaining < 32:
        raise CheckpointTruncatedError("file ends before the trailing checksum")
    if remaining > 32:
        raise CheckpointFormatError(
            f"{remaining - 32} stray bytes between the records and the checksum"
        )
    if hashlib.sha256(blob[: r.pos]).digest() != blob[r.pos :]:
        raise CheckpointChecksumError("checksum mismatch: file corrupted")
    from .errors import ConfigError

    try:
        config = ResNetConfig.from_dict(cfg_dict)
    except ConfigError as e:
        raise CheckpointFormatError(f"invalid stored config: {e}") from None
    return config, records


def load_checkpoint(path) -> Model:
    """Restore a model bitwise from a checkpoint file."""
    with open(os.fspath(path), "rb") as f:
        blob = f.read()
    config, records = _parse(blob)

    dtype = records.get("stem/kernel", np.zeros(0, np.float32)).dtype
    model = build_model(config, dtype=np.dtype(dtype).type)

    def pull(name: str, expect_shape) -> np.ndarray:
        arr = records.pop(name, None)
        if arr is None:
            raise CheckpointFormatError(f"missing record {name!r}")
        if arr.shape != tuple(expect_shape):
            raise CheckpointFormatError(
                f"record {name!r} has shape {arr.shape}, expected {tuple(expect_shape)}"
            )
        return arr

    for addr in model.backbone_addresses():
        key = str(addr)
        cb = model.registry[addr]
        if f"{key}/folded" in records:
            const = records.pop(f"{key}/folded")
            if const.shape != (cb.kernel.out_channels,):
                raise CheckpointFormatError(f"fold constant {key} has wrong shape")
            del model.registry[addr]
            model.folded[addr] = const
            continue
        w = pull(f"{key}/kernel", cb.kernel.weights.shape)
        cb.kernel.weights = w
        cb.kernel.zeroed = not np.any(w)
        c = cb.bn.channels
        cb.bn.gamma = pull(f"{key}/bn/gamma", (c,))
        cb.bn.beta = pull(f"{key}/bn/beta", (c,))
        cb.bn.running_mean = pull(f"{key}/bn/mean", (c,))
        cb.bn.running_var = pull(f"{key}/bn/var", (c,))

    if isinstance(model.head, ClassifyHead):
        model.head.weight = pull("head/fc/weight", model.head.weight.shape)
        model.head.bias = pull("head/fc/bias", model.head.bias.shape)
    else:
        for i, blk in enumerate(model.head.blocks):
            blk.kernel.weights = pull(f"head/up{i}/kernel", blk.kernel.weights.shape)
            c = blk.bn.channels
            blk.bn.gamma = pull(f"head/up{i}/bn/gamma", (c,))
            blk.bn.beta = pull(f"head/up{i}/bn/beta", (c,))
            blk.bn.running_mean = pull(f"head/up{i}/bn/mean", (c,))
            blk.bn.running_var = pull(f"head/up{i}/bn/var", (c,))
        model.head.final_kernel.weights = pull(
            "head/final/kernel", model.head.final_kernel.weights.shape
        )
        model.head.final_bias = pull("head/final/bias", model.head.final_bias.shape)

    if records:
        raise CheckpointFormatError(
            f"unexpected records in checkpoint: {sorted(records)[:5]}"
        )
    return model
