"""CRTF tensor files and plain-text manifests.

Layout: magic ``CRTF``, version byte 0x01, dtype byte 0x01 (little-endian
float32), ndim byte, one reserved byte, ndim little-endian uint64 dims,
then the row-major payload. All persistence in this repo uses it.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CRTF"
VERSION = 0x01
DTYPE_F32 = 0x01


class CrtfError(ValueError):
    pass


def save_tensor(path: str | Path, array: np.ndarray):
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim > 255:
        raise CrtfError(f"too many dimensions: {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION, DTYPE_F32, arr.ndim, 0]))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def load_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CrtfError(f"bad magic {raw[:4]!r} in {path}")
    version, dtype, ndim, _ = raw[4:8]
    if version != VERSION:
        raise CrtfError(f"unsupported version {version} in {path}")
    if dtype != DTYPE_F32:
        raise CrtfError(f"dtype mismatch: expected {DTYPE_F32}, got {dtype} in {path}")
    header_end = 8 + 8 * ndim
    shape = struct.unpack(f"<{ndim}Q", raw[8:header_end])
    expected = int(np.prod(shape)) * 4 if ndim else 4
    payload = raw[header_end:]
    if len(payload) != expected:
        raise CrtfError(
            f"truncated payload in {path}: expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def save_manifest(path: str | Path, entries: dict[str, str]):
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def load_manifest(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CrtfError(f"malformed manifest line {line!r} in {path}")
        key, value = line.split("=", 1)
        entries[key] = value
    return entries
