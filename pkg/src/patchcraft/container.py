"""Binary checkpoint container shared by the ViT trainer and the SVM baseline.

Layout (all integers little-endian):

    magic: 4 bytes ("VITC" or "SVMC")
    u32 version (currently 1)
    u32 JSON length, then that many bytes of UTF-8 JSON metadata
    repeated tensor records until EOF:
        u16 name length, name (UTF-8)
        u8 ndim, u32 dims...
        float32 little-endian data, row-major
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

VERSION = 1
VIT_MAGIC = b"VITC"
SVM_MAGIC = b"SVMC"


class CheckpointError(RuntimeError):
    """Raised for malformed, truncated, or mismatched checkpoint files."""


def write_container(path, magic: bytes, meta: dict,
                    tensors: dict[str, np.ndarray]) -> None:
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    offset = f.tell()
    chunk = f.read(n)
    if len(chunk) != n:
        raise CheckpointError(
            f"truncated checkpoint at offset {offset}: expected {n} bytes for {what}, "
            f"got {len(chunk)}")
    return chunk


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        found = _read_exact(f, 4, "magic")
        if found != magic:
            raise CheckpointError(f"bad magic {found!r}, expected {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
        (json_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        try:
            meta = json.loads(_read_exact(f, json_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt metadata JSON: {exc}") from exc

        tensors: dict[str, np.ndarray] = {}
        while True:
            head = f.read(2)
            if head == b"":
                break
            if len(head) != 2:
                raise CheckpointError(
                    f"truncated checkpoint at offset {f.tell() - len(head)}: "
                    f"partial record header")
            (name_len,) = struct.unpack("<H", head)
            name = _read_exact(f, name_len, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, f"ndim of {name!r}"))
            dims = struct.unpack(f"<{ndim}I",
                                 _read_exact(f, 4 * ndim, f"dims of {name!r}"))
            count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            payload = _read_exact(f, 4 * count, f"data of tensor {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        return meta, tensors
