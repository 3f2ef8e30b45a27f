"""Binary checkpoint container.

Layout: magic "RGCK", u32 format version, config digest (u16 length plus
UTF-8 bytes), then named tensor records until end of file. Each record is a
u16 name length, the UTF-8 name, and one RGT1 tensor. Records are written in
sorted name order so identical states produce identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import tensor_from_stream, tensor_to_bytes

MAGIC = b"RGCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, digest: str, arrays: dict[str, np.ndarray]) -> None:
    digest_bytes = digest.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<H", len(digest_bytes)))
        f.write(digest_bytes)
        for name in sorted(arrays):
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(tensor_to_bytes(arrays[name]))


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"bad checkpoint magic in {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (dlen,) = struct.unpack("<H", f.read(2))
        digest = f.read(dlen).decode("utf-8")
        arrays: dict[str, np.ndarray] = {}
        while True:
            head = f.read(2)
            if not head:
                break
            (nlen,) = struct.unpack("<H", head)
            name = f.read(nlen).decode("utf-8")
            arrays[name] = tensor_from_stream(f)
    return digest, arrays
