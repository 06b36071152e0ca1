"""Writers for the stereo engine's on-disk formats.

Implemented here from the byte layout, not imported from the engine: the
whole point of exporting to files is that the two tools share nothing but
the formats. The container is little-endian: 8-byte magic, uint16 version,
uint8 dtype code (0 = float32), uint8 ndim, ndim uint32 extents, row-major
payload. Manifests are key=value text lines.
"""

import hashlib
import struct

import numpy as np

MAGIC = b"GRFTTNSR"
VERSION = 1
DTYPE_F32 = 0


class ExportError(RuntimeError):
    pass


def write_tensor(a: np.ndarray, path) -> None:
    a = np.asarray(a, dtype=np.float32)
    if not 1 <= a.ndim <= 4:
        raise ExportError(f"container holds 1-4 axes, got {a.ndim}")
    if any(d < 1 for d in a.shape):
        raise ExportError(f"zero extent in shape {a.shape}")
    header = MAGIC + struct.pack("<HBB", VERSION, DTYPE_F32, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(a.astype("<f4", copy=False).tobytes(order="C"))


def write_manifest(entries: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(f"{k}={entries[k]}\n" for k in entries)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
