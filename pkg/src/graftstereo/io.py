"""Bit-exact file formats: the tensor container, PFM disparity maps, PGM images.

Tensor container layout (little-endian throughout):
    bytes 0-7   magic "GRFTTNSR"
    bytes 8-9   version, uint16 (currently 1)
    byte  10    dtype code, uint8 (0 = float32)
    byte  11    ndim, uint8 (1..4)
    then        ndim x uint32 extents
    then        row-major float32 payload, 4 * prod(dims) bytes

PFM is the Middlebury grayscale convention: "Pf" magic, "W H" dims line,
scale line whose sign encodes endianness (we write -1.0 = little-endian),
rows stored bottom-to-top. PGM is plain binary P5 (and ascii P2), maxval
up to 255, values scaled to [0, 1] on read.
"""

from __future__ import annotations

import re
import struct

import numpy as np

from .errors import FormatError
from .heads import DisparityMap
from .tensor import Tensor

MAGIC = b"GRFTTNSR"
VERSION = 1
DTYPE_F32 = 0


def write_tensor(t: Tensor, path) -> None:
    a = t.array
    if a.ndim > 4:
        raise FormatError(f"container holds 1-4 axes, got {a.ndim}")
    header = MAGIC + struct.pack("<HBB", VERSION, DTYPE_F32, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(a.astype("<f4", copy=False).tobytes(order="C"))


def read_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}")
    version, dtype, ndim = struct.unpack_from("<HBB", raw, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if not 1 <= ndim <= 4:
        raise FormatError(f"{path}: ndim {ndim} out of range 1..4")
    off = 12 + 4 * ndim
    if len(raw) < off:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: zero extent in dims {dims}")
    count = int(np.prod(dims))
    if len(raw) != off + 4 * count:
        raise FormatError(f"{path}: payload is {len(raw) - off} bytes, "
                          f"expected {4 * count}")
    a = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(dims)
    return Tensor(a)


def write_pfm(d, path) -> None:
    """Write a disparity map as grayscale little-endian PFM (bottom-to-top rows).

    Accepts a DisparityMap, a Tensor, or a bare [H,W] array. PFM carries no
    mask channel; masks travel in a separate image file.
    """
    a = getattr(d, "data", d)
    a = a.array if isinstance(a, Tensor) else np.asarray(a, dtype=np.float32)
    if a.ndim != 2:
        raise FormatError(f"PFM writer expects [H,W], got {a.shape}")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(a).astype("<f4", copy=False).tobytes(order="C"))


def read_pfm(path) -> DisparityMap:
    """Read a grayscale PFM (payload preserved bitwise, non-finite pixels masked)."""
    with open(path, "rb") as f:
        raw = f.read()
    lines = raw.split(b"\n", 3)
    if len(lines) < 4:
        raise FormatError(f"{path}: truncated PFM header")
    magic = lines[0].strip()
    if magic == b"PF":
        raise FormatError(f"{path}: color PFM not supported (grayscale 'Pf' only)")
    if magic != b"Pf":
        raise FormatError(f"{path}: bad PFM magic {magic!r}")
    m = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", lines[1])
    if not m:
        raise FormatError(f"{path}: malformed PFM dims line {lines[1]!r}")
    w, h = int(m.group(1)), int(m.group(2))
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad PFM dims {w}x{h}")
    try:
        scale = float(lines[2])
    except ValueError:
        raise FormatError(f"{path}: malformed PFM scale line {lines[2]!r}") from None
    if scale == 0:
        raise FormatError(f"{path}: PFM scale must be nonzero")
    endian = "<" if scale < 0 else ">"
    payload = lines[3]
    if len(payload) != 4 * w * h:
        raise FormatError(f"{path}: PFM payload is {len(payload)} bytes, "
                          f"expected {4 * w * h}")
    a = np.frombuffer(payload, dtype=endian + "f4").reshape(h, w)
    a = np.ascontiguousarray(np.flipud(a)).astype(np.float32)
    return DisparityMap(Tensor(a, copy=False), mask=np.isfinite(a))


def write_pgm(data, path) -> None:
    """Write [H,W] values in [0,1] as binary P5 PGM with maxval 255."""
    a = data.array if isinstance(data, Tensor) else np.asarray(data)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise FormatError(f"PGM writer expects [H,W], got {a.shape}")
    q = np.clip(np.rint(np.asarray(a, dtype=np.float64) * 255.0), 0, 255)
    q = q.astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes(order="C"))


def _pgm_tokens(raw: bytes):
    """Yield whitespace-separated header tokens, skipping # comments."""
    i = 0
    while i < len(raw):
        c = raw[i:i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            j = raw.find(b"\n", i)
            i = len(raw) if j < 0 else j + 1
        else:
            j = i
            while j < len(raw) and raw[j:j + 1] not in b" \t\r\n":
                j += 1
            yield raw[i:j], j
            i = j


def read_pgm(path) -> Tensor:
    """Read a P5/P2 PGM into a [1,H,W] tensor scaled to [0,1]."""
    with open(path, "rb") as f:
        raw = f.read()
    toks = _pgm_tokens(raw)
    try:
        magic, _ = next(toks)
        if magic not in (b"P5", b"P2"):
            raise FormatError(f"{path}: bad PGM magic {magic!r}")
        (wtok, _), (htok, _), (mtok, end) = next(toks), next(toks), next(toks)
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except (StopIteration, ValueError):
        raise FormatError(f"{path}: malformed PGM header") from None
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad PGM dims {w}x{h}")
    if maxval < 1 or maxval > 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}")
    if magic == b"P5":
        payload = raw[end + 1:]
        if len(payload) < w * h:
            raise FormatError(f"{path}: truncated PGM payload")
        a = np.frombuffer(payload[:w * h], dtype=np.uint8).reshape(h, w)
    else:
        try:
            vals = [int(tok) for tok, _ in _pgm_tokens(raw[end:])]
        except ValueError:
            raise FormatError(f"{path}: non-numeric PGM pixel") from None
        if len(vals) < w * h:
            raise FormatError(f"{path}: truncated PGM payload")
        a = np.array(vals[:w * h], dtype=np.int64).reshape(h, w)
    if int(a.min()) < 0 or int(a.max()) > maxval:
        raise FormatError(f"{path}: pixel value outside 0..{maxval}")
    out = (a.astype(np.float32) / np.float32(maxval))[None]
    return Tensor(out, copy=False)


# ---------------------------------------------------------------------------
# line-oriented key=value text (descriptors, manifests, graft configs)


def write_kv(entries: dict, path) -> None:
    lines = [f"{k}={entries[k]}\n" for k in entries]
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(lines)


def read_kv(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
