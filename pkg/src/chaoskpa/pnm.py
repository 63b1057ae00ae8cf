"""Binary PGM (P5) / PPM (P6) reading and writing for 8-bit images."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import FormatError


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Float images in [0, 1] -> uint8 with clipping; uint8 passes through."""
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(np.asarray(img, np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pnm(path, img: np.ndarray) -> Path:
    """Write a ``(C, H, W)`` or ``(H, W)`` image; C=1 gives PGM, C=3 gives PPM."""
    img = to_uint8(np.asarray(img))
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    if c not in (1, 3):
        raise FormatError(f"netpbm output needs 1 or 3 channels, got {c}")
    path = Path(path)
    magic = b"P5" if c == 1 else b"P6"
    path.write_bytes(magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes())
    return path


def _tokens(raw: bytes, count: int, path):
    toks, i = [], 0
    while len(toks) < count:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j:j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError(f"{path}: offset {i}: truncated netpbm header")
        toks.append(raw[i:j])
        i = j
    return toks, i + 1  # exactly one whitespace byte separates header and raster


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM with maxval 255 into ``(C, H, W)`` uint8."""
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), start = _tokens(raw, 4, path)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: offset 0: unsupported netpbm magic {magic!r} (need P5 or P6)")
    if int(maxval) != 255:
        raise FormatError(f"{path}: maxval {int(maxval)} unsupported (need 255)")
    c = 1 if magic == b"P5" else 3
    w, h = int(w), int(h)
    body = raw[start:start + w * h * c]
    if len(body) < w * h * c:
        raise FormatError(f"{path}: offset {len(raw)}: raster truncated, expected {w * h * c} bytes")
    return np.frombuffer(body, np.uint8).reshape(h, w, c).transpose(2, 0, 1).copy()
