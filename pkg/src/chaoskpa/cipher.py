"""Keystream XOR image cipher.

Grayscale images use a single Logistic keystream; colour images use the
hybrid scheme where R, G and B are each XORed with an independent keystream
from the Logistic, Sine and Chebyshev maps. Pixels are scanned row-major
within each channel. One key is used for a whole corpus.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ParameterError, UsageError
from .chaos_core import (ChaoticMapParams, MapFamily, DEFAULT_CHEBYSHEV, DEFAULT_LOGISTIC,
                         DEFAULT_SINE, keystream)
from .metrics import pearson_rows


class Scheme(str, enum.Enum):
    SINGLE_LOGISTIC = "single_logistic"
    HYBRID_RGB = "hybrid_rgb"


@dataclass(frozen=True)
class ImageBytes:
    """One 8-bit image stored channel-major, then row-major."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise UsageError(f"images must have 1 or 3 channels, got {self.channels}")
        if len(self.data) != self.width * self.height * self.channels:
            raise UsageError(
                f"data length {len(self.data)} != {self.width}x{self.height}x{self.channels}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBytes":
        """Build from a ``(H, W)`` or ``(C, H, W)`` uint8 array."""
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.dtype != np.uint8:
            raise UsageError(f"expected uint8 pixels, got {arr.dtype}")
        c, h, w = arr.shape
        return cls(w, h, c, np.ascontiguousarray(arr).tobytes())

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.channels, self.height, self.width)

    @property
    def shape(self):
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class CipherKey:
    scheme: Scheme
    logistic: ChaoticMapParams
    sine: Optional[ChaoticMapParams] = None
    chebyshev: Optional[ChaoticMapParams] = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.logistic.family is not MapFamily.LOGISTIC:
            raise ParameterError("the first channel key must be a Logistic map")
        if self.scheme is Scheme.HYBRID_RGB:
            if self.sine is None or self.chebyshev is None:
                raise ParameterError("hybrid scheme needs sine and chebyshev parameters")
            if self.sine.family is not MapFamily.SINE:
                raise ParameterError("hybrid G channel key must be a Sine map")
            if self.chebyshev.family is not MapFamily.CHEBYSHEV:
                raise ParameterError("hybrid B channel key must be a Chebyshev map")

    @property
    def channels(self) -> int:
        return 1 if self.scheme is Scheme.SINGLE_LOGISTIC else 3

    def channel_params(self):
        if self.scheme is Scheme.SINGLE_LOGISTIC:
            return (self.logistic,)
        return (self.logistic, self.sine, self.chebyshev)


def single_logistic_key(params: ChaoticMapParams = DEFAULT_LOGISTIC) -> CipherKey:
    return CipherKey(Scheme.SINGLE_LOGISTIC, params)


def hybrid_key(logistic: ChaoticMapParams = DEFAULT_LOGISTIC, sine: ChaoticMapParams = DEFAULT_SINE,
               chebyshev: ChaoticMapParams = DEFAULT_CHEBYSHEV) -> CipherKey:
    return CipherKey(Scheme.HYBRID_RGB, logistic, sine, chebyshev)


@functools.lru_cache(maxsize=64)
def _channel_stream(params: ChaoticMapParams, n: int) -> np.ndarray:
    ks = keystream(params, n).as_array().copy()
    ks.setflags(write=False)
    return ks


def key_mask(key: CipherKey, height: int, width: int) -> np.ndarray:
    """The ``(C, H, W)`` byte mask XORed onto every image under ``key``."""
    n = height * width
    return np.stack([_channel_stream(p, n).reshape(height, width) for p in key.channel_params()])


def _check_channels(key: CipherKey, channels: int) -> None:
    if channels != key.channels:
        raise UsageError(
            f"{key.scheme.value} key needs {key.channels}-channel images, got {channels} channels")


def encrypt_array(key: CipherKey, images: np.ndarray) -> np.ndarray:
    """XOR-encrypt a ``(N, C, H, W)`` or ``(C, H, W)`` uint8 stack."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        raise UsageError(f"expected uint8 pixels, got {images.dtype}")
    if images.ndim not in (3, 4):
        raise UsageError(f"expected (C,H,W) or (N,C,H,W), got shape {images.shape}")
    c, h, w = images.shape[-3:]
    _check_channels(key, c)
    return np.bitwise_xor(images, key_mask(key, h, w))


decrypt_array = encrypt_array


def encrypt(key: CipherKey, plain: ImageBytes) -> ImageBytes:
    return ImageBytes.from_array(encrypt_array(key, plain.to_array()))


def decrypt(key: CipherKey, cipher: ImageBytes) -> ImageBytes:
    # XOR is its own inverse
    return ImageBytes.from_array(decrypt_array(key, cipher.to_array()))


@dataclass
class AuditRecord:
    count: int
    skipped: int
    mean_abs_corr: float
    max_abs_corr: float

    def summary(self) -> str:
        return (f"plain/cipher |corr|: mean={self.mean_abs_corr:.4f} max={self.max_abs_corr:.4f} "
                f"over {self.count} images ({self.skipped} constant skipped)")


def correlation_audit(key: CipherKey, images, encrypt_fn: Callable = encrypt_array) -> AuditRecord:
    """|Pearson| between each plaintext and its ciphertext.

    ``images`` is a uint8 ``(N, C, H, W)`` stack or a sequence of ``ImageBytes``.
    ``encrypt_fn`` exists so tests can swap in a degenerate cipher.
    """
    if not isinstance(images, np.ndarray):
        images = list(images)
        if not images:
            raise UsageError("correlation_audit needs at least one image")
        images = np.stack([im.to_array() if isinstance(im, ImageBytes) else np.asarray(im)
                           for im in images])
    if len(images) == 0:
        raise UsageError("correlation_audit needs at least one image")
    ciphers = encrypt_fn(key, images)
    coeffs = np.abs(pearson_rows(images, ciphers))
    ok = ~np.isnan(coeffs)
    skipped = int((~ok).sum())
    if not ok.any():
        return AuditRecord(0, skipped, float("nan"), float("nan"))
    return AuditRecord(int(ok.sum()), skipped, float(coeffs[ok].mean()), float(coeffs[ok].max()))
