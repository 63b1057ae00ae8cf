"""Pearson correlation between decrypted and plaintext images.

Images with several channels are flattened across channels before the sums,
so an RGB image is treated as one vector of ``C * H * W`` samples.
All accumulation happens in float64.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import KPAError, ShapeError, UsageError

CHANNEL_POLICY = "flatten"


class UndefinedCorrelation(KPAError, ValueError):
    """Raised when one of the images is constant (zero deviation)."""


def _as_vec(x) -> np.ndarray:
    if hasattr(x, "data") and isinstance(getattr(x, "data"), np.ndarray):
        x = x.data
    return np.asarray(x, dtype=np.float64).ravel()


def pearson(o, p) -> float:
    """Correlation coefficient of two equally shaped images.

    ``sum((O - E[O]) * (P - E[P])) / (sigma(O) * sigma(P))`` with sigma the
    root of the un-normalised sum of squared deviations.
    """
    o_arr = np.asarray(getattr(o, "data", o))
    p_arr = np.asarray(getattr(p, "data", p))
    if o_arr.shape != p_arr.shape:
        raise ShapeError(f"pearson: shapes differ {o_arr.shape} vs {p_arr.shape}")
    ov, pv = _as_vec(o_arr), _as_vec(p_arr)
    do = ov - ov.mean()
    dp = pv - pv.mean()
    so = np.sqrt(np.dot(do, do))
    sp = np.sqrt(np.dot(dp, dp))
    if so == 0.0 or sp == 0.0:
        raise UndefinedCorrelation("pearson: constant image has no defined correlation")
    return float(np.dot(do, dp) / (so * sp))


def pearson_rows(o: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Row-wise coefficients for two ``(N, ...)`` stacks; NaN where a row is constant."""
    o = np.asarray(o, dtype=np.float64).reshape(len(o), -1)
    p = np.asarray(p, dtype=np.float64).reshape(len(p), -1)
    if o.shape != p.shape:
        raise ShapeError(f"pearson_rows: shapes differ {o.shape} vs {p.shape}")
    do = o - o.mean(axis=1, keepdims=True)
    dp = p - p.mean(axis=1, keepdims=True)
    so = np.sqrt(np.einsum("ij,ij->i", do, do))
    sp = np.sqrt(np.einsum("ij,ij->i", dp, dp))
    num = np.einsum("ij,ij->i", do, dp)
    denom = so * sp
    out = np.full(len(o), np.nan)
    ok = denom > 0
    out[ok] = num[ok] / denom[ok]
    return out


@dataclass
class CorrelationReport:
    coefficients: np.ndarray  # NaN marks a skipped (constant) pair
    skipped: int
    channel_policy: str = CHANNEL_POLICY

    @property
    def included(self) -> np.ndarray:
        return self.coefficients[~np.isnan(self.coefficients)]

    @property
    def empty(self) -> bool:
        return self.included.size == 0

    @property
    def mean(self) -> float:
        return float(self.included.mean()) if not self.empty else float("nan")

    @property
    def min(self) -> float:
        return float(self.included.min()) if not self.empty else float("nan")

    @property
    def max(self) -> float:
        return float(self.included.max()) if not self.empty else float("nan")

    @property
    def mean_abs(self) -> float:
        return float(np.abs(self.included).mean()) if not self.empty else float("nan")

    def summary(self) -> str:
        return (f"n={self.included.size} skipped={self.skipped} mean={self.mean:.6f} "
                f"min={self.min:.6f} max={self.max:.6f} channels={self.channel_policy}")

    def to_csv(self, fh: Optional[io.TextIOBase] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "coefficient", "skipped"])
        for i, c in enumerate(self.coefficients):
            if np.isnan(c):
                w.writerow([i, "", 1])
            else:
                w.writerow([i, repr(float(c)), 0])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def batch_correlation(outputs, targets) -> CorrelationReport:
    outputs = np.asarray(getattr(outputs, "data", outputs))
    targets = np.asarray(getattr(targets, "data", targets))
    if len(outputs) != len(targets):
        raise UsageError(f"batch_correlation: {len(outputs)} outputs vs {len(targets)} targets")
    if len(outputs) == 0:
        return CorrelationReport(np.zeros(0), 0)
    coeffs = pearson_rows(outputs, targets)
    return CorrelationReport(coeffs, int(np.isnan(coeffs).sum()))
