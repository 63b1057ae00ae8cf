"""Training loop: Adam with coupled L2 decay, step learning-rate decay, L1 loss."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import NumericalError, ParameterError, StateError, UsageError
from .metrics import batch_correlation
from .tensor_engine import ModelGraph, Tensor, center_crop, l1_loss

log = logging.getLogger(__name__)

TRAIN_EVAL_SUBSAMPLE = 1000
EVAL_BATCH = 64


@dataclass
class TrainConfig:
    epochs: int = 200
    initial_lr: float = 1e-5
    lr_decay_factor: float = 0.9
    lr_decay_every: int = 20
    weight_decay: float = 1e-4
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout_ratio: float = 0.5
    deterministic: bool = False

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ParameterError(f"initial_lr must be positive, got {self.initial_lr}")
        if not 0 < self.lr_decay_factor <= 1:
            raise ParameterError(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.lr_decay_every < 1:
            raise ParameterError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.dropout_ratio < 1:
            raise ParameterError(f"dropout_ratio must lie in [0, 1), got {self.dropout_ratio}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class MetricsRecord:
    epoch: int
    loss_l1: float
    train_corr: float
    test_corr: float
    seconds: float


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Learning rate for 0-based ``epoch``: decays by ``lr_decay_factor`` every ``lr_decay_every`` epochs."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    return config.initial_lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Tensor], state: AdamState, lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              grads: Optional[Dict[str, np.ndarray]] = None) -> AdamState:
    """One in-place Adam update with L2 added to the gradient (not decoupled decay).

    Gradients default to each parameter's ``.grad``; a missing gradient is
    treated as zero.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise StateError(f"adam: gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
        if weight_decay:
            g = g + weight_decay * p.data
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.data.shape or v.shape != p.data.shape:
            raise StateError(f"adam: moment buffers for {name} do not match parameter shape")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m.astype(p.data.dtype), v.astype(p.data.dtype)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    return state


# --- pixel boundary ---------------------------------------------------------

def to_network(images: np.ndarray, spatial: int = 32) -> np.ndarray:
    """uint8 ``(N, C, H, W)`` -> float32 in [0, 1], zero-padded to ``spatial``."""
    x = images.astype(np.float32) / np.float32(255.0)
    h = x.shape[-1]
    if h < spatial:
        lo = (spatial - h) // 2
        hi = spatial - h - lo
        x = np.pad(x, ((0, 0), (0, 0), (lo, hi), (lo, hi)))
    return x


def predict(model: ModelGraph, cipher: np.ndarray, batch: int = EVAL_BATCH) -> np.ndarray:
    """Eval-mode decryption of uint8 ciphertexts; returns float32 images in [0,1] scale at native size."""
    was_training = model.training
    model.eval()
    size = cipher.shape[-1]
    out = []
    try:
        for i in range(0, len(cipher), batch):
            y = model.forward(to_network(cipher[i:i + batch], model.spatial))
            if size != model.spatial:
                y = center_crop(y, size)
            out.append(np.asarray(y.data, dtype=np.float32))
    finally:
        model.training = was_training
    if not out:
        return np.zeros((0,) + cipher.shape[1:], np.float32)
    return np.concatenate(out)


def evaluate(model: ModelGraph, plain: np.ndarray, cipher: np.ndarray) -> float:
    if len(plain) == 0:
        return float("nan")
    rep = batch_correlation(predict(model, cipher), plain.astype(np.float32) / 255.0)
    return rep.mean


def shuffle_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_eval_indices(seed: int, n: int, k: int = TRAIN_EVAL_SUBSAMPLE) -> np.ndarray:
    if n <= k:
        return np.arange(n)
    return np.sort(np.random.default_rng([seed, 0xE7A1]).choice(n, size=k, replace=False))


class TrainingAborted(NumericalError):
    def __init__(self, msg: str, record: dict):
        super().__init__(msg)
        self.record = record


def fit(model: ModelGraph, pairs, config: TrainConfig, callbacks: Sequence[Callable] = (),
        state: Optional[AdamState] = None, start_epoch: int = 0,
        history: Optional[List[MetricsRecord]] = None):
    """Train ``model`` to map ciphertexts of ``pairs`` back to plaintexts.

    ``pairs`` is a split PairSet. Each callback is called as
    ``cb(epoch_done, record, model, state, history)`` after every epoch.
    Returns ``(model, history, state)``.
    """
    tr_plain, tr_cipher = pairs.train_arrays()
    te_plain, te_cipher = pairs.test_arrays()
    if len(tr_plain) == 0 or len(te_plain) == 0:
        raise UsageError(f"fit needs non-empty splits, got {len(tr_plain)} train / {len(te_plain)} test")
    if tr_plain.shape[1] != model.in_channels:
        raise UsageError(f"model expects {model.in_channels} channels, pairs have {tr_plain.shape[1]}")
    state = state or AdamState()
    history = list(history or [])
    size = tr_plain.shape[-1]
    target_all = tr_plain.astype(np.float32) / np.float32(255.0)
    sub = train_eval_indices(config.seed, len(tr_plain))
    n = len(tr_plain)

    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        lr = lr_at_epoch(config, epoch)
        order = shuffle_order(config.seed, epoch, n)
        drop_rng = np.random.default_rng([config.seed, epoch, 1])
        model.train()
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = to_network(tr_cipher[idx], model.spatial)
            model.zero_grad()
            out = model.forward(x, rng=drop_rng)
            if size != model.spatial:
                out = center_crop(out, size)
            loss = l1_loss(out, target_all[idx])
            val = float(loss.data)
            if not math.isfinite(val):
                rec = {"epoch": epoch + 1, "batch_start": start, "lr": lr, "loss": val}
                raise TrainingAborted(f"non-finite loss at epoch {epoch + 1}, batch offset {start}", rec)
            loss.backward()
            adam_step(model.params, state, lr, config.weight_decay, config.beta1, config.beta2, config.eps)
            total += val * len(idx)
            seen += len(idx)
        train_corr = evaluate(model, tr_plain[sub], tr_cipher[sub])
        test_corr = evaluate(model, te_plain, te_cipher)
        rec = MetricsRecord(epoch + 1, total / seen, train_corr, test_corr, time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d lr=%.3g loss=%.5f train_corr=%.4f test_corr=%.4f (%.1fs)",
                 rec.epoch, lr, rec.loss_l1, rec.train_corr, rec.test_corr, rec.seconds)
        for cb in callbacks:
            cb(epoch + 1, rec, model, state, history)
    return model, history, state
