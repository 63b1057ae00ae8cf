"""Differentiable operations over NCHW tensors.

The catalogue is deliberately closed: exactly what the two decryption
networks and their training loss need.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import ParameterError, ShapeError, UsageError
from .tensor import Tensor, accumulate, backward_scale, log_kink

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _needs_grad(*ts: Optional[Tensor]) -> bool:
    return any(t is not None and t.requires_grad for t in ts)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ShapeError(f"conv: input size {size} with k={k}, stride={stride}, pad={padding} "
                         "does not give an integral output size")
    return span // stride + 1


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation via im2col + one matmul.

    ``w`` has shape ``(out_c, in_c, k, k)``. Columns are laid out channel
    major, ``(in_c*k*k, N*out_h*out_w)``, so the gather and the col2im
    scatter both walk contiguous rows; the output is a CNHW-ordered buffer
    viewed as NCHW, which makes the next layer's transpose free.
    """
    x, w = _wrap(x), _wrap(w)
    b = None if b is None else _wrap(b)
    n, c, h, wd = x.shape
    oc, ic, k, k2 = w.shape
    if ic != c or k != k2:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weights {w.shape}")
    oh = conv_output_size(h, k, stride, padding)
    ow = conv_output_size(wd, k, stride, padding)

    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if k == 1 and stride == 1:
        cols = xd.transpose(1, 0, 2, 3).reshape(c, n * oh * ow)
    else:
        win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * oh * ow)
    wmat = w.data.reshape(oc, -1)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(oc, n, oh, ow).transpose(1, 0, 2, 3)

    def backward(g):
        s = backward_scale("conv2d")
        gm = g.transpose(1, 0, 2, 3).reshape(oc, -1)
        if w.requires_grad:
            accumulate(w, s * (gm @ cols.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            accumulate(b, s * gm.sum(axis=1))
        if x.requires_grad:
            hp, wp = h + 2 * padding, wd + 2 * padding
            if stride == 1 and k > 1 and padding <= k - 1:
                # full correlation of g with the flipped kernel; cheaper than col2im
                fp = k - 1 - padding
                gp = np.pad(g.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (fp, fp), (fp, fp)))
                gcols = sliding_window_view(gp, (k, k), axis=(2, 3)).transpose(0, 4, 5, 1, 2, 3)
                wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
                dx = (wflip @ gcols.reshape(oc * k * k, n * h * wd)).reshape(c, n, h, wd)
                accumulate(x, s * dx.transpose(1, 0, 2, 3))
                return
            dcols = (wmat.T @ gm).reshape(c, k, k, n, oh, ow)
            if k == 1 and stride == 1:
                dxp = dcols[:, 0, 0]
            else:
                dxp = np.zeros((c, n, hp, wp), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, i, j]
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + wd]
            accumulate(x, s * dxp.transpose(1, 0, 2, 3))

    if not _needs_grad(x, w, b):
        return Tensor(out)
    return Tensor(out, True, (x, w) if b is None else (x, w, b), backward, "conv2d")


def deconv2x2(x, w, b=None) -> Tensor:
    """Transposed convolution, 2x2 kernel, stride 2; ``w`` is ``(in_c, out_c, 2, 2)``."""
    x, w = _wrap(x), _wrap(w)
    b = None if b is None else _wrap(b)
    n, c, h, wd = x.shape
    ic, oc, kh, kw = w.shape
    if ic != c or (kh, kw) != (2, 2):
        raise ShapeError(f"deconv2x2: input {x.shape} incompatible with weights {w.shape}")
    xf = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = w.data.reshape(c, oc * 4)
    y = (xf @ wmat).reshape(n, h, wd, oc, 2, 2).transpose(0, 3, 1, 4, 2, 5).reshape(n, oc, 2 * h, 2 * wd)
    if b is not None:
        y = y + b.data.reshape(1, oc, 1, 1)

    def backward(g):
        s = backward_scale("deconv2x2")
        gm = g.reshape(n, oc, h, 2, wd, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, oc * 4)
        if w.requires_grad:
            accumulate(w, s * (xf.T @ gm).reshape(w.shape))
        if b is not None and b.requires_grad:
            accumulate(b, s * g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            accumulate(x, s * (gm @ wmat.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2))

    if not _needs_grad(x, w, b):
        return Tensor(y)
    return Tensor(y, True, (x, w) if b is None else (x, w, b), backward, "deconv2x2")


def batchnorm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, eps: float = BN_EPS, momentum: float = BN_MOMENTUM,
              update_stats: bool = True) -> Tensor:
    """Per-channel batch normalisation.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance, like most
    frameworks). In eval mode the running statistics are used.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    n, c, h, wd = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta {gamma.shape}/{beta.shape} vs {c} channels")
    xd = x.data
    m = n * h * wd
    if training:
        mean = xd.mean(axis=(0, 2, 3))
        xc = xd - mean.reshape(1, c, 1, 1)
        var = (xc * xc).mean(axis=(0, 2, 3))
        if update_stats:
            unbiased = var * (m / max(m - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        mean, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
        xc = xd - mean.reshape(1, c, 1, 1)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = xc * inv_std.reshape(1, c, 1, 1)
    y = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        s = backward_scale("batchnorm")
        if gamma.requires_grad:
            accumulate(gamma, s * (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            accumulate(beta, s * g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(1, c, 1, 1)
            if training:
                sum_d = dxhat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                sum_dx = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                dx = (dxhat - sum_d / m - xhat * sum_dx / m) * inv_std.reshape(1, c, 1, 1)
            else:
                dx = dxhat * inv_std.reshape(1, c, 1, 1)
            accumulate(x, s * dx)

    if not _needs_grad(x, gamma, beta):
        return Tensor(y)
    return Tensor(y, True, (x, gamma, beta), backward, "batchnorm")


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    log_kink(mask)
    y = x.data * mask

    def backward(g):
        accumulate(x, backward_scale("relu") * (g * mask))

    if not x.requires_grad:
        return Tensor(y)
    return Tensor(y, True, (x,), backward, "relu")


def _pool_view(xd: np.ndarray, name: str) -> np.ndarray:
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"{name}: spatial dims must be even, got {h}x{w}")
    return xd.reshape(n, c, h // 2, 2, w // 2, 2)


def max_pool2x2(x) -> Tensor:
    """2x2 max pooling, stride 2. Ties route the gradient to the first maximum."""
    x = _wrap(x)
    n, c, h, w = x.shape
    v = _pool_view(x.data, "max_pool2x2").transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = v.argmax(axis=-1)
    log_kink(idx)
    y = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros_like(v)
        np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
        dx = onehot.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        accumulate(x, backward_scale("max_pool2x2") * dx)

    if not x.requires_grad:
        return Tensor(y)
    return Tensor(y, True, (x,), backward, "max_pool2x2")


def avg_pool2x2(x) -> Tensor:
    x = _wrap(x)
    n, c, h, w = x.shape
    y = _pool_view(x.data, "avg_pool2x2").mean(axis=(3, 5))

    def backward(g):
        dx = np.broadcast_to((g * 0.25)[:, :, :, None, :, None], (n, c, h // 2, 2, w // 2, 2))
        accumulate(x, backward_scale("avg_pool2x2") * dx.reshape(n, c, h, w))

    if not x.requires_grad:
        return Tensor(y)
    return Tensor(y, True, (x,), backward, "avg_pool2x2")


def upsample_nearest(x, factor: int) -> Tensor:
    x = _wrap(x)
    if factor == 1:
        return x
    n, c, h, w = x.shape
    y = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, factor, w, factor)).reshape(
        n, c, h * factor, w * factor)

    def backward(g):
        accumulate(x, g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    if not x.requires_grad:
        return Tensor(y)
    return Tensor(y, True, (x,), backward, "upsample_nearest")


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    ref = ts[0].shape
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat: shapes {[t.shape for t in ts]} differ outside axis {axis}")
    y = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, bounds, axis=axis)):
            accumulate(t, piece)

    if not _needs_grad(*ts):
        return Tensor(y)
    return Tensor(y, True, ts, backward, "concat")


def dropout(x, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time; identity in eval."""
    x = _wrap(x)
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout ratio must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    y = x.data * mask

    def backward(g):
        accumulate(x, g * mask)

    if not x.requires_grad:
        return Tensor(y)
    return Tensor(y, True, (x,), backward, "dropout")


def center_crop(x, size: int) -> Tensor:
    x = _wrap(x)
    n, c, h, w = x.shape
    if size > h or size > w:
        raise ShapeError(f"center_crop: {size} larger than {h}x{w}")
    top, left = (h - size) // 2, (w - size) // 2
    y = x.data[:, :, top:top + size, left:left + size]

    def backward(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        dx[:, :, top:top + size, left:left + size] = g
        accumulate(x, dx)

    if not x.requires_grad:
        return Tensor(y)
    return Tensor(y, True, (x,), backward, "center_crop")


def l1_loss(output, target) -> Tensor:
    """Mean absolute error; gradient is sign(O - P) / element count."""
    output = _wrap(output)
    td = target.data if isinstance(target, Tensor) else np.asarray(target)
    if output.shape != td.shape:
        raise ShapeError(f"l1_loss: output {output.shape} vs target {td.shape}")
    diff = output.data - td
    count = diff.size
    # accumulate in float64: the sum over a whole batch loses digits in float32
    val = np.abs(diff, dtype=np.float64).sum() / count

    def backward(g):
        accumulate(output, (np.sign(diff) * (g / count)).astype(output.dtype))

    if not output.requires_grad:
        return Tensor(np.asarray(val))
    return Tensor(np.asarray(val), True, (output,), backward, "l1_loss")


def weighted_sum(x, weights: np.ndarray) -> Tensor:
    """sum(x * weights); a smooth scalar probe used by the gradient checker."""
    x = _wrap(x)
    val = np.asarray(np.sum(x.data.astype(np.float64) * weights))

    def backward(g):
        accumulate(x, g * weights)

    return Tensor(val, x.requires_grad, (x,), backward if x.requires_grad else None, "weighted_sum")
