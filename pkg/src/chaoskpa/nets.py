"""The two encoder-decoder decryption networks, built as ModelGraphs.

Both take ``(N, C, 32, 32)`` ciphertext images (C = 1 or 3) and emit an
image of the same shape; the last layer is a 1x1 convolution back to C
channels with no activation.
"""
from __future__ import annotations

from typing import List

from . import ParameterError
from .tensor_engine import INPUT, LayerKind, LayerSpec, ModelGraph

SPATIAL = 32
UNET_DEPTH = 3
MSED_STAGES = 5
DROPOUT = 0.5


def _check(in_channels: int, base_width: int) -> None:
    if in_channels not in (1, 3):
        raise ParameterError(f"in_channels must be 1 or 3, got {in_channels}")
    if not isinstance(base_width, int) or base_width < 8:
        raise ParameterError(f"base_width must be an integer >= 8, got {base_width!r}")


def _conv_bn_relu(g: ModelGraph, name: str, src: str, cin: int, cout: int) -> str:
    g.add(f"{name}.conv", LayerSpec(LayerKind.CONV3X3, cin, cout), src)
    g.add(f"{name}.bn", LayerSpec(LayerKind.BATCHNORM, cout, cout), f"{name}.conv")
    return g.add(f"{name}.relu", LayerSpec(LayerKind.RELU, cout, cout), f"{name}.bn")


def _double_block(g: ModelGraph, name: str, src: str, cin: int, cout: int, dropout: float = 0.0) -> str:
    h = _conv_bn_relu(g, f"{name}.a", src, cin, cout)
    h = _conv_bn_relu(g, f"{name}.b", h, cout, cout)
    if dropout:
        h = g.add(f"{name}.drop", LayerSpec(LayerKind.DROPOUT, cout, cout, dropout=dropout), h)
    return h


def build_unet(in_channels: int = 1, base_width: int = 32, dropout: float = DROPOUT) -> ModelGraph:
    """Unet of depth 3 (32 -> 16 -> 8 -> 4) with widths w, 2w, 4w and an 8w bottleneck.

    Dropout follows the two deepest conv blocks (the last encoder block and
    the bottleneck).
    """
    _check(in_channels, base_width)
    w = base_width
    g = ModelGraph("unet", in_channels, SPATIAL,
                   {"base_width": w, "depth": UNET_DEPTH, "dropout": dropout})
    skips: List[str] = []
    h, cin = INPUT, in_channels
    for d in range(UNET_DEPTH):
        cout = w * 2 ** d
        drop = dropout if d == UNET_DEPTH - 1 else 0.0
        h = _double_block(g, f"enc{d}", h, cin, cout, drop)
        skips.append(h)
        h = g.add(f"pool{d}", LayerSpec(LayerKind.MAXPOOL2X2, cout, cout), h)
        cin = cout
    bott = w * 2 ** UNET_DEPTH
    h = _double_block(g, "bottleneck", h, cin, bott, dropout)
    cin = bott
    for d in reversed(range(UNET_DEPTH)):
        cout = w * 2 ** d
        up = g.add(f"up{d}", LayerSpec(LayerKind.DECONV2X2, cin, cout), h)
        cat = g.add(f"cat{d}", LayerSpec(LayerKind.CONCAT, 2 * cout, 2 * cout), up, skips[d])
        h = _double_block(g, f"dec{d}", cat, 2 * cout, cout)
        cin = cout
    g.add("head", LayerSpec(LayerKind.CONV1X1, cin, in_channels), h)
    return g


def msednet_widths(base_width: int):
    w = base_width
    enc = [w, 2 * w, 4 * w, 8 * w, 8 * w]
    dec = [8 * w, 4 * w, 2 * w, w, w]
    return enc, dec


def build_msednet(in_channels: int = 1, base_width: int = 32, dropout: float = DROPOUT) -> ModelGraph:
    """Multi-stage encoder-decoder network.

    Encoder: five stages of Conv3x3+BN+ReLU followed by 2x2 average pooling
    (32 -> 16 -> 8 -> 4 -> 2 -> 1). Stages 2-5 each get a 1x1 lateral
    projection to ``base_width`` channels. Each of the five decoder stages
    doubles the resolution with a 2x2 deconvolution, concatenates every
    lateral map whose resolution does not exceed the current one
    (nearest-neighbour upsampled to it) and applies Conv3x3+BN+ReLU.
    Dropout follows the two deepest encoder convs.
    """
    _check(in_channels, base_width)
    enc_w, dec_w = msednet_widths(base_width)
    g = ModelGraph("msednet", in_channels, SPATIAL,
                   {"base_width": base_width, "stages": MSED_STAGES, "dropout": dropout})
    h, cin, res = INPUT, in_channels, SPATIAL
    laterals = []  # (node, resolution)
    for i, cout in enumerate(enc_w, start=1):
        h = _conv_bn_relu(g, f"enc{i}", h, cin, cout)
        if i > MSED_STAGES - 2 and dropout:
            h = g.add(f"enc{i}.drop", LayerSpec(LayerKind.DROPOUT, cout, cout, dropout=dropout), h)
        h = g.add(f"enc{i}.pool", LayerSpec(LayerKind.AVGPOOL2X2, cout, cout), h)
        res //= 2
        if i >= 2:
            lat = g.add(f"lat{i}", LayerSpec(LayerKind.CONV1X1, cout, base_width), h)
            laterals.append((lat, res))
        cin = cout
    for k, cout in enumerate(dec_w, start=1):
        res *= 2
        up = g.add(f"dec{k}.up", LayerSpec(LayerKind.DECONV2X2, cin, cout), h)
        parts = [up]
        for lat, lres in laterals:
            if lres > res:
                continue
            factor = res // lres
            if factor > 1:
                lat = g.add(f"dec{k}.{lat}.resize",
                            LayerSpec(LayerKind.UPSAMPLE, base_width, base_width, factor=factor), lat)
            parts.append(lat)
        width = cout + base_width * (len(parts) - 1)
        cat = g.add(f"dec{k}.cat", LayerSpec(LayerKind.CONCAT, width, width), *parts)
        h = _conv_bn_relu(g, f"dec{k}", cat, width, cout)
        cin = cout
    g.add("head", LayerSpec(LayerKind.CONV1X1, cin, in_channels), h)
    return g


BUILDERS = {"unet": build_unet, "msednet": build_msednet}


def build(network: str, in_channels: int, base_width: int, dropout: float = DROPOUT) -> ModelGraph:
    try:
        builder = BUILDERS[network]
    except KeyError:
        raise ParameterError(f"unknown network {network!r}; choose from {sorted(BUILDERS)}") from None
    return builder(in_channels, base_width, dropout)
