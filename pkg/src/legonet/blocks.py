"""Interchangeable encoder blocks (SE, Swin, UX), the stem and the decoder stage.

Every block maps ``[B, C, D, H, W]`` to the same shape, so any kind can sit in
any encoder stage; stages own the downsampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .layers import (
    Conv3d,
    ConvTranspose3d,
    LayerNorm,
    Mlp,
    Module,
    PatchMerging,
    SENorm,
    WindowAttention,
    he_uniform,
    to_channels_first,
    to_channels_last,
    zeros_param,
)
from .tensor import ShapeError, Tensor, concat, gelu, pad, relu, reshape, sum_

BLOCK_KINDS = ("SE", "Swin", "UX")


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    in_channels: int
    out_channels: int
    depth_units: int = 1
    window: int = 4
    heads: int = 1

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.depth_units < 1:
            raise ValueError("depth_units must be >= 1")


def _check_channels(x: Tensor, c: int, what: str) -> None:
    if x.ndim != 5 or x.shape[1] != c:
        raise ShapeError(f"{what} expects {c} input channels, got shape {x.shape}")


class SEBlock(Module):
    """Residual units ``v <- se_norm(relu(conv3(v))) + proj(v)``."""

    kind = "SE"

    def __init__(self, cin: int, cout: int, rng, units: int = 2, reduction: int = 2):
        self.cin, self.cout = cin, cout
        self.convs = [Conv3d(cin if i == 0 else cout, cout, 3, rng) for i in range(units)]
        self.norms = [SENorm(cout, rng, reduction) for _ in range(units)]
        self.proj = Conv3d(cin, cout, 1, rng) if cin != cout else None

    def __call__(self, x: Tensor) -> Tensor:
        _check_channels(x, self.cin, "SE block")
        v = x
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            skip = self.proj(v) if (i == 0 and self.proj is not None) else v
            v = norm(relu(conv(v))) + skip
        return v

    def flops(self, shape):
        total = 0
        s = shape
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            if i == 0 and self.proj is not None:
                total += self.proj.flops(s)[0]
            m, s2 = conv.flops(s)
            total += m + norm.flops(s2)[0]
            s = s2
        return total, s


class SwinBlock(Module):
    """Pre-norm W-MSA / MLP / SW-MSA / MLP with residuals, repeated ``pairs`` times."""

    kind = "Swin"

    def __init__(self, c: int, heads: int, window: int, rng, pairs: int = 1, mlp_ratio: int = 4):
        self.c = c
        shift = window // 2
        self.norms, self.attns, self.mlps = [], [], []
        for _ in range(pairs):
            for s in (0, shift):
                self.norms.append(LayerNorm(c))
                self.attns.append(WindowAttention(c, heads, window, s, rng))
                self.norms.append(LayerNorm(c))
                self.mlps.append(Mlp(c, rng, mlp_ratio))

    def __call__(self, x: Tensor) -> Tensor:
        _check_channels(x, self.c, "Swin block")
        z = to_channels_last(x)
        for i, (attn, mlp) in enumerate(zip(self.attns, self.mlps)):
            z = attn(self.norms[2 * i](z)) + z
            z = mlp(self.norms[2 * i + 1](z)) + z
        return to_channels_first(z)

    def flops(self, shape):
        c, *sp = shape
        cl = tuple(sp) + (c,)
        total = sum(a.flops(cl)[0] + m.flops(cl)[0] for a, m in zip(self.attns, self.mlps))
        return total, shape


class DepthwiseScaling(Module):
    """Per-channel 1x1x1 expansion to ``expansion`` maps, GELU, per-channel reduction.

    Grouped (groups = C) pointwise convolutions on channels-last tokens.
    """

    def __init__(self, c: int, rng, expansion: int = 4):
        self.c, self.expansion = c, expansion
        self.w1 = he_uniform(rng, (c, expansion), 1)
        self.b1 = zeros_param((c, expansion))
        self.w2 = he_uniform(rng, (c, expansion), expansion)
        self.b2 = zeros_param((c,))

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        h = gelu(reshape(x, lead + (self.c, 1)) * self.w1 + self.b1)
        return sum_(h * self.w2, axis=-1) + self.b2

    def flops(self, shape):
        return 2 * self.c * self.expansion * math.prod(shape[:-1]), shape


class UXBlock(Module):
    """Pre-norm depthwise 7^3 conv / depthwise scaling with residuals, ``pairs`` times."""

    kind = "UX"

    def __init__(self, c: int, rng, pairs: int = 2, kernel: int = 7, expansion: int = 4):
        self.c = c
        self.norms, self.dwcs, self.dcss = [], [], []
        for _ in range(pairs):
            self.norms.append(LayerNorm(c))
            self.dwcs.append(Conv3d(c, c, kernel, rng, groups=c))
            self.norms.append(LayerNorm(c))
            self.dcss.append(DepthwiseScaling(c, rng, expansion))

    def __call__(self, x: Tensor) -> Tensor:
        _check_channels(x, self.c, "UX block")
        z = to_channels_last(x)
        for i, (dwc, dcs) in enumerate(zip(self.dwcs, self.dcss)):
            z = to_channels_last(dwc(to_channels_first(self.norms[2 * i](z)))) + z
            z = dcs(self.norms[2 * i + 1](z)) + z
        return to_channels_first(z)

    def flops(self, shape):
        c, *sp = shape
        total = sum(d.flops(shape)[0] + s.flops(tuple(sp) + (c,))[0] for d, s in zip(self.dwcs, self.dcss))
        return total, shape


class Stem(Module):
    """Full-resolution entry: conv7 -> SE norm -> ReLU -> conv3 -> SE norm -> ReLU."""

    def __init__(self, cin: int, f1: int, rng, reduction: int = 2):
        self.cin = cin
        self.conv1 = Conv3d(cin, f1, 7, rng)
        self.norm1 = SENorm(f1, rng, reduction)
        self.conv2 = Conv3d(f1, f1, 3, rng)
        self.norm2 = SENorm(f1, rng, reduction)

    def __call__(self, x: Tensor) -> Tensor:
        _check_channels(x, self.cin, "stem")
        x = relu(self.norm1(self.conv1(x)))
        return relu(self.norm2(self.conv2(x)))

    def flops(self, shape):
        a, s = self.conv1.flops(shape)
        b, s = self.conv2.flops(s)
        return a + b + self.norm1.flops(s)[0] + self.norm2.flops(s)[0], s


def make_block(spec: BlockSpec, rng, *, se_reduction: int = 2, mlp_ratio: int = 4,
               ux_kernel: int = 7, ux_expansion: int = 4) -> Module:
    c = spec.out_channels
    if spec.kind == "SE":
        return SEBlock(c, c, rng, units=spec.depth_units, reduction=se_reduction)
    if spec.kind == "Swin":
        return SwinBlock(c, spec.heads, spec.window, rng, pairs=spec.depth_units, mlp_ratio=mlp_ratio)
    return UXBlock(c, rng, pairs=spec.depth_units, kernel=ux_kernel, expansion=ux_expansion)


class EncoderStage(Module):
    """Halve the resolution while changing channels, then run one block at constant shape."""

    def __init__(self, spec: BlockSpec, rng, **block_kwargs):
        self.spec = spec
        if spec.kind == "Swin":
            self.down = PatchMerging(spec.in_channels, spec.out_channels, rng)
        else:
            self.down = Conv3d(spec.in_channels, spec.out_channels, 2, rng, stride=2, padding=0)
        self.block = make_block(spec, rng, **block_kwargs)

    def __call__(self, x: Tensor) -> Tensor:
        _check_channels(x, self.spec.in_channels, f"{self.spec.kind} stage")
        if isinstance(self.down, Conv3d):
            odd = [n % 2 for n in x.shape[2:]]
            if any(odd):
                x = pad(x, [(0, o) for o in odd])
        return self.block(self.down(x))

    def flops(self, shape):
        a, s = self.down.flops(shape)
        b, s = self.block.flops(s)
        return a + b, s


class DecoderStage(Module):
    """Upsample ``deep`` by 2, concatenate the skip, two conv3 -> SE norm -> ReLU."""

    def __init__(self, c_deep: int, c_skip: int, rng, reduction: int = 2):
        self.c_deep, self.c_skip = c_deep, c_skip
        self.up = ConvTranspose3d(c_deep, c_skip, rng)
        self.conv1 = Conv3d(2 * c_skip, c_skip, 3, rng)
        self.norm1 = SENorm(c_skip, rng, reduction)
        self.conv2 = Conv3d(c_skip, c_skip, 3, rng)
        self.norm2 = SENorm(c_skip, rng, reduction)

    def __call__(self, deep: Tensor, skip: Tensor) -> Tensor:
        _check_channels(deep, self.c_deep, "decoder (deep input)")
        _check_channels(skip, self.c_skip, "decoder (skip input)")
        if tuple(2 * n for n in deep.shape[2:]) != tuple(skip.shape[2:]):
            raise ShapeError(f"decoder resolution mismatch: deep {deep.shape} vs skip {skip.shape}")
        x = concat([self.up(deep), skip], axis=1)
        x = relu(self.norm1(self.conv1(x)))
        return relu(self.norm2(self.conv2(x)))

    def flops(self, deep_shape):
        a, s = self.up.flops(deep_shape)
        s = (2 * self.c_skip,) + s[1:]
        b, s = self.conv1.flops(s)
        c, s = self.conv2.flops(s)
        return a + b + c + self.norm1.flops(s)[0] + self.norm2.flops(s)[0], s


__all__ = [
    "BlockSpec", "SEBlock", "SwinBlock", "UXBlock", "DepthwiseScaling", "Stem",
    "EncoderStage", "DecoderStage", "make_block", "BLOCK_KINDS",
]
