"""Parameter bundles with a forward call and an analytic MAC count.

Each layer's ``flops(shape)`` returns ``(macs, output_shape)`` for an input of
``shape`` (batch excluded), counting one multiply-add as one FLOP.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, gelu, permute


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Module:
    """Minimal container: parameters are ``Tensor`` attributes with ``requires_grad``."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching arrays in; returns the names that were loaded."""
        loaded = []
        own = dict(self.named_parameters())
        if strict:
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for name, arr in state.items():
            p = own.get(name)
            if p is None:
                continue
            if p.shape != arr.shape:
                if strict:
                    raise ValueError(f"shape mismatch for {name}: {p.shape} vs {arr.shape}")
                continue
            p.data[...] = arr
            loaded.append(name)
        return loaded

    def flops(self, shape: tuple) -> tuple[int, tuple]:
        raise NotImplementedError


class Conv3d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng, stride: int = 1, padding: int | None = None,
                 groups: int = 1, bias: bool = True):
        self.cin, self.cout, self.k, self.stride, self.groups = cin, cout, k, stride, groups
        self.padding = k // 2 if padding is None else padding
        fan_in = cin // groups * k**3
        self.weight = he_uniform(rng, (cout, cin // groups, k, k, k), fan_in)
        self.bias = zeros_param((cout,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv3d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def flops(self, shape):
        _, *sp = shape
        out_sp = tuple(F.conv_output_extent(n, self.k, self.stride, self.padding) for n in sp)
        macs = self.cout * (self.cin // self.groups) * self.k**3 * math.prod(out_sp)
        return macs, (self.cout,) + out_sp


class ConvTranspose3d(Module):
    def __init__(self, cin: int, cout: int, rng, k: int = 2, bias: bool = True):
        self.cin, self.cout, self.k = cin, cout, k
        self.weight = he_uniform(rng, (cin, cout, k, k, k), cin)
        self.bias = zeros_param((cout,)) if bias else None

    def __call__(self, x):
        return F.transposed_conv3d(x, self.weight, self.bias, stride=self.k)

    def flops(self, shape):
        _, *sp = shape
        return self.cin * self.cout * self.k**3 * math.prod(sp), (self.cout,) + tuple(n * self.k for n in sp)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng, bias: bool = True):
        self.cin, self.cout = cin, cout
        self.weight = he_uniform(rng, (cout, cin), cin)
        self.bias = zeros_param((cout,)) if bias else None

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)

    def flops(self, shape):
        # shape is channels-last (..., cin)
        return self.cin * self.cout * math.prod(shape[:-1]), tuple(shape[:-1]) + (self.cout,)


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = ones_param((c,))
        self.beta = zeros_param((c,))

    def __call__(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps)

    def flops(self, shape):
        return 0, shape


class SENorm(Module):
    """Instance standardization with input-conditioned scale and shift."""

    def __init__(self, c: int, rng, reduction: int = 2, eps: float = 1e-5):
        if reduction < 1 or c % reduction:
            raise ValueError(f"channels {c} must be divisible by reduction {reduction}")
        hidden = c // reduction
        self.eps = eps
        self.reduction = reduction
        self.reduce_weight = he_uniform(rng, (hidden, c), c)
        self.gamma_weight = he_uniform(rng, (c, hidden), hidden)
        self.beta_weight = he_uniform(rng, (c, hidden), hidden)

    def __call__(self, x):
        return F.se_norm(x, self.reduce_weight, self.gamma_weight, self.beta_weight, self.eps)

    def flops(self, shape):
        c = shape[0]
        hidden = c // self.reduction
        return 3 * c * hidden, shape


class Mlp(Module):
    def __init__(self, c: int, rng, ratio: int = 4):
        self.fc1 = Linear(c, ratio * c, rng)
        self.fc2 = Linear(ratio * c, c, rng)

    def __call__(self, x):
        return self.fc2(gelu(self.fc1(x)))

    def flops(self, shape):
        a, s = self.fc1.flops(shape)
        b, s = self.fc2.flops(s)
        return a + b, s


class WindowAttention(Module):
    """(Shifted-)window multi-head self-attention on channels-last ``[B, D, H, W, C]`` tokens."""

    def __init__(self, c: int, heads: int, window: int, shift: int, rng):
        if c % heads:
            raise ValueError(f"{c} channels not divisible by {heads} heads")
        if not 0 <= shift < window:
            raise ValueError("shift must satisfy 0 <= shift < window")
        self.c, self.heads, self.window, self.shift = c, heads, window, shift
        self.qkv = Linear(c, 3 * c, rng)
        self.proj = Linear(c, c, rng)
        self.rel_pos_bias = zeros_param((heads, (2 * window - 1) ** 3))

    def geometry(self, spatial: tuple) -> tuple[int, int]:
        return F.effective_window(tuple(spatial), self.window, self.shift)

    def attend(self, windows: Tensor, spatial: tuple) -> Tensor:
        w, s = self.geometry(spatial)
        return F.window_attention(
            windows, self.qkv.weight, self.qkv.bias, self.proj.weight, self.proj.bias, self.heads,
            rel_pos_bias=self.rel_pos_bias,
            rel_index=F.relative_position_index(w, self.window),
            attn_mask=F.attention_mask(tuple(spatial), w, s),
        )

    def __call__(self, x: Tensor) -> Tensor:
        spatial = x.shape[1:4]
        w, s = self.geometry(spatial)
        windows = F.window_partition_cl(x, w, s)
        out = self.attend(windows, spatial)
        return F.window_reverse_cl(out, w, s, x.shape)

    def flops(self, shape):
        *sp, c = shape
        w, _ = self.geometry(tuple(sp))
        n = w**3
        n_windows = math.prod(-(-e // w) for e in sp)
        per_window = n * c * 3 * c + 2 * n * n * c + n * c * c
        return n_windows * per_window, shape


class PatchMerging(Module):
    def __init__(self, cin: int, cout: int, rng):
        self.cin, self.cout = cin, cout
        self.norm = LayerNorm(8 * cin)
        self.reduction = Linear(8 * cin, cout, rng, bias=False)

    def __call__(self, x):
        return F.patch_merge_downsample(x, self.norm.gamma, self.norm.beta, self.reduction.weight, self.norm.eps)

    def flops(self, shape):
        _, *sp = shape
        out_sp = tuple(-(-n // 2) for n in sp)
        return 8 * self.cin * self.cout * math.prod(out_sp), (self.cout,) + out_sp


def to_channels_last(x: Tensor) -> Tensor:
    return permute(x, (0, 2, 3, 4, 1))


def to_channels_first(x: Tensor) -> Tensor:
    return permute(x, (0, 4, 1, 2, 3))


__all__ = [
    "Module", "Conv3d", "ConvTranspose3d", "Linear", "LayerNorm", "SENorm", "Mlp",
    "WindowAttention", "PatchMerging", "to_channels_last", "to_channels_first",
]
