"""Neural-network primitives on top of :mod:`legonet.tensor`.

Volumetric tensors are channels-first ``[B, C, D, H, W]``; token tensors used
by attention and layer norm are channels-last.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    ShapeError,
    Tensor,
    as_tensor,
    make_result,
    mean,
    pad,
    permute,
    relu,
    reshape,
    roll,
    sigmoid,
    take,
    tanh,
)

# im2col buffers are built in slabs of output planes so memory stays bounded
_COL_BUDGET = 32 * 2**20

MASK_VALUE = -1e9


def conv_output_extent(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


# ---------------------------------------------------------------------------
# 3-D convolution
# ---------------------------------------------------------------------------

def _slab_planes(cin: int, k: int, plane: int) -> int:
    per_plane = cin * k**3 * plane * 8
    return max(1, _COL_BUDGET // max(per_plane, 1))


def _im2col(xp: np.ndarray, k: int, s: int, d0: int, d1: int, ho: int, wo: int) -> np.ndarray:
    """Columns ``[Cin*k^3, (d1-d0)*ho*wo]`` for output planes ``d0:d1`` of one sample."""
    cin = xp.shape[0]
    sub = xp[:, d0 * s:(d1 - 1) * s + k, : (ho - 1) * s + k, : (wo - 1) * s + k]
    win = sliding_window_view(sub, (k, k, k), axis=(1, 2, 3))[:, ::s, ::s, ::s]
    return win.transpose(0, 4, 5, 6, 1, 2, 3).reshape(cin * k**3, -1)


def _col2im_add(dxp: np.ndarray, cols: np.ndarray, k: int, s: int, d0: int, nd: int, ho: int, wo: int):
    cin = dxp.shape[0]
    cols = cols.reshape(cin, k, k, k, nd, ho, wo)
    for i in range(k):
        di = slice(d0 * s + i, d0 * s + i + s * (nd - 1) + 1, s)
        for j in range(k):
            hj = slice(j, j + s * (ho - 1) + 1, s)
            for l in range(k):
                wl = slice(l, l + s * (wo - 1) + 1, s)
                dxp[:, di, hj, wl] += cols[:, i, j, l]


def _dense_forward(xp, w2, k, s, out_sp):
    b = xp.shape[0]
    do, ho, wo = out_sp
    out = np.empty((b, w2.shape[0], do * ho * wo), dtype=xp.dtype)
    step = _slab_planes(xp.shape[1], k, ho * wo)
    for n in range(b):
        for d0 in range(0, do, step):
            d1 = min(do, d0 + step)
            cols = _im2col(xp[n], k, s, d0, d1, ho, wo)
            out[n, :, d0 * ho * wo:d1 * ho * wo] = w2 @ cols
    return out


def _dense_backward(xp, w2, g, k, s, out_sp, need_dx, need_dw):
    b = xp.shape[0]
    do, ho, wo = out_sp
    dxp = np.zeros_like(xp) if need_dx else None
    dw2 = np.zeros_like(w2) if need_dw else None
    step = _slab_planes(xp.shape[1], k, ho * wo)
    for n in range(b):
        for d0 in range(0, do, step):
            d1 = min(do, d0 + step)
            gs = g[n, :, d0 * ho * wo:d1 * ho * wo]
            if need_dw:
                cols = _im2col(xp[n], k, s, d0, d1, ho, wo)
                dw2 += gs @ cols.T
            if need_dx:
                _col2im_add(dxp[n], w2.T @ gs, k, s, d0, d1 - d0, ho, wo)
    return dxp, dw2


def _depthwise_forward(xp, w, k, s, out_sp):
    do, ho, wo = out_sp
    out = np.zeros(xp.shape[:2] + out_sp, dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                src = xp[:, :, i:i + s * (do - 1) + 1:s, j:j + s * (ho - 1) + 1:s, l:l + s * (wo - 1) + 1:s]
                out += w[None, :, i, j, l, None, None, None] * src
    return out


def _depthwise_backward(xp, w, g, k, s, out_sp, need_dx, need_dw):
    do, ho, wo = out_sp
    dxp = np.zeros_like(xp) if need_dx else None
    dw = np.zeros_like(w) if need_dw else None
    for i in range(k):
        di = slice(i, i + s * (do - 1) + 1, s)
        for j in range(k):
            hj = slice(j, j + s * (ho - 1) + 1, s)
            for l in range(k):
                wl = slice(l, l + s * (wo - 1) + 1, s)
                if need_dw:
                    dw[:, i, j, l] = np.einsum("bcdhw,bcdhw->c", g, xp[:, :, di, hj, wl])
                if need_dx:
                    dxp[:, :, di, hj, wl] += w[None, :, i, j, l, None, None, None] * g
    return dxp, dw


def conv3d(x, weight, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """3-D cross-correlation, weight ``[C_out, C_in/groups, k, k, k]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 5:
        raise ShapeError(f"conv3d expects [B,C,D,H,W], got {x.shape}")
    b, cin = x.shape[:2]
    cout, cin_g, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if cin != cin_g * groups or cout % groups:
        raise ShapeError(
            f"conv3d channel mismatch: input has {cin} channels, weight {weight.shape} with groups={groups}"
        )
    out_sp = tuple(conv_output_extent(n, k, stride, padding) for n in x.shape[2:])
    if min(out_sp) < 1:
        raise ShapeError(f"conv3d output extent {out_sp} is not positive for input {x.shape}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p), (p, p))) if p else x.data
    wd = weight.data
    depthwise = groups == cin == cout and groups > 1
    cg_out = cout // groups

    if depthwise:
        out = _depthwise_forward(xp, wd[:, 0], k, stride, out_sp)
    else:
        parts = []
        for gi in range(groups):
            w2 = wd[gi * cg_out:(gi + 1) * cg_out].reshape(cg_out, -1)
            parts.append(_dense_forward(xp[:, gi * cin_g:(gi + 1) * cin_g], w2, k, stride, out_sp))
        out = (parts[0] if groups == 1 else np.concatenate(parts, axis=1)).reshape((b, cout) + out_sp)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, ctx):
        need_dx, need_dw = x.requires_grad, weight.requires_grad
        if depthwise:
            dxp, dw = _depthwise_backward(xp, wd[:, 0], g, k, stride, out_sp, need_dx, need_dw)
            dw = None if dw is None else dw[:, None]
        else:
            gf = g.reshape(b, cout, -1)
            dxs, dws = [], []
            for gi in range(groups):
                w2 = wd[gi * cg_out:(gi + 1) * cg_out].reshape(cg_out, -1)
                dxg, dwg = _dense_backward(
                    xp[:, gi * cin_g:(gi + 1) * cin_g], w2, gf[:, gi * cg_out:(gi + 1) * cg_out],
                    k, stride, out_sp, need_dx, need_dw,
                )
                dxs.append(dxg)
                dws.append(dwg)
            dxp = None if not need_dx else (dxs[0] if groups == 1 else np.concatenate(dxs, axis=1))
            dw = None if not need_dw else np.concatenate(dws, axis=0).reshape(wd.shape)
        dx = None
        if dxp is not None:
            dx = dxp[:, :, p:p + x.shape[2], p:p + x.shape[3], p:p + x.shape[4]] if p else dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    return make_result(out, "conv3d", inputs, bw, stride=stride, padding=padding, groups=groups)


def transposed_conv3d(x, weight, bias=None, stride: int = 2) -> Tensor:
    """Transposed convolution with kernel == stride; weight ``[C_in, C_out, k, k, k]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    b, cin, d, h, w = x.shape
    if weight.shape[0] != cin:
        raise ShapeError(f"transposed_conv3d channel mismatch: input {cin}, weight {weight.shape}")
    k = weight.shape[2]
    if k != stride:
        raise ValueError("transposed_conv3d supports kernel size == stride only")
    cout = weight.shape[1]
    w2 = weight.data.reshape(cin, cout * k**3)
    cols = np.matmul(w2.T, x.data.reshape(b, cin, -1))
    out = (
        cols.reshape(b, cout, k, k, k, d, h, w)
        .transpose(0, 1, 5, 2, 6, 3, 7, 4)
        .reshape(b, cout, d * k, h * k, w * k)
    )
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, ctx):
        gc = g.reshape(b, cout, d, k, h, k, w, k).transpose(0, 1, 3, 5, 7, 2, 4, 6).reshape(b, cout * k**3, -1)
        dx = np.matmul(w2, gc).reshape(x.shape) if x.requires_grad else None
        dw = None
        if weight.requires_grad:
            xf = x.data.reshape(b, cin, -1)
            dw = sum(xf[n] @ gc[n].T for n in range(b)).reshape(weight.shape)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    return make_result(out, "transposed_conv3d", inputs, bw, stride=stride)


# ---------------------------------------------------------------------------
# dense layers and normalization
# ---------------------------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` on the trailing axis; weight is ``[out, in]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects trailing dim {weight.shape[1]}, got {x.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[0],))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, ctx):
        g2 = g.reshape(-1, weight.shape[0])
        dx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        dw = g2.T @ x2 if weight.requires_grad else None
        grads = [dx, dw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return make_result(out, "linear", inputs, bw)


def _standardize(x: Tensor, axes: tuple, eps: float, op: str) -> Tensor:
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g, ctx):
        gm = g.mean(axis=axes, keepdims=True)
        gx = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return make_result(xhat, op, (x,), bw, eps=eps)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Standardize over the trailing (channel) axis with population variance, then affine."""
    x = as_tensor(x)
    if gamma is not None and x.shape[-1] != gamma.shape[0]:
        raise ShapeError(f"layer_norm expects trailing dim {gamma.shape[0]}, got {x.shape}")
    y = _standardize(x, (x.ndim - 1,), eps, "layer_norm")
    if gamma is not None:
        y = y * gamma + beta
    return y


def instance_standardize(x, eps: float = 1e-5) -> Tensor:
    """Zero mean, unit population variance per (sample, channel) over D*H*W."""
    x = as_tensor(x)
    return _standardize(x, tuple(range(2, x.ndim)), eps, "instance_standardize")


def se_norm(x, reduce_weight, gamma_weight, beta_weight, eps: float = 1e-5) -> Tensor:
    """``y = gamma(x) * x' + beta(x)`` with gamma/beta from a squeeze-excitation path."""
    x = as_tensor(x)
    if x.shape[1] != gamma_weight.shape[0]:
        raise ShapeError(f"se_norm expects {gamma_weight.shape[0]} channels, got {x.shape[1]}")
    b, c = x.shape[:2]
    spatial = tuple(range(2, x.ndim))
    xprime = instance_standardize(x, eps)
    z = mean(x, spatial)
    h = relu(linear(z, reduce_weight))
    gamma = sigmoid(linear(h, gamma_weight))
    beta = tanh(linear(h, beta_weight))
    bshape = (b, c) + (1,) * len(spatial)
    return reshape(gamma, bshape) * xprime + reshape(beta, bshape)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g, ctx):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, "softmax", (x,), bw)


# ---------------------------------------------------------------------------
# windowed attention
# ---------------------------------------------------------------------------

def effective_window(spatial: tuple, window: int, shift: int) -> tuple[int, int]:
    """Shrink the window to the grid when the grid is no larger; no shift then."""
    biggest = max(spatial)
    if biggest <= window:
        return biggest, 0
    return window, shift


def _padded(spatial, w):
    return tuple(n + (-n) % w for n in spatial)


def window_partition_cl(x: Tensor, window: int, shift: int) -> Tensor:
    """``[B, D, H, W, C]`` -> ``[B*nW, w^3, C]`` after zero-padding and a cyclic roll by ``-shift``."""
    b, d, h, w_, c = x.shape
    pads = [(-n) % window for n in (d, h, w_)]
    if any(pads):
        x = pad(x, [(0, 0), (0, pads[0]), (0, pads[1]), (0, pads[2]), (0, 0)])
    if shift:
        x = roll(x, (-shift,) * 3, (1, 2, 3))
    dp, hp, wp = d + pads[0], h + pads[1], w_ + pads[2]
    x = reshape(x, (b, dp // window, window, hp // window, window, wp // window, window, c))
    x = permute(x, (0, 1, 3, 5, 2, 4, 6, 7))
    return reshape(x, (-1, window**3, c))


def window_reverse_cl(windows: Tensor, window: int, shift: int, shape: tuple) -> Tensor:
    """Exact inverse of :func:`window_partition_cl`; ``shape`` is ``(B, D, H, W, C)``."""
    b, d, h, w_, c = shape
    dp, hp, wp = _padded((d, h, w_), window)
    x = reshape(windows, (b, dp // window, hp // window, wp // window, window, window, window, c))
    x = permute(x, (0, 1, 4, 2, 5, 3, 6, 7))
    x = reshape(x, (b, dp, hp, wp, c))
    if shift:
        x = roll(x, (shift,) * 3, (1, 2, 3))
    if (dp, hp, wp) != (d, h, w_):
        x = x[:, :d, :h, :w_, :]
    return x


def window_partition(x, window: int, shift: int = 0) -> Tensor:
    """``[B, C, D, H, W]`` -> ``[Nw, w^3, C]``."""
    x = as_tensor(x)
    if not 0 <= shift < window:
        raise ValueError("shift must satisfy 0 <= shift < window")
    return window_partition_cl(permute(x, (0, 2, 3, 4, 1)), window, shift)


def window_reverse(windows, window: int, shift: int, shape: tuple) -> Tensor:
    """Inverse of :func:`window_partition`; ``shape`` is ``(B, C, D, H, W)``."""
    b, c, d, h, w_ = shape
    x = window_reverse_cl(as_tensor(windows), window, shift, (b, d, h, w_, c))
    return permute(x, (0, 4, 1, 2, 3))


@lru_cache(maxsize=64)
def attention_mask(spatial: tuple, window: int, shift: int) -> np.ndarray | None:
    """Additive mask ``[nW, N, N]`` for one sample, or None when nothing is masked.

    Keys from a different pre-roll region than the query, and zero-padded keys,
    receive ``MASK_VALUE``.
    """
    padded = _padded(spatial, window)
    needs_pad = padded != tuple(spatial)
    if not shift and not needs_pad:
        return None
    labels = np.zeros(padded, dtype=np.int64)
    if shift:
        cnt = 0
        cuts = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
        for sd in cuts:
            for sh in cuts:
                for sw in cuts:
                    labels[sd, sh, sw] = cnt
                    cnt += 1
    is_pad = np.ones(padded, dtype=bool)
    is_pad[: spatial[0], : spatial[1], : spatial[2]] = False
    if shift:
        is_pad = np.roll(is_pad, (-shift,) * 3, (0, 1, 2))

    def tile(a):
        dp, hp, wp = padded
        a = a.reshape(dp // window, window, hp // window, window, wp // window, window)
        return a.transpose(0, 2, 4, 1, 3, 5).reshape(-1, window**3)

    lw, pw = tile(labels), tile(is_pad)
    mask = np.where(lw[:, :, None] != lw[:, None, :], MASK_VALUE, 0.0)
    mask = mask + np.where(pw[:, None, :], MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=64)
def relative_position_index(window: int, table_window: int) -> np.ndarray:
    """Index ``[N, N]`` into a ``(2*table_window-1)^3`` bias table by 3-D offset."""
    coords = np.stack(np.meshgrid(*(np.arange(window),) * 3, indexing="ij")).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (table_window - 1)
    span = 2 * table_window - 1
    idx = rel[0] * span * span + rel[1] * span + rel[2]
    idx.setflags(write=False)
    return idx


def window_attention(windows, qkv_weight, qkv_bias, proj_weight, proj_bias, heads: int,
                     rel_pos_bias=None, rel_index=None, attn_mask=None) -> Tensor:
    """Multi-head self-attention within each window.

    ``windows`` is ``[Nw, N, C]``; ``attn_mask`` (``[nW, N, N]``, per sample)
    is broadcast over the batch, which must be the leading factor of ``Nw``.
    """
    windows = as_tensor(windows)
    nw, n, c = windows.shape
    if c % heads:
        raise ShapeError(f"{c} channels cannot be split into {heads} heads")
    hd = c // heads
    qkv = linear(windows, qkv_weight, qkv_bias)
    qkv = permute(reshape(qkv, (nw, n, 3, heads, hd)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    attn = (q * (hd ** -0.5)) @ permute(k, (0, 1, 3, 2))
    if rel_pos_bias is not None:
        bias = reshape(_take_cols(rel_pos_bias, rel_index), (heads, n, n))
        attn = attn + bias
    if attn_mask is not None:
        nmask = attn_mask.shape[0]
        attn = reshape(attn, (nw // nmask, nmask, heads, n, n)) + Tensor(attn_mask[None, :, None])
        attn = reshape(attn, (nw, heads, n, n))
    attn = softmax(attn, axis=-1)
    out = permute(attn @ v, (0, 2, 1, 3))
    return linear(reshape(out, (nw, n, c)), proj_weight, proj_bias)


def _take_cols(table: Tensor, index: np.ndarray) -> Tensor:
    return take(table, index.reshape(-1), axis=1)


def patch_merge_downsample(x, norm_gamma, norm_beta, weight, eps: float = 1e-5) -> Tensor:
    """Gather 2x2x2 neighbourhoods into ``8C`` channels, layer-norm, project.

    Returns channels-first ``[B, out, D/2, H/2, W/2]``. The gathered vector is
    channel-major with the (d, h, w) offset as the minor index.
    """
    x = as_tensor(x)
    b, c, d, h, w = x.shape
    pads = [n % 2 for n in (d, h, w)]
    if any(pads):
        x = pad(x, [(0, pads[0]), (0, pads[1]), (0, pads[2])])
        d, h, w = d + pads[0], h + pads[1], w + pads[2]
    x = reshape(x, (b, c, d // 2, 2, h // 2, 2, w // 2, 2))
    x = permute(x, (0, 2, 4, 6, 1, 3, 5, 7))
    x = reshape(x, (b, d // 2, h // 2, w // 2, 8 * c))
    x = layer_norm(x, norm_gamma, norm_beta, eps)
    x = linear(x, weight)
    return permute(x, (0, 4, 1, 2, 3))
