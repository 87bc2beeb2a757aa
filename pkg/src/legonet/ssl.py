"""Shuffle-then-mask corruption and reconstruction pretraining.

A volume ``(D, H, W)`` is cut into an in-plane grid of tiles (full depth per
tile by default) which are permuted; random cubes of the shuffled volume are
then blanked. The network is trained to reproduce the uncorrupted original.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Volume
from .model import LegoNet, ModelConfig, build
from .optim import AdamW
from .tensor import ShapeError, Tensor, as_tensor, backward, mean


@dataclass(frozen=True)
class SSLConfig:
    n_patches: int = 9
    grid: tuple = (3, 3, 1)  # tiles along (H, W, D)
    mask_ratio: float = 0.4
    mask_patch_edge: int = 8
    fill_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if math.prod(self.grid) != self.n_patches:
            raise ValueError(f"grid {self.grid} does not give {self.n_patches} patches")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0, 1]")
        if self.mask_patch_edge < 1:
            raise ValueError("mask_patch_edge must be positive")


@dataclass
class CorruptionRecord:
    permutation: np.ndarray
    mask: np.ndarray


def _data(v) -> np.ndarray:
    return v.data if isinstance(v, Volume) else np.asarray(v)


def _wrap(like, data: np.ndarray):
    if isinstance(like, Volume):
        return Volume(data, like.spacing, like.origin_extent, like.domain)
    return data


def tile_slices(shape: tuple, grid: tuple) -> list[tuple[slice, slice, slice]]:
    """Row-major ``(d, h, w)`` list of equal tiles covering the divisible part of ``shape``.

    Voxels beyond the last full tile along an axis are not part of any tile.
    """
    gh, gw, gd = grid
    d, h, w = shape
    td, th, tw = d // gd, h // gh, w // gw
    if min(td, th, tw) == 0:
        raise ShapeError(f"volume {shape} too small for a {grid} tile grid")
    return [
        (slice(i * td, (i + 1) * td), slice(j * th, (j + 1) * th), slice(k * tw, (k + 1) * tw))
        for i in range(gd) for j in range(gh) for k in range(gw)
    ]


def apply_permutation(data: np.ndarray, permutation, grid: tuple) -> np.ndarray:
    """Output tile ``i`` receives the contents of input tile ``permutation[i]``."""
    tiles = tile_slices(data.shape, grid)
    perm = np.asarray(permutation)
    if sorted(perm.tolist()) != list(range(len(tiles))):
        raise ValueError(f"permutation {perm.tolist()} is not a bijection of 0..{len(tiles) - 1}")
    out = data.copy()
    for dst, src in zip(tiles, perm):
        out[dst] = data[tiles[src]]
    return out


def invert_permutation(permutation) -> np.ndarray:
    return np.argsort(np.asarray(permutation))


def partition_and_shuffle(v, cfg: SSLConfig, rng: np.random.Generator):
    perm = rng.permutation(cfg.n_patches)
    out = apply_permutation(_data(v), perm, cfg.grid)
    return _wrap(v, out), CorruptionRecord(perm, np.zeros(_data(v).shape, dtype=bool))


def sample_mask(shape: tuple, cfg: SSLConfig, rng: np.random.Generator) -> np.ndarray:
    """Union of random non-overlapping cubes, added until the masked fraction reaches ``mask_ratio``."""
    e = cfg.mask_patch_edge
    cells = [-(-n // e) for n in shape]
    mask = np.zeros(shape, dtype=bool)
    total = math.prod(shape)
    if cfg.mask_ratio <= 0 or total == 0:
        return mask
    covered = 0
    for flat in rng.permutation(math.prod(cells)):
        i, j, k = np.unravel_index(flat, cells)
        region = (slice(i * e, (i + 1) * e), slice(j * e, (j + 1) * e), slice(k * e, (k + 1) * e))
        covered += mask[region].size
        mask[region] = True
        if covered / total >= cfg.mask_ratio:
            break
    return mask


def apply_mask(v, cfg: SSLConfig, rng: np.random.Generator):
    data = _data(v)
    mask = sample_mask(data.shape, cfg, rng)
    out = data.copy()
    out[mask] = cfg.fill_value
    return _wrap(v, out), mask


def corrupt(v, cfg: SSLConfig, rng: np.random.Generator):
    """Shuffle, then mask. Returns the corrupted volume and its record."""
    shuffled, record = partition_and_shuffle(v, cfg, rng)
    masked, mask = apply_mask(shuffled, cfg, rng)
    record.mask = mask
    return masked, record


def apply_record(v, record: CorruptionRecord, cfg: SSLConfig):
    out = apply_permutation(_data(v), record.permutation, cfg.grid)
    out[record.mask] = cfg.fill_value
    return _wrap(v, out)


def corruption_rng(seed: int, epoch: int, case_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, case_index])


def reconstruction_loss(pred, original) -> Tensor:
    """Mean squared error."""
    pred = as_tensor(pred)
    target = _data(original.data if isinstance(original, Tensor) else original)
    if pred.shape != target.shape:
        raise ShapeError(f"reconstruction shape {pred.shape} differs from target {target.shape}")
    diff = pred - target
    return mean(diff * diff)


def build_pretrain_model(config: ModelConfig, seed: int = 0) -> LegoNet:
    """Same encoder/decoder as the segmentation model; the 1x1x1 head is read as a linear intensity."""
    model = build(config, seed)
    model.phase = "pretrain"
    return model


HEAD_PREFIX = "head."


def transfer_weights(pretrained: LegoNet, target: LegoNet, skip_prefixes=(HEAD_PREFIX,)) -> list[str]:
    """Copy every parameter except the output head; returns the transferred names."""
    state = {k: v for k, v in pretrained.state_dict().items() if not k.startswith(tuple(skip_prefixes))}
    return target.load_state_dict(state, strict=False)


def _as_batch(arr: np.ndarray) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64)[None, None])


def pretrain_epoch(model: LegoNet, volumes: list, cfg: SSLConfig, optimizer: AdamW, lr: float,
                   epoch: int = 0) -> float:
    """One pass over ``volumes`` with one optimizer step per volume; returns the mean loss."""
    if not volumes:
        raise ValueError("pretraining needs at least one volume")
    losses = []
    for idx, v in enumerate(volumes):
        original = _data(v)
        corrupted, _ = corrupt(original, cfg, corruption_rng(cfg.seed, epoch, idx))
        optimizer.zero_grad()
        loss = reconstruction_loss(model(_as_batch(corrupted)), original[None, None].astype(np.float64))
        backward(loss)
        optimizer.step(lr)
        losses.append(float(loss.data))
    return float(np.mean(losses))
