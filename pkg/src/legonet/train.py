"""Training loop with early stopping, evaluation and k-fold cross-validation."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import optim
from .losses import LossConfig, combined_loss
from .metrics import MetricsReport, case_metrics, dice_coefficient
from .model import LegoNet, ModelConfig, build, checkpoint_bytes
from .tensor import Tensor, backward, no_grad


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    eta_min: float = 1e-5
    t0: int = 25
    restarts: bool = True
    max_epochs: int = 100
    patience: int = 25
    folds: int = 5
    batch_size: int = 2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.eta_min <= self.lr:
            raise ValueError("need 0 < eta_min <= lr")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("need 0 <= patience <= max_epochs")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def from_mapping(cls, data: dict) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in data.items():
            if k not in kinds:
                continue
            kind = kinds[k]
            if kind == "bool":
                kwargs[k] = str(v).lower() in ("1", "true", "yes")
            elif kind == "int":
                kwargs[k] = int(v)
            else:
                kwargs[k] = float(v)
        return cls(**kwargs)


def cosine_lr(t: float, cfg: TrainConfig = TrainConfig()) -> float:
    return optim.cosine_lr(t, cfg.lr, cfg.eta_min, cfg.t0, cfg.restarts)


def make_optimizer(model: LegoNet, cfg: TrainConfig) -> optim.AdamW:
    return optim.AdamW(model.parameters(), cfg.weight_decay, (cfg.beta1, cfg.beta2), cfg.adam_eps)


Case = tuple  # (image array (D,H,W), mask array (D,H,W))


def _arrays(case) -> tuple[np.ndarray, np.ndarray]:
    image, mask = case
    return np.asarray(getattr(image, "data", image)), np.asarray(getattr(mask, "data", mask))


def predict_probs(model: LegoNet, image) -> np.ndarray:
    x = Tensor(np.asarray(getattr(image, "data", image), dtype=np.float64)[None, None])
    with no_grad():
        logits = model(x).data[0, 0]
    return 1.0 / (1.0 + np.exp(-logits))


def predict_mask(model: LegoNet, image, threshold: float = 0.5) -> np.ndarray:
    return (predict_probs(model, image) >= threshold).astype(np.float32)


def validation_dsc(model: LegoNet, cases: list, threshold: float = 0.5) -> float:
    scores = [dice_coefficient(predict_mask(model, img, threshold), msk) for img, msk in map(_arrays, cases)]
    return float(np.mean(scores))


def evaluate(model: LegoNet, cases: list, case_ids: list[str] | None = None, threshold: float = 0.5,
             spacing=(1.0, 1.0, 1.0)) -> MetricsReport:
    report = MetricsReport()
    for i, (img, msk) in enumerate(map(_arrays, cases)):
        cid = case_ids[i] if case_ids else f"case{i:03d}"
        report.add(cid, case_metrics(predict_mask(model, img, threshold), msk, spacing))
    return report


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_dsc: float

    def row(self) -> str:
        return f"{self.epoch},{self.lr!r},{self.train_loss!r},{self.val_dsc!r}"


LOG_HEADER = "epoch,lr,train_loss,val_dsc"


@dataclass
class RunState:
    epoch: int = 0
    best_dsc: float = -math.inf
    best_epoch: int = -1
    since_best: int = 0
    best_state: dict | None = None


@dataclass
class TrainResult:
    model: LegoNet
    log: list[EpochLog] = field(default_factory=list)
    best_dsc: float = -math.inf
    best_epoch: int = -1
    stopped_early: bool = False

    def log_csv(self) -> str:
        return "\n".join([LOG_HEADER] + [e.row() for e in self.log]) + "\n"

    def checkpoint_bytes(self) -> bytes:
        return checkpoint_bytes(self.model, "segment", {"best_epoch": self.best_epoch})


def train_epoch(model: LegoNet, optimizer: optim.AdamW, cases: list, cfg: TrainConfig, epoch: int,
                lr: float, loss_cfg: LossConfig = LossConfig()) -> float:
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(cases))
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        batch = [_arrays(cases[i]) for i in order[start:start + cfg.batch_size]]
        x = np.stack([b[0] for b in batch])[:, None].astype(np.float64)
        y = np.stack([b[1] for b in batch])[:, None].astype(np.float64)
        optimizer.zero_grad()
        loss = combined_loss(model(Tensor(x)), y, loss_cfg)
        backward(loss)
        optimizer.step(lr)
        losses.append(float(loss.data))
    return float(np.mean(losses))


def train(model: LegoNet, train_cases: list, val_cases: list, cfg: TrainConfig = TrainConfig(),
          on_epoch: Callable[[EpochLog], None] | None = None, loss_cfg: LossConfig = LossConfig()) -> TrainResult:
    """Train with per-epoch cosine lr and DSC-based early stopping.

    The returned model carries the weights of the best validation epoch.
    """
    if not train_cases or not val_cases:
        raise ValueError("train and validation splits must both be nonempty")
    optimizer = make_optimizer(model, cfg)
    state = RunState()
    result = TrainResult(model)
    for epoch in range(cfg.max_epochs):
        state.epoch = epoch
        lr = cosine_lr(epoch, cfg)
        loss = train_epoch(model, optimizer, train_cases, cfg, epoch, lr, loss_cfg)
        dsc = validation_dsc(model, val_cases, cfg.threshold)
        entry = EpochLog(epoch, lr, loss, dsc)
        result.log.append(entry)
        if on_epoch:
            on_epoch(entry)
        if dsc > state.best_dsc:
            state.best_dsc, state.best_epoch, state.since_best = dsc, epoch, 0
            state.best_state = copy.deepcopy(model.state_dict())
        else:
            state.since_best += 1
            if state.since_best > cfg.patience:
                result.stopped_early = True
                break
    model.load_state_dict(state.best_state)
    result.best_dsc, result.best_epoch = state.best_dsc, state.best_epoch
    return result


def fold_assignment(n_cases: int, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Seeded split of ``range(n_cases)`` into ``folds`` near-equal validation folds."""
    if n_cases < folds:
        raise ValueError(f"{n_cases} cases is too few for {folds} folds")
    order = np.random.default_rng(seed).permutation(n_cases)
    return [np.sort(part) for part in np.array_split(order, folds)]


@dataclass
class CVResult:
    fold_reports: list[MetricsReport]
    fold_means: list[dict]

    def summary(self) -> dict[str, tuple[float, float]]:
        """Mean and std over folds of each fold's mean metric."""
        out = {}
        for k in self.fold_means[0]:
            vals = np.array([f[k] for f in self.fold_means], dtype=float)
            out[k] = (float(np.nanmean(vals)), float(np.nanstd(vals)))
        return out


def cross_validate(cases: list, model_config: ModelConfig, cfg: TrainConfig = TrainConfig(),
                   init: Callable[[int], LegoNet] | None = None,
                   on_epoch: Callable[[int, EpochLog], None] | None = None) -> CVResult:
    reports, means = [], []
    for k, val_idx in enumerate(fold_assignment(len(cases), cfg.folds, cfg.seed)):
        held = set(val_idx.tolist())
        train_cases = [c for i, c in enumerate(cases) if i not in held]
        val_cases = [cases[i] for i in val_idx]
        model = init(k) if init else build(model_config, cfg.seed + k)
        cb = (lambda e, k=k: on_epoch(k, e)) if on_epoch else None
        train(model, train_cases, val_cases, cfg, cb)
        report = evaluate(model, val_cases, [f"case{i:03d}" for i in val_idx], cfg.threshold)
        reports.append(report)
        means.append({k2: v[0] for k2, v in report.aggregate().items()})
    return CVResult(reports, means)
