import math

import numpy as np
import pytest

from legonet import train as tr
from legonet.data import synth_tube_dataset
from legonet.metrics import MetricsReport
from legonet.model import ModelConfig, build, desk_config, state_hash
from legonet.optim import AdamW, AdamWState, adamw_step, cosine_lr
from legonet.tensor import ShapeError, Tensor

TINY = dict(features=(2, 4, 8, 16), hidden=32, window=2, input_shape=(16, 16, 16), head_channels=8)


def test_adamw_zero_grad_without_decay_is_identity(rng):
    p = rng.normal(size=(3, 4))
    before = p.copy()
    adamw_step([p], [np.zeros_like(p)], AdamWState(), 1e-3, weight_decay=0.0)
    assert np.array_equal(p, before)


def test_adamw_zero_grad_shrink_factor_exact(rng):
    p = rng.normal(size=(5,))
    before = p.copy()
    adamw_step([p], [np.zeros_like(p)], AdamWState(), 1e-3, weight_decay=1e-5)
    assert np.array_equal(p, before * (1.0 - 1e-3 * 1e-5))


def test_adamw_one_step_oracle():
    lr, wd, b1, b2, eps = 1e-3, 1e-5, 0.9, 0.999, 1e-8
    p = np.array([0.7])
    adamw_step([p], [np.array([1.0])], AdamWState(), lr, wd, (b1, b2), eps)
    m_hat = (1 - b1) * 1.0 / (1 - b1)
    v_hat = (1 - b2) * 1.0 / (1 - b2)
    expected = 0.7 - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * 0.7)
    assert abs(p[0] - expected) < 1e-12
    assert abs((0.7 - p[0]) - lr / (1 + eps)) < 1e-8


def test_adamw_two_step_transcription(rng):
    lr, wd, b1, b2, eps = 2e-3, 1e-2, 0.9, 0.999, 1e-8
    p0, g1, g2 = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
    p, state = p0.copy(), AdamWState()
    adamw_step([p], [g1], state, lr, wd, (b1, b2), eps)
    adamw_step([p], [g2], state, lr, wd, (b1, b2), eps)
    theta, m, v = p0.copy(), np.zeros(3), np.zeros(3)
    for t, g in enumerate((g1, g2), start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        theta = theta - lr * ((m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps) + wd * theta)
    np.testing.assert_allclose(p, theta, rtol=0, atol=1e-15)
    assert state.step == 2


def test_adamw_errors_and_wrapper():
    with pytest.raises(ShapeError):
        adamw_step([np.zeros(2)], [np.zeros(3)], AdamWState(), 1e-3)
    with pytest.raises(ShapeError):
        adamw_step([np.zeros(2)], [], AdamWState(), 1e-3)
    w = Tensor(np.ones(2), requires_grad=True)
    opt = AdamW([w], weight_decay=0.0)
    w.grad = np.array([1.0, -1.0])
    opt.step(0.1)
    np.testing.assert_allclose(w.data, [0.9, 1.1], atol=1e-8)
    opt.zero_grad()
    assert w.grad is None


def test_cosine_schedule_values():
    assert cosine_lr(0) == 1e-3
    assert abs(cosine_lr(25) - 1e-5) < 1e-12
    assert abs(cosine_lr(12.5) - 5.05e-4) < 1e-12
    assert abs(cosine_lr(37.5) - 5.05e-4) < 1e-12
    assert cosine_lr(26) == cosine_lr(1)
    assert cosine_lr(50) == cosine_lr(25)
    assert cosine_lr(60, restarts=False) == cosine_lr(25, restarts=False)
    assert tr.cosine_lr(12.5) == cosine_lr(12.5)
    with pytest.raises(ValueError):
        cosine_lr(-1)


def test_cosine_schedule_bounded():
    for t in np.linspace(0, 200, 2001):
        assert 1e-5 - 1e-18 <= cosine_lr(t) <= 1e-3


def test_train_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(eta_min=1e-2)
    with pytest.raises(ValueError):
        tr.TrainConfig(patience=200)
    with pytest.raises(ValueError):
        tr.TrainConfig(folds=1)
    cfg = tr.TrainConfig.from_mapping({"lr": "0.002", "max_epochs": "7", "patience": "3", "restarts": "false", "unknown": "1"})
    assert (cfg.lr, cfg.max_epochs, cfg.restarts) == (0.002, 7, False)


@pytest.fixture(scope="module")
def tiny_cases():
    return [(i.data, m.data) for i, m in synth_tube_dataset(4, 16, 11)]


def _scripted_dsc(monkeypatch, values):
    it = iter(values)
    monkeypatch.setattr(tr, "validation_dsc", lambda *a, **k: next(it))


def test_patience_zero_stops_after_first_non_improving_epoch(monkeypatch, tiny_cases):
    _scripted_dsc(monkeypatch, [0.5, 0.6, 0.6, 0.9])
    model = build(ModelConfig(version="V3", **TINY), 0)
    res = tr.train(model, tiny_cases[:2], tiny_cases[2:], tr.TrainConfig(max_epochs=4, patience=0))
    assert [e.val_dsc for e in res.log] == [0.5, 0.6, 0.6]
    assert res.stopped_early and (res.best_epoch, res.best_dsc) == (1, 0.6)


def test_best_checkpoint_is_restored(monkeypatch, tiny_cases):
    _scripted_dsc(monkeypatch, [0.2, 0.7, 0.4])
    model = build(ModelConfig(version="V3", **TINY), 0)
    hashes = []
    res = tr.train(model, tiny_cases[:2], tiny_cases[2:], tr.TrainConfig(max_epochs=3, patience=3),
                   on_epoch=lambda e: hashes.append(state_hash(model)))
    assert not res.stopped_early and res.best_epoch == 1
    assert state_hash(res.model) == hashes[1] != hashes[2]
    assert res.log_csv().splitlines()[0] == "epoch,lr,train_loss,val_dsc"


def test_train_rejects_empty_split(tiny_cases):
    with pytest.raises(ValueError):
        tr.train(build(ModelConfig(version="V3", **TINY), 0), tiny_cases, [], tr.TrainConfig())


def test_training_is_deterministic(tiny_cases):
    cfg = tr.TrainConfig(max_epochs=2, patience=2, seed=5)
    runs = []
    for _ in range(2):
        res = tr.train(build(ModelConfig(version="V2", **TINY), 3), tiny_cases[:3], tiny_cases[3:], cfg)
        runs.append((res.log_csv(), res.checkpoint_bytes()))
    assert runs[0] == runs[1]


def test_fold_assignment_partitions():
    folds = tr.fold_assignment(10, 5, seed=3)
    assert [len(f) for f in folds] == [2] * 5
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))
    assert all(np.array_equal(a, b) for a, b in zip(folds, tr.fold_assignment(10, 5, seed=3)))
    with pytest.raises(ValueError):
        tr.fold_assignment(3, 5)


def test_cross_validate_uses_each_case_once(monkeypatch, tiny_cases):
    seen = []

    def fake_train(model, train_cases, val_cases, cfg, cb=None):
        seen.append(len(val_cases))
        assert len(train_cases) + len(val_cases) == 4

    monkeypatch.setattr(tr, "train", fake_train)
    result = tr.cross_validate(tiny_cases, ModelConfig(version="V3", **TINY), tr.TrainConfig(folds=2))
    assert seen == [2, 2]
    ids = [row["case_id"] for rep in result.fold_reports for row in rep.rows]
    assert sorted(ids) == [f"case{i:03d}" for i in range(4)]


def test_cv_summary_arithmetic():
    means = [{"dsc": 0.6, "hd95": 2.0}, {"dsc": 0.8, "hd95": float("nan")}, {"dsc": 0.7, "hd95": 4.0}]
    summary = tr.CVResult([MetricsReport()] * 3, means).summary()
    assert summary["dsc"][0] == pytest.approx((0.6 + 0.8 + 0.7) / 3, abs=1e-15)
    assert summary["dsc"][1] == pytest.approx(np.std([0.6, 0.8, 0.7]), abs=1e-15)
    assert summary["hd95"] == (3.0, 1.0)


@pytest.mark.slow
def test_desk_model_improves_over_first_epochs():
    cases = [(i.data, m.data) for i, m in synth_tube_dataset(20, 32, 1234)]
    improving = 0
    for seed in range(5):
        cfg = tr.TrainConfig(max_epochs=5, patience=5, seed=seed)
        res = tr.train(build(desk_config("V2"), seed), cases[:15], cases[15:], cfg)
        dsc = [e.val_dsc for e in res.log]
        improving += all(b > a for a, b in zip(dsc, dsc[1:]))
    assert improving >= 4
