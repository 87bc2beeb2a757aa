import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from legonet.losses import LossConfig, combined_loss, dice_loss, focal_loss
from legonet.metrics import (
    EmptyMaskError,
    MetricsReport,
    agreement_matrix,
    border_voxels,
    dsc_precision_recall,
    hausdorff,
    hd95,
)
from legonet.tensor import ShapeError, Tensor, grad_check, sigmoid


def test_dice_loss_worked_example():
    loss = dice_loss(Tensor([0.5, 0.5, 1.0, 0.0]), Tensor([1.0, 0.0, 1.0, 0.0]), smooth=0.0)
    assert loss.item() == 1 / 7


def test_dice_loss_limits(rng):
    y = (rng.random(50) > 0.6).astype(float)
    assert dice_loss(Tensor(y), Tensor(y), smooth=0.0).item() == pytest.approx(0.0, abs=1e-15)
    assert dice_loss(Tensor(np.zeros(50)), Tensor(y), smooth=0.0).item() == 1.0


@pytest.mark.parametrize("y,p", [(1.0, 0.5), (0.0, 0.5)])
def test_focal_single_voxel(y, p):
    assert focal_loss(Tensor([p]), Tensor([y])).item() == pytest.approx(0.25 * math.log(2), abs=1e-12)


def test_focal_perfect_prediction_is_near_zero():
    y = np.array([1.0, 0.0, 1.0])
    assert 0 <= focal_loss(Tensor(y), Tensor(y)).item() < 1e-12


def test_focal_weighting():
    cfg = LossConfig(epsilon=3.0, psi=1.0)
    loss = focal_loss(Tensor([0.2]), Tensor([1.0]), cfg).item()
    assert loss == pytest.approx(-3.0 * 0.8 * math.log(0.2), rel=1e-14)


def test_combined_is_sum_of_parts(rng):
    logits = Tensor(rng.normal(size=(2, 1, 3, 3, 3)) * 2)
    y = (rng.random(logits.shape) > 0.5).astype(float)
    p = sigmoid(logits)
    assert combined_loss(logits, y).item() == dice_loss(p, y).item() + focal_loss(p, y).item()


def test_combined_loss_gradcheck(rng):
    logits = Tensor(rng.normal(size=(1, 1, 3, 3, 2)))
    y = (rng.random(logits.shape) > 0.5).astype(float)
    assert grad_check(lambda t: combined_loss(t, y), logits) < 1e-4


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        dice_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):
        focal_loss(Tensor(np.zeros(3)), Tensor(np.zeros((3, 1))))


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(psi=-1)
    with pytest.raises(ValueError):
        LossConfig(smooth=0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_loss_properties(seed):
    r = np.random.default_rng(seed)
    p = r.random(30)
    y = (r.random(30) > 0.5).astype(float)
    perm = r.permutation(30)
    d = dice_loss(Tensor(p), Tensor(y)).item()
    f = focal_loss(Tensor(p), Tensor(y)).item()
    assert 0.0 <= d <= 1.0 and f >= 0.0
    assert dice_loss(Tensor(p[perm]), Tensor(y[perm])).item() == pytest.approx(d, rel=1e-12)
    assert focal_loss(Tensor(p[perm]), Tensor(y[perm])).item() == pytest.approx(f, rel=1e-12)
    b = (r.random(30) > 0.5).astype(float)
    assert dice_loss(Tensor(b), Tensor(y)).item() == pytest.approx(dice_loss(Tensor(y), Tensor(b)).item(), abs=1e-15)
    if b.any() or y.any():
        dsc = dsc_precision_recall(b, y)[0]
        assert dsc == pytest.approx(1 - dice_loss(Tensor(b), Tensor(y), smooth=1e-300).item(), abs=1e-12)
    assert combined_loss(Tensor(r.normal(size=30)), y).item() >= 0


def test_dsc_precision_recall_examples():
    t = np.zeros(8)
    t[:4] = 1
    pred = np.zeros(8)
    pred[:2] = 1
    assert dsc_precision_recall(t, t) == (1.0, 1.0, 1.0)
    dsc, prec, rec = dsc_precision_recall(pred, t)
    assert (dsc, prec, rec) == (2 / 3, 1.0, 0.5)
    assert dsc_precision_recall(1 - t, t) == (0.0, 0.0, 0.0)
    assert dsc_precision_recall(np.zeros(8), np.zeros(8)) == (1.0, 1.0, 1.0)
    assert dsc_precision_recall(np.zeros(8), t) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        dsc_precision_recall(np.zeros(3), np.zeros(4))


def brute_border(mask):
    m = mask.astype(bool)
    out = np.zeros_like(m)
    for idx in zip(*np.nonzero(m)):
        for ax in range(3):
            for step in (-1, 1):
                j = list(idx)
                j[ax] += step
                if not 0 <= j[ax] < m.shape[ax] or not m[tuple(j)]:
                    out[idx] = True
    return out


def brute_hd95(a, b, spacing):
    sp = np.asarray(spacing, dtype=float)
    pa = np.argwhere(brute_border(a)) * sp
    pb = np.argwhere(brute_border(b)) * sp
    dist = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return float(np.percentile(np.concatenate([dist.min(1), dist.min(0)]), 95))


def random_mask(r, shape):
    m = ndimage.binary_dilation(r.random(shape) > 0.93, iterations=int(r.integers(0, 2)))
    if not m.any():
        m[tuple(r.integers(0, n) for n in shape)] = True
    return m


def test_hd95_matches_all_pairs_oracle_exactly():
    r = np.random.default_rng(2024)
    for i in range(50):
        shape = tuple(int(n) for n in r.integers(4, 17, size=3))
        spacing = (1.0, 1.0, 1.0) if i % 2 == 0 else (0.5, 1.0, 2.0)
        a, b = random_mask(r, shape), random_mask(r, shape)
        assert hd95(a, b, spacing) == brute_hd95(a, b, spacing)


def test_border_voxels_match_brute_force(rng):
    m = random_mask(rng, (7, 8, 9))
    np.testing.assert_array_equal(border_voxels(m), brute_border(m))


def test_hd95_examples():
    a = np.zeros((8, 8, 8))
    a[2:5, 2:5, 2:5] = 1
    assert hd95(a, a) == 0.0
    p, q = np.zeros((5, 5, 5)), np.zeros((5, 5, 5))
    p[1, 1, 1] = 1
    q[4, 1, 1] = 1
    assert hd95(p, q) == 3.0
    assert hd95(p, q, (2.0, 1.0, 1.0)) == 6.0
    with pytest.raises(EmptyMaskError, match="first"):
        hd95(np.zeros((3, 3, 3)), q[:3, :3, :3] + 1)
    with pytest.raises(EmptyMaskError, match="second"):
        hd95(p, np.zeros((5, 5, 5)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_hd95_symmetric_and_bounded(seed):
    r = np.random.default_rng(seed)
    a, b = random_mask(r, (6, 7, 5)), random_mask(r, (6, 7, 5))
    assert hd95(a, b) == hd95(b, a)
    assert 0.0 <= hd95(a, b) <= hausdorff(a, b)
    assert hd95(a, b, mode="max") <= hausdorff(a, b)


def test_agreement_matrix_hand_computed():
    m1 = np.zeros(4)
    m1[:2] = 1
    m2 = np.zeros(4)
    m2[1:3] = 1
    m3 = np.ones(4)
    sets = {"A": {"c1": m1, "c2": m1}, "B": {"c1": m2, "c2": m1}, "C": {"c1": m3, "c2": m3}}
    table = agreement_matrix(sets)
    assert table[("A", "B")].mean == pytest.approx((0.5 + 1.0) / 2)
    assert table[("A", "C")].mean == pytest.approx(2 * 2 / 6)
    assert table[("B", "C")].mean == pytest.approx(2 * 2 / 6)
    assert table[("A", "B")] == table[("B", "A")]
    assert ("A", "A") not in table
    same = agreement_matrix({"x": {"c": m1}, "y": {"c": m1.copy()}})
    assert same[("x", "y")].mean == 1.0
    with pytest.raises(ValueError):
        agreement_matrix({"x": {"c1": m1}, "y": {"c2": m1}})


def test_metrics_report_csv_roundtrip(tmp_path):
    rep = MetricsReport()
    rep.add("a", {"dsc": 0.5, "precision": 1.0, "recall": 1 / 3, "hd95": 2.0})
    rep.add("b", {"dsc": 1.0, "precision": 1.0, "recall": 1.0, "hd95": 0.0})
    rep.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "case_id,dsc,precision,recall,hd95_mm"
    assert lines[-2].startswith("mean,0.75,")
    back = MetricsReport.from_csv(tmp_path / "m.csv")
    assert back.rows == rep.rows
    assert rep.aggregate()["dsc"] == (0.75, 0.25)
