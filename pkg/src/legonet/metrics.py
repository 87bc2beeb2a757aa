"""Overlap and surface-distance metrics, rater agreement and CSV reports.

Masks are boolean-like numpy arrays. HD95 works in physical units given the
voxel spacing.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree


class EmptyMaskError(ValueError):
    pass


def _as_bool(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "data", mask)) > 0.5


def dsc_precision_recall(pred, target) -> tuple[float, float, float]:
    """DSC, precision and recall of binary masks.

    Both empty: (1, 1, 1). Any undefined ratio otherwise counts as 0.
    """
    p, t = _as_bool(pred), _as_bool(target)
    if p.shape != t.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    dsc = 2 * tp / (2 * tp + fp + fn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return dsc, precision, recall


def dice_coefficient(pred, target) -> float:
    return dsc_precision_recall(pred, target)[0]


_FACE = ndimage.generate_binary_structure(3, 1)


def border_voxels(mask) -> np.ndarray:
    """Foreground voxels with at least one background face neighbour (outside counts as background)."""
    m = _as_bool(mask)
    return m & ~ndimage.binary_erosion(m, structure=_FACE, border_value=0)


def surface_distances(a, b, spacing=(1.0, 1.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Directed border-to-border distances ``a -> b`` and ``b -> a`` in physical units."""
    ma, mb = _as_bool(a), _as_bool(b)
    if not ma.any():
        raise EmptyMaskError("first mask (a) is empty")
    if not mb.any():
        raise EmptyMaskError("second mask (b) is empty")
    sp = np.asarray(spacing, dtype=np.float64)
    pa = np.argwhere(border_voxels(ma)) * sp
    pb = np.argwhere(border_voxels(mb)) * sp
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    return d_ab, d_ba


def hd95(a, b, spacing=(1.0, 1.0, 1.0), mode: str = "combined") -> float:
    """95th-percentile Hausdorff distance.

    ``mode="combined"`` takes the percentile of both directed distance sets
    pooled together; ``mode="max"`` takes the larger of the two directed
    percentiles.
    """
    d_ab, d_ba = surface_distances(a, b, spacing)
    if mode == "combined":
        return float(np.percentile(np.concatenate([d_ab, d_ba]), 95))
    if mode == "max":
        return float(max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)))
    raise ValueError(f"unknown hd95 mode {mode!r}")


def hausdorff(a, b, spacing=(1.0, 1.0, 1.0)) -> float:
    d_ab, d_ba = surface_distances(a, b, spacing)
    return float(max(d_ab.max(), d_ba.max()))


def case_metrics(pred, target, spacing=(1.0, 1.0, 1.0), hd_mode: str = "combined") -> dict:
    dsc, precision, recall = dsc_precision_recall(pred, target)
    try:
        hd = hd95(pred, target, spacing, hd_mode)
    except EmptyMaskError:
        hd = math.nan
    return {"dsc": dsc, "precision": precision, "recall": recall, "hd95": hd}


# ---------------------------------------------------------------------------
# agreement
# ---------------------------------------------------------------------------

@dataclass
class Agreement:
    mean: float
    std: float
    n_cases: int


def agreement_matrix(mask_sets: dict[str, dict[str, np.ndarray]]) -> dict[tuple[str, str], Agreement]:
    """Mean and std of DSC over shared cases for every unordered rater pair.

    Both orientations of a pair are returned (the table is symmetric); self
    pairs are not.
    """
    table = {}
    for r1, r2 in itertools.combinations(mask_sets, 2):
        shared = sorted(set(mask_sets[r1]) & set(mask_sets[r2]))
        if not shared:
            raise ValueError(f"raters {r1!r} and {r2!r} share no cases")
        scores = np.array([dice_coefficient(mask_sets[r1][c], mask_sets[r2][c]) for c in shared])
        agg = Agreement(float(scores.mean()), float(scores.std()), len(shared))
        table[(r1, r2)] = agg
        table[(r2, r1)] = agg
    return table


def format_agreement(table: dict[tuple[str, str], Agreement], raters: list[str]) -> str:
    width = max(10, *(len(r) + 2 for r in raters))
    lines = [" " * width + "".join(f"{r:>{width}}" for r in raters)]
    for r1 in raters:
        cells = []
        for r2 in raters:
            cells.append(f"{'-':>{width}}" if r1 == r2 else f"{table[(r1, r2)].mean:>{width}.4f}")
        lines.append(f"{r1:<{width}}" + "".join(cells))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

METRIC_KEYS = ("dsc", "precision", "recall", "hd95")


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, case_id: str, metrics: dict) -> None:
        self.rows.append({"case_id": case_id, **{k: float(metrics[k]) for k in METRIC_KEYS}})

    def aggregate(self) -> dict[str, tuple[float, float]]:
        out = {}
        for k in METRIC_KEYS:
            vals = np.array([r[k] for r in self.rows], dtype=float)
            vals = vals[~np.isnan(vals)]
            out[k] = (float(vals.mean()), float(vals.std())) if vals.size else (math.nan, math.nan)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case_id", "dsc", "precision", "recall", "hd95_mm"])
            for r in self.rows:
                w.writerow([r["case_id"]] + [repr(r[k]) for k in METRIC_KEYS])
            agg = self.aggregate()
            w.writerow(["mean"] + [repr(agg[k][0]) for k in METRIC_KEYS])
            w.writerow(["std"] + [repr(agg[k][1]) for k in METRIC_KEYS])

    @classmethod
    def from_csv(cls, path) -> "MetricsReport":
        report = cls()
        with open(Path(path), newline="") as fh:
            for row in csv.DictReader(fh):
                if row["case_id"] in ("mean", "std"):
                    continue
                report.rows.append({
                    "case_id": row["case_id"], "dsc": float(row["dsc"]), "precision": float(row["precision"]),
                    "recall": float(row["recall"]), "hd95": float(row["hd95_mm"]),
                })
        return report
