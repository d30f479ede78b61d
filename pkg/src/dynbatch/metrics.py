"""Dice and Hausdorff scoring over BraTS-style tumour regions.

Masks are boolean arrays on a 1 mm isotropic grid; distances are Euclidean
between voxel centres, taken over every voxel of each mask.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

from .data import LABEL_VALUES, DataError
from .numerics import ShapeError

HD95_PENALTY = 373.12866
REGIONS = ("ET", "WT", "TC")
METRICS_HEADER = ("patient_id", "region", "dice", "hd95", "penalty_applied")
MEAN_ROW_ID = "mean"


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True)
class RegionScore:
    dice: float
    hd95: float
    penalty_applied: bool


RegionReport = dict  # region name -> RegionScore, keys in REGIONS order


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask dims {list(a.shape)} != {list(b.shape)}")
    return a, b


def region_masks(labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(ET, TC, WT) masks: ET = {4}, TC = {1, 4}, WT = {1, 2, 4}."""
    labels = np.asarray(labels)
    bad = ~np.isin(labels, LABEL_VALUES)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"invalid label {labels[idx]!r} at voxel {idx}")
    et = labels == 4
    tc = et | (labels == 1)
    wt = tc | (labels == 2)
    return et, tc, wt


def dice(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    tp = np.count_nonzero(pred & truth)
    fp = np.count_nonzero(pred & ~truth)
    fn = np.count_nonzero(~pred & truth)
    denom = (tp + fp) + (tp + fn)
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def _points(mask: np.ndarray, name: str) -> np.ndarray:
    pts = np.argwhere(mask).astype(np.float64)
    if len(pts) == 0:
        raise EmptyMaskError(f"{name} mask is empty; apply the penalty rules first")
    return pts


def _nearest(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    d, _ = cKDTree(dst).query(src, k=1)
    return np.asarray(d, dtype=np.float64)


def directed_hd(x, y) -> float:
    """max over points of ``x`` of the distance to the nearest point of ``y``."""
    x, y = _pair(x, y)
    return float(_nearest(_points(x, "X"), _points(y, "Y")).max())


def hausdorff(x, y) -> float:
    return max(directed_hd(x, y), directed_hd(y, x))


def hd95(pred, truth) -> float:
    """95th percentile of both directed point-to-set distance lists pooled.

    Percentile uses linear interpolation between order statistics.
    """
    pred, truth = _pair(pred, truth)
    p, t = _points(pred, "pred"), _points(truth, "truth")
    pooled = np.concatenate([_nearest(p, t), _nearest(t, p)])
    return float(np.percentile(pooled, 95, method="linear"))


def score_region(pred, truth) -> RegionScore:
    pred, truth = _pair(pred, truth)
    has_pred, has_truth = pred.any(), truth.any()
    if not has_truth and not has_pred:
        return RegionScore(1.0, 0.0, True)
    if not (has_truth and has_pred):
        return RegionScore(0.0, HD95_PENALTY, True)
    return RegionScore(dice(pred, truth), hd95(pred, truth), False)


def evaluate_regions(pred_labels, truth_labels) -> RegionReport:
    pred_labels = np.asarray(pred_labels)
    truth_labels = np.asarray(truth_labels)
    if pred_labels.shape != truth_labels.shape:
        raise ShapeError(f"label dims {list(pred_labels.shape)} != {list(truth_labels.shape)}")
    p_et, p_tc, p_wt = region_masks(pred_labels)
    t_et, t_tc, t_wt = region_masks(truth_labels)
    return {
        "ET": score_region(p_et, t_et),
        "WT": score_region(p_wt, t_wt),
        "TC": score_region(p_tc, t_tc),
    }


def mean_dice(report: RegionReport) -> float:
    return sum(report[r].dice for r in REGIONS) / len(REGIONS)


# --------------------------------------------------------------------------
# CSV


def fmt_float(x: float) -> str:
    if x == HD95_PENALTY:
        return "373.12866"
    return f"{x:.6g}"


def write_metrics_csv(path, reports: Iterable[tuple[str, RegionReport]]) -> None:
    """One row per patient and region plus a trailing ``mean`` row."""
    rows = sorted(reports, key=lambda r: r[0])
    dices, hds = [], []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for pid, report in rows:
            for region in REGIONS:
                s = report[region]
                dices.append(s.dice)
                hds.append(s.hd95)
                w.writerow([pid, region, fmt_float(s.dice), fmt_float(s.hd95), str(s.penalty_applied).lower()])
        n_pen = sum(report[r].penalty_applied for _, report in rows for r in REGIONS)
        mean_d = float(np.mean(dices)) if dices else 0.0
        mean_h = float(np.mean(hds)) if hds else 0.0
        w.writerow([MEAN_ROW_ID, "ALL", fmt_float(mean_d), fmt_float(mean_h), str(n_pen > 0).lower()])


def read_metrics_csv(path) -> dict[str, dict[str, RegionScore]]:
    """Per-patient region scores; the ``mean`` row is skipped."""
    out: dict[str, dict[str, RegionScore]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(METRICS_HEADER)}")
        for row in reader:
            if row["patient_id"] == MEAN_ROW_ID:
                continue
            if row["region"] not in REGIONS:
                raise ValueError(f"{path}: unknown region {row['region']!r}")
            out.setdefault(row["patient_id"], {})[row["region"]] = RegionScore(
                float(row["dice"]), float(row["hd95"]), row["penalty_applied"] == "true"
            )
    for pid, regs in out.items():
        missing = set(REGIONS) - set(regs)
        if missing:
            raise ValueError(f"{path}: patient {pid} lacks regions {sorted(missing)}")
    return out
