"""Segmentation evaluation: Dice overlap, Hausdorff distance in mm, fat volume.

Hausdorff is the classical symmetric max over all foreground voxel centers
(not surface-only, not a percentile). Distances are Euclidean in physical
space, i.e. voxel index scaled per-axis by spacing. The KD-tree nearest
neighbor queries reproduce an all-pairs brute force bit for bit, which the
tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMaskError
from .volumes import LabelMask, voxel_volume_mm3

__all__ = [
    "EvalResult",
    "dice_score",
    "hausdorff_mm",
    "patv_cm3",
    "evaluate_pair",
    "write_eval_csv",
    "read_eval_csv",
]

EVAL_CSV_HEADER = "case_id,dice,hausdorff_mm,patv_pred_cm3,patv_true_cm3"


@dataclass(frozen=True)
class EvalResult:
    dice: float
    hausdorff_mm: float
    patv_pred_cm3: float
    patv_true_cm3: float

    def __post_init__(self):
        if not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice out of range: {self.dice}")
        if self.hausdorff_mm < 0:
            raise ValueError(f"negative Hausdorff: {self.hausdorff_mm}")


def _require_aligned(a: LabelMask, b: LabelMask):
    if not a.aligned_with(b):
        raise ValueError(
            f"masks are not aligned: {a.dims}@{a.spacing} vs {b.dims}@{b.spacing}"
        )


def dice_score(a: LabelMask, b: LabelMask) -> float:
    """2|a∩b| / (|a|+|b|); two empty masks agree perfectly (1.0)."""
    _require_aligned(a, b)
    na = a.foreground_count
    nb = b.foreground_count
    if na == 0 and nb == 0:
        return 1.0
    inter = int(np.logical_and(a.data, b.data).sum())
    return 2 * inter / (na + nb)


def _physical_points(mask: LabelMask, spacing) -> np.ndarray:
    idx = np.argwhere(mask.data != 0)
    return idx.astype(np.float64) * np.asarray(spacing, dtype=np.float64)


def hausdorff_mm(a: LabelMask, b: LabelMask, spacing=None) -> float:
    """Symmetric Hausdorff distance between foreground voxel centers, in mm."""
    _require_aligned(a, b)
    if spacing is None:
        spacing = a.spacing
    if a.foreground_count == 0 or b.foreground_count == 0:
        raise EmptyMaskError("undefined Hausdorff: one of the masks is empty")
    pa = _physical_points(a, spacing)
    pb = _physical_points(b, spacing)
    forward = cKDTree(pb).query(pa, k=1)[0].max()
    backward = cKDTree(pa).query(pb, k=1)[0].max()
    return float(max(forward, backward))


def patv_cm3(mask: LabelMask, spacing=None) -> float:
    """Fat volume in cm³: foreground count times voxel volume over 1000."""
    if spacing is None:
        spacing = mask.spacing
    return mask.foreground_count * voxel_volume_mm3(spacing) / 1000.0


def evaluate_pair(pred: LabelMask, truth: LabelMask) -> EvalResult:
    """All per-case metrics for one predicted/reference mask pair.

    When exactly one mask is empty the Hausdorff distance is undefined and
    the result carries nan there, so a collapsed segmentation still yields
    a scored row instead of aborting a batch evaluation. Two empty masks
    agree perfectly (distance 0).
    """
    _require_aligned(pred, truth)
    if pred.foreground_count == 0 and truth.foreground_count == 0:
        hd = 0.0
    elif pred.foreground_count == 0 or truth.foreground_count == 0:
        hd = float("nan")
    else:
        hd = hausdorff_mm(pred, truth)
    return EvalResult(
        dice=dice_score(pred, truth),
        hausdorff_mm=hd,
        patv_pred_cm3=patv_cm3(pred),
        patv_true_cm3=patv_cm3(truth),
    )


def write_eval_csv(rows, path) -> None:
    """One CSV row per case. Floats use repr, so output is byte-stable."""
    lines = [EVAL_CSV_HEADER]
    for case_id, res in rows:
        lines.append(
            f"{case_id},{res.dice!r},{res.hausdorff_mm!r},"
            f"{res.patv_pred_cm3!r},{res.patv_true_cm3!r}"
        )
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_eval_csv(path) -> list[tuple[str, EvalResult]]:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != EVAL_CSV_HEADER:
        raise ValueError(f"{path}: unexpected evaluation CSV header")
    out = []
    for ln in lines[1:]:
        case_id, *nums = ln.split(",")
        dice, hd, pp, pt = (float(x) for x in nums)
        out.append((case_id, EvalResult(dice, hd, pp, pt)))
    return out
