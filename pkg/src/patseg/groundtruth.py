"""Candidate fat-mask generation: heart-region cropping plus Otsu thresholding.

The semi-automatic labeling flow crops the image to a box around the heart
chambers, splits the in-box intensities into two classes with Otsu's method,
and keeps the bright class outside the chambers as the fat candidate. Manual
cleanup of that candidate is out of scope here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, EmptyMaskError
from .volumes import ImageVolume, LabelMask

__all__ = ["BoxRegion", "OtsuResult", "bounding_box", "otsu_threshold", "candidate_pat_mask"]


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned voxel box: ``lo`` inclusive, ``hi`` exclusive."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        if any(l >= h for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box lo={self.lo} hi={self.hi}")
        if any(l < 0 for l in self.lo):
            raise ValueError(f"box extends below zero: lo={self.lo}")

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))


@dataclass(frozen=True)
class OtsuResult:
    threshold: float
    between_class_variance: float
    class_means: tuple[float, float]


def bounding_box(chamber_mask: LabelMask, margin_mm: float = 10.0) -> BoxRegion:
    """Tight box around the mask foreground, grown by a physical margin.

    The margin is converted to whole voxels per axis with ceil(margin / spacing)
    and the result is clamped to the volume bounds.
    """
    if margin_mm < 0:
        raise ValueError(f"margin_mm must be non-negative, got {margin_mm}")
    idx = np.nonzero(chamber_mask.data)
    if idx[0].size == 0:
        raise EmptyMaskError("no heart found: chamber mask has no foreground")
    lo, hi = [], []
    for axis in range(3):
        pad = math.ceil(margin_mm / chamber_mask.spacing[axis])
        lo.append(max(int(idx[axis].min()) - pad, 0))
        hi.append(min(int(idx[axis].max()) + 1 + pad, chamber_mask.dims[axis]))
    return BoxRegion(lo=tuple(lo), hi=tuple(hi))


def otsu_threshold(intensities, bins: int = 256) -> OtsuResult:
    """Two-class Otsu split of an intensity sample.

    Builds an equal-width histogram over [min, max] and returns the interior
    bin edge maximizing the between-class variance p0*(1-p0)*(mu0-mu1)^2,
    with ties broken toward the lowest edge. Class means are histogram means
    (bin centers weighted by counts).
    """
    values = np.asarray(intensities, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot threshold an empty intensity sample")
    if not np.isfinite(values).all():
        raise ValueError("intensity sample contains non-finite values")
    if values.min() == values.max():
        raise DegenerateInputError("constant intensities admit no two-class split")
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")

    counts, edges = np.histogram(values, bins=bins)
    centers = (edges[:-1] + edges[1:]) / 2
    n = values.size
    c0 = np.cumsum(counts)
    s0 = np.cumsum(counts * centers)
    total = s0[-1]

    best_i = -1
    best_sigma = -1.0
    best_means = (0.0, 0.0)
    for i in range(bins - 1):  # interior edges only
        if c0[i] == 0 or c0[i] == n:
            continue
        m0 = s0[i] / c0[i]
        m1 = (total - s0[i]) / (n - c0[i])
        p0 = c0[i] / n
        sigma = p0 * (1 - p0) * (m0 - m1) ** 2
        if sigma > best_sigma:
            best_sigma = sigma
            best_i = i
            best_means = (m0, m1)
    if best_i < 0:
        # every sample fell in one bin despite distinct values (extreme outlier)
        raise DegenerateInputError("histogram places all samples in a single bin")
    return OtsuResult(
        threshold=float(edges[best_i + 1]),
        between_class_variance=float(best_sigma),
        class_means=(float(best_means[0]), float(best_means[1])),
    )


def candidate_pat_mask(
    volume: ImageVolume,
    chamber_mask: LabelMask,
    margin_mm: float = 10.0,
    bins: int = 256,
) -> LabelMask:
    """Fat candidate: bright Otsu class inside the heart box, chambers removed.

    Fat is hyperintense on these images, so the high-mean class is kept.
    The returned mask is zero everywhere outside the box and never overlaps
    the chamber mask.
    """
    if not volume.aligned_with(chamber_mask):
        raise ValueError("volume and chamber mask must share dims and spacing")
    box = bounding_box(chamber_mask, margin_mm)
    sub = volume.data[box.slices]
    result = otsu_threshold(sub, bins=bins)
    out = np.zeros(volume.dims, dtype=np.uint8)
    inside = (sub >= result.threshold) & (chamber_mask.data[box.slices] == 0)
    out[box.slices] = inside.astype(np.uint8)
    return LabelMask(data=out, spacing=volume.spacing)
