"""Per-slice PNG rendering of segmentation contours over the image.

Each axial slice becomes one PNG: the volume in grayscale, the reference
mask outlined in red, the predicted mask in green. Where the two
contours coincide the additive channels read yellow, which makes
agreement visible at a glance.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .volumes import ImageVolume, LabelMask

__all__ = ["render_overlay"]

TRUTH_RGB = (255, 0, 0)
PREDICTION_RGB = (0, 255, 0)
BOTH_RGB = (255, 255, 0)


def _boundary_2d(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbor outside the mask."""
    m = mask.astype(bool)
    eroded = m.copy()
    eroded[1:, :] &= m[:-1, :]
    eroded[:-1, :] &= m[1:, :]
    eroded[:, 1:] &= m[:, :-1]
    eroded[:, :-1] &= m[:, 1:]
    # border pixels of the array count as boundary too
    eroded[0, :] = False
    eroded[-1, :] = False
    eroded[:, 0] = False
    eroded[:, -1] = False
    return m & ~eroded


def render_overlay(
    volume: ImageVolume,
    truth: LabelMask | None = None,
    prediction: LabelMask | None = None,
    out_dir=None,
    prefix: str = "slice",
    scale: int = 4,
) -> list[Path]:
    """Write one contour-overlay PNG per axial slice; returns the paths."""
    if truth is None and prediction is None:
        raise ValueError("need at least one mask to overlay")
    for mask, which in ((truth, "truth"), (prediction, "prediction")):
        if mask is not None and not mask.aligned_with(volume):
            raise ValueError(f"{which} mask does not align with the volume")
    if out_dir is None:
        raise ValueError("out_dir is required")
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    data = volume.data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    span = hi - lo if hi > lo else 1.0
    gray = np.clip((data - lo) / span * 255.0, 0, 255).astype(np.uint8)

    paths = []
    nz = volume.data.shape[2]
    for z in range(nz):
        rgb = np.stack([gray[:, :, z]] * 3, axis=-1)
        tb = _boundary_2d(truth.data[:, :, z]) if truth is not None else None
        pb = (_boundary_2d(prediction.data[:, :, z])
              if prediction is not None else None)
        if tb is not None:
            rgb[tb] = TRUTH_RGB
        if pb is not None:
            rgb[pb] = PREDICTION_RGB
        if tb is not None and pb is not None:
            rgb[tb & pb] = BOTH_RGB
        if scale > 1:
            rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
        # PNGs come out row-major; transpose so x runs left-right
        img = Image.fromarray(np.transpose(rgb, (1, 0, 2)), mode="RGB")
        path = out_dir / f"{prefix}_{z:03d}.png"
        img.save(path)
        paths.append(path)
    return paths
