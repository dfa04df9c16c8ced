"""Training-time augmentation for volume/mask pairs.

Five transforms, each drawn independently with probability ``p_each`` and
applied in a fixed order: rotation, crop, flip, blur, Rayleigh noise.
Geometry (rotation, crop, flip) moves the volume and mask together, with
nearest-neighbor resampling for the mask so it stays binary. Intensity
changes (blur, additive Rayleigh noise) touch the volume only. Output
dimensions always equal input dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volumes import ImageVolume, LabelMask

__all__ = [
    "AugmentPolicy",
    "augment_pair",
    "rotate_pair",
    "crop_resize_pair",
    "flip_pair",
    "blur_volume",
    "rayleigh_noise",
]


@dataclass(frozen=True)
class AugmentPolicy:
    """Per-transform probability and magnitudes. Each transform fires
    independently with probability p_each, so at the default most samples
    pass through with at most one light perturbation."""

    p_each: float = 0.1
    rotation_max_deg: float = 15.0
    crop_fraction: float = 0.9
    blur_sigma_mm: float = 1.5
    rayleigh_scale: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_each <= 1.0:
            raise ValueError(f"p_each must be in [0, 1], got {self.p_each}")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ValueError(f"crop_fraction must be in (0, 1], got {self.crop_fraction}")
        if self.rotation_max_deg < 0:
            raise ValueError("rotation_max_deg must be non-negative")
        if self.blur_sigma_mm < 0:
            raise ValueError("blur_sigma_mm must be non-negative")
        if self.rayleigh_scale < 0:
            raise ValueError("rayleigh_scale must be non-negative")


def rotate_pair(vol: np.ndarray, mask: np.ndarray, angle_deg: float):
    """In-plane rotation about the slice axis; zero fill outside the frame.

    Slices are far thicker than the in-plane pixels, so out-of-plane
    rotations would shear anatomy across slices and are not offered.
    """
    v = ndimage.rotate(vol, angle_deg, axes=(0, 1), reshape=False,
                       order=1, mode="constant", cval=0.0)
    m = ndimage.rotate(mask, angle_deg, axes=(0, 1), reshape=False,
                       order=0, mode="constant", cval=0)
    return v, m


def crop_resize_pair(vol: np.ndarray, mask: np.ndarray, lo, size):
    """Take the sub-box at ``lo`` of extent ``size``, stretch it back out."""
    coords = np.meshgrid(
        *[np.linspace(l, l + s - 1, n) for l, s, n in zip(lo, size, vol.shape)],
        indexing="ij",
    )
    coords = np.stack(coords)
    v = ndimage.map_coordinates(vol, coords, order=1, mode="nearest")
    m = ndimage.map_coordinates(mask, coords, order=0, mode="nearest")
    return v, m


def flip_pair(vol: np.ndarray, mask: np.ndarray, axis: int):
    return np.flip(vol, axis=axis).copy(), np.flip(mask, axis=axis).copy()


def blur_volume(vol: np.ndarray, sigma_mm: float, spacing) -> np.ndarray:
    sigma_vox = [sigma_mm / s for s in spacing]
    return ndimage.gaussian_filter(vol, sigma=sigma_vox)


def rayleigh_noise(vol: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Rayleigh noise; ``scale`` is a fraction of the intensity range."""
    span = float(vol.max() - vol.min())
    noise = rng.rayleigh(scale=scale * span, size=vol.shape)
    return (vol + noise).astype(vol.dtype)


def augment_pair(
    volume: ImageVolume,
    mask: LabelMask,
    policy: AugmentPolicy,
    rng: np.random.Generator,
) -> tuple[ImageVolume, LabelMask]:
    """Apply the stochastic transform stack to one training pair.

    Draws are consumed from ``rng`` in a fixed order, so replaying with an
    identically seeded generator reproduces the outputs bit for bit.
    """
    if not volume.aligned_with(mask):
        raise ValueError("volume and mask must share dims and spacing")
    v = np.asarray(volume.data, dtype=volume.data.dtype)
    m = np.asarray(mask.data)

    if rng.random() < policy.p_each:
        angle = float(rng.uniform(-policy.rotation_max_deg, policy.rotation_max_deg))
        v, m = rotate_pair(v, m, angle)
    if rng.random() < policy.p_each:
        size = [max(1, round(policy.crop_fraction * n)) for n in v.shape]
        lo = [int(rng.integers(0, n - s + 1)) for n, s in zip(v.shape, size)]
        v, m = crop_resize_pair(v, m, lo, size)
    if rng.random() < policy.p_each:
        axis = int(rng.integers(0, 2))  # in-plane flips only
        v, m = flip_pair(v, m, axis)
    if rng.random() < policy.p_each:
        v = blur_volume(v, policy.blur_sigma_mm, volume.spacing)
    if rng.random() < policy.p_each:
        v = rayleigh_noise(v, policy.rayleigh_scale, rng)

    return ImageVolume(v, volume.spacing), LabelMask(m, mask.spacing)
