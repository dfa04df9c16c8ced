"""Synthetic axial cardiac stacks with exact ground truth, plus cohorts.

A phantom case is a dim background, a heart ellipsoid whose interior is
split into 2 to 4 dark chambers by thin myocardium-bright septa, bright
fat selected as angular arc patches on a shell hugging the heart
(several non-contiguous patches of varying shape), a bright frame at the
body edge standing in for subcutaneous fat, an optional pericardial
fluid patch whose intensity sits within 10% of fat, and additive
Gaussian noise. Fat voxels are chosen by exact count, so the rendered
fat volume tracks the requested fraction tightly.

Fat placement prefers shell voxels inside the chamber bounding box grown
by 10 mm, the region the semi-automatic labeling flow crops to, and
spills beyond it only when the requested fraction exhausts that region.

Cohorts pair each phantom's measured fat volume with demographics and
outcomes drawn from an explicit generative model (the coefficients of
which are saved next to the data), so downstream regression can be
checked against known truth.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .groundtruth import bounding_box
from .metrics import patv_cm3
from .stats import PatientRecord, write_records_csv
from .volumes import ImageVolume, LabelMask, save_mask, save_volume, voxel_volume_mm3

__all__ = ["PhantomSpec", "CohortEffects", "generate_case", "generate_cohort"]

SHELL_THICK_XY = 6  # voxels of fat shell in plane
SHELL_THICK_Z = 2
CROP_MARGIN_MM = 10.0  # matches the labeling flow's default crop margin
FRAME_THICK = 2  # in-plane width of the bright body-edge frame
FRAME_KEEPOUT_MM = 12.0  # frame never intrudes on the crop region


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 32)
    spacing: tuple[float, float, float] = (1.4, 1.4, 6.0)
    fat_fraction: float = 0.35
    fluid_present: bool = False
    noise_sigma: float = 0.02
    level_background: float = 0.1
    level_chamber: float = 0.3
    level_myocardium: float = 0.4
    level_fat: float = 0.9
    level_fluid: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fat_fraction <= 0.8:
            raise ValueError(
                f"infeasible fat_fraction {self.fat_fraction}: must be in [0, 0.8]"
            )
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if any(d < 24 for d in self.dims):
            raise ValueError(f"dims {self.dims} too small to hold the geometry")
        levels = self.levels
        if len(set(levels)) != len(levels):
            raise ValueError(f"intensity levels must be distinct, got {levels}")
        if self.fluid_present:
            rel = abs(self.level_fat - self.level_fluid) / abs(self.level_fat)
            if rel > 0.10:
                raise ValueError(
                    "fluid level must sit within 10% of the fat level to act "
                    f"as a confounder; got {rel:.0%}"
                )

    @property
    def levels(self) -> tuple[float, float, float, float, float]:
        return (
            self.level_background,
            self.level_chamber,
            self.level_myocardium,
            self.level_fat,
            self.level_fluid,
        )


def _ellipsoid(grids, center, radii) -> np.ndarray:
    return sum(
        ((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii)
    ) <= 1.0


def _septa(labels: np.ndarray) -> np.ndarray:
    """Voxels on a face between two differently labeled interior cells."""
    out = np.zeros(labels.shape, dtype=bool)
    for axis in range(3):
        a = labels[tuple(slice(0, -1) if i == axis else slice(None)
                         for i in range(3))]
        b = labels[tuple(slice(1, None) if i == axis else slice(None)
                         for i in range(3))]
        edge = (a != b) & (a >= 0) & (b >= 0)
        lo = tuple(slice(0, -1) if i == axis else slice(None) for i in range(3))
        hi = tuple(slice(1, None) if i == axis else slice(None) for i in range(3))
        out[lo] |= edge
        out[hi] |= edge
    return out


class _Geometry:
    """Sampled anatomy for one case: heart, chambers, and the fat shell
    ordered by selection preference."""

    def __init__(self, rng: np.random.Generator, dims, spacing):
        nx, ny, nz = dims
        grids = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims),
                            indexing="ij", sparse=True)
        center = (
            nx / 2 + rng.uniform(-1, 1),
            ny / 2 + rng.uniform(-1, 1),
            nz / 2 + rng.uniform(-1, 1),
        )
        rxy = min(nx, ny)
        radii = (
            rng.uniform(0.20, 0.26) * rxy,
            rng.uniform(0.20, 0.26) * rxy,
            rng.uniform(0.30, 0.40) * nz,
        )
        self.heart = _ellipsoid(grids, center, radii)

        # chambers fill the heart up to a thin wall, separated by septa
        wall = rng.uniform(2.0, 3.0)
        interior = _ellipsoid(
            grids, center,
            (max(radii[0] - wall, 1.5), max(radii[1] - wall, 1.5),
             max(radii[2] - 1.2, 1.0)),
        )
        n_chambers = int(rng.integers(2, 5))
        seeds = np.array(center) + rng.uniform(-0.5, 0.5, (n_chambers, 3)) * radii
        pts = np.argwhere(interior)
        d2 = ((pts[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
        labels = np.full(dims, -1, dtype=np.int8)
        labels[pts[:, 0], pts[:, 1], pts[:, 2]] = np.argmin(d2, axis=1)
        chambers = interior & ~_septa(labels)
        self.chambers = chambers

        # widen the shell until it can hold the maximum legal fat fraction
        # (continuous-volume ratio 1.9 leaves slack over 1.8 for voxelization)
        t_xy = SHELL_THICK_XY
        while ((radii[0] + t_xy) * (radii[1] + t_xy)
               * (radii[2] + SHELL_THICK_Z)) < 1.9 * np.prod(radii):
            t_xy += 1
        grown = _ellipsoid(
            grids, center,
            (radii[0] + t_xy, radii[1] + t_xy, radii[2] + SHELL_THICK_Z),
        )
        shell = grown & ~self.heart

        # the labeling flow crops to this exact box; fill it first
        box = bounding_box(LabelMask(chambers.astype(np.uint8), spacing),
                           margin_mm=CROP_MARGIN_MM)
        in_box = np.zeros(dims, dtype=bool)
        in_box[box.slices] = True

        # fat goes into angular arc patches around the heart axis
        idx = np.argwhere(shell)
        theta = np.arctan2(idx[:, 1] - center[1], idx[:, 0] - center[0])
        n_arcs = int(rng.integers(2, 5))
        arc_centers = rng.uniform(-np.pi, np.pi, n_arcs)
        arc_widths = rng.uniform(0.3, 0.7, n_arcs)
        wrapped = np.abs(
            (theta[:, None] - arc_centers[None, :] + np.pi) % (2 * np.pi) - np.pi
        )
        arc_dist = np.maximum(wrapped - arc_widths[None, :], 0.0).min(axis=1)
        radial = np.sqrt(
            (idx[:, 0] - center[0]) ** 2 + (idx[:, 1] - center[1]) ** 2
        )
        outside = ~in_box[idx[:, 0], idx[:, 1], idx[:, 2]]
        order = np.lexsort((radial, arc_dist, outside))
        self.shell_idx = idx[order]
        self.in_box_supply = int((~outside).sum())
        self.dims = dims
        self.center = center

    @property
    def heart_count(self) -> int:
        return int(self.heart.sum())

    def select_fat(self, target_count: int) -> np.ndarray:
        if target_count > self.shell_idx.shape[0]:
            raise ValueError(
                f"infeasible fat_fraction: need {target_count} shell voxels, "
                f"only {self.shell_idx.shape[0]} available"
            )
        fat = np.zeros(self.dims, dtype=bool)
        sel = self.shell_idx[:target_count]
        fat[sel[:, 0], sel[:, 1], sel[:, 2]] = True
        return fat

    def select_fluid(self, fat_count: int, rng: np.random.Generator) -> np.ndarray:
        """A compact patch from the shell voxels fat did not take.

        Anchored at the in-crop voxel farthest from every fat arc, so the
        patch sits where naive thresholding in the crop region will see it.
        """
        rest = self.shell_idx[fat_count:]
        fluid = np.zeros(self.dims, dtype=bool)
        if rest.shape[0] == 0:
            return fluid
        k = min(max(int(0.2 * fat_count), 20), rest.shape[0])
        in_box_rest = max(self.in_box_supply - fat_count, 0)
        anchor = rest[in_box_rest - 1 if in_box_rest > 0 else -1]
        d2 = ((rest - anchor.astype(np.float64)) ** 2).sum(axis=1)
        sel = rest[np.argsort(d2, kind="stable")[:k]]
        fluid[sel[:, 0], sel[:, 1], sel[:, 2]] = True
        return fluid


def _render(spec: PhantomSpec, geo: _Geometry, fat, fluid, rng) -> np.ndarray:
    vol = np.full(spec.dims, spec.level_background, dtype=np.float64)
    vol[geo.heart] = spec.level_myocardium
    vol[geo.chambers] = spec.level_chamber
    vol[fat] = spec.level_fat
    if fluid is not None:
        vol[fluid] = spec.level_fluid

    # bright body-edge frame (subcutaneous fat stand-in), kept clear of the
    # crop region so it only distracts whole-volume consumers
    nx, ny, _ = spec.dims
    frame = np.zeros(spec.dims, dtype=bool)
    frame[:FRAME_THICK, :, :] = True
    frame[nx - FRAME_THICK:, :, :] = True
    frame[:, :FRAME_THICK, :] = True
    frame[:, ny - FRAME_THICK:, :] = True
    keepout = bounding_box(
        LabelMask(geo.chambers.astype(np.uint8), spec.spacing),
        margin_mm=FRAME_KEEPOUT_MM,
    )
    frame[keepout.slices] = False
    vol[frame] = spec.level_fat

    if spec.noise_sigma > 0:
        span = max(spec.levels) - min(spec.levels)
        vol = vol + rng.normal(0.0, spec.noise_sigma * span, spec.dims)
    return vol.astype(np.float32)


def generate_case(spec: PhantomSpec) -> tuple[ImageVolume, LabelMask, LabelMask]:
    """One phantom: intensity volume, chamber mask, and true fat mask.

    Deterministic in spec.seed. The fat voxel count equals
    round(fat_fraction * heart voxel count) exactly.
    """
    rng = np.random.default_rng(spec.seed)
    geo = _Geometry(rng, spec.dims, spec.spacing)
    target = int(round(spec.fat_fraction * geo.heart_count))
    fat = geo.select_fat(target)
    fluid = geo.select_fluid(target, rng) if spec.fluid_present else None
    vol = _render(spec, geo, fat, fluid, rng)
    return (
        ImageVolume(vol, spec.spacing),
        LabelMask(geo.chambers.astype(np.uint8), spec.spacing),
        LabelMask(fat.astype(np.uint8), spec.spacing),
    )


@dataclass(frozen=True)
class CohortEffects:
    """Generative coefficients for the synthetic patient population.

    Demographics: sex ~ Bernoulli(sex_p) (1 = female), age and bmi normal.
    Fat volume target (cm^3):
        patv = patv_intercept + patv_sex*sex + patv_age*age + patv_bmi*bmi
               + Normal(0, patv_sd),
    clipped to what the phantom heart can carry, then realized by rendering
    a mask and measuring it; the measured value feeds the outcome draws.
    Mortality: deceased ~ Bernoulli(sigmoid(dec_intercept + dec_patv*patv
               + dec_age*age + dec_sex*sex + dec_bmi*bmi)).
    Diagnosis count: cvd = max(0, round(cvd_intercept + cvd_patv*patv
               + cvd_age*age + cvd_sex*sex + cvd_bmi*bmi + Normal(0, cvd_sd))).
    """

    sex_p: float = 0.42
    age_mean: float = 55.0
    age_sd: float = 18.0
    bmi_mean: float = 27.7
    bmi_sd: float = 5.9
    patv_intercept: float = 120.0
    patv_sex: float = -50.0
    patv_age: float = 0.2
    patv_bmi: float = 0.0
    patv_sd: float = 45.0
    dec_intercept: float = -4.5
    dec_patv: float = 0.01
    dec_age: float = 0.03
    dec_sex: float = 0.0
    dec_bmi: float = 0.0
    cvd_intercept: float = -2.0
    cvd_patv: float = 0.005
    cvd_age: float = 0.06
    cvd_sex: float = 0.0
    cvd_bmi: float = 0.0
    cvd_sd: float = 1.5

    def __post_init__(self):
        if not 0.0 < self.sex_p < 1.0:
            raise ValueError(f"sex_p must be in (0, 1), got {self.sex_p}")
        if self.age_sd < 0 or self.bmi_sd < 0 or self.patv_sd < 0 or self.cvd_sd < 0:
            raise ValueError("standard deviations must be non-negative")


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + np.exp(-z))


def generate_cohort(
    n: int,
    seed: int = 0,
    effects: CohortEffects = CohortEffects(),
    template: PhantomSpec | None = None,
    out_dir=None,
) -> list[PatientRecord]:
    """Generate n phantom patients; optionally write the full dataset.

    Returns one record per patient with the measured fat volume. When
    out_dir is given, per-case NIfTI volumes and masks, the cohort CSV
    (without fat volume, which downstream quantification recomputes), and
    the generative coefficients (effects.json) are written there.
    """
    if n < 10:
        raise ValueError(f"cohorts need n >= 10, got {n}")
    return _cohort(n, seed, effects, template, out_dir)


def _cohort(n, seed, effects, template, out_dir) -> list[PatientRecord]:
    # same flow without the cohort-size floor, for smoke-scale datasets
    if n < 1:
        raise ValueError(f"need at least one case, got {n}")
    if template is None:
        template = PhantomSpec(dims=(96, 96, 40))

    vox_cm3 = voxel_volume_mm3(template.spacing) / 1000.0
    root = np.random.SeedSequence(seed)
    demo_rng = np.random.default_rng(root.spawn(1)[0])
    case_seeds = root.spawn(n + 1)[1:]

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    records = []
    for i in range(n):
        sex = int(demo_rng.random() < effects.sex_p)
        age = float(max(demo_rng.normal(effects.age_mean, effects.age_sd), 18.0))
        bmi = float(max(demo_rng.normal(effects.bmi_mean, effects.bmi_sd), 12.0))
        patv_target = (
            effects.patv_intercept
            + effects.patv_sex * sex
            + effects.patv_age * age
            + effects.patv_bmi * bmi
            + demo_rng.normal(0.0, effects.patv_sd)
        )

        case_rng = np.random.default_rng(case_seeds[i])
        geo = _Geometry(case_rng, template.dims, template.spacing)
        lo = 0.02 * geo.heart_count
        hi = 0.8 * geo.heart_count
        target_vox = int(round(np.clip(patv_target / vox_cm3, lo, hi)))
        fat = geo.select_fat(target_vox)
        fat_mask = LabelMask(fat.astype(np.uint8), template.spacing)
        patv = patv_cm3(fat_mask)

        lp = (
            effects.dec_intercept
            + effects.dec_patv * patv
            + effects.dec_age * age
            + effects.dec_sex * sex
            + effects.dec_bmi * bmi
        )
        deceased = int(demo_rng.random() < _sigmoid(lp))
        cvd_raw = (
            effects.cvd_intercept
            + effects.cvd_patv * patv
            + effects.cvd_age * age
            + effects.cvd_sex * sex
            + effects.cvd_bmi * bmi
            + demo_rng.normal(0.0, effects.cvd_sd)
        )
        cvd = int(max(round(cvd_raw), 0))

        case_id = f"case_{i:04d}"
        records.append(
            PatientRecord(
                case_id=case_id, age=age, sex=sex, bmi=bmi,
                deceased=deceased, cvd_diagnosis=cvd, patv=patv,
            )
        )

        if out_dir is not None:
            fluid = geo.select_fluid(target_vox, case_rng) if template.fluid_present else None
            vol = _render(template, geo, fat, fluid, case_rng)
            case_dir = out_dir / case_id
            case_dir.mkdir(exist_ok=True)
            spacing = template.spacing
            save_volume(ImageVolume(vol, spacing), case_dir / "volume.nii.gz")
            save_mask(
                LabelMask(geo.chambers.astype(np.uint8), spacing),
                case_dir / "chambers.nii.gz",
            )
            save_mask(fat_mask, case_dir / "pat_truth.nii.gz")

    if out_dir is not None:
        write_records_csv(records, out_dir / "cohort.csv", include_patv=False)
        with open(out_dir / "effects.json", "w") as f:
            json.dump(dataclasses.asdict(effects), f, indent=2, sort_keys=True)
            f.write("\n")
    return records
