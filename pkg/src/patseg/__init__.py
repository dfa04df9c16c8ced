"""Pericardial adipose tissue segmentation and quantification.

The pipeline runs end to end on synthetic phantoms: volumetric data
handling, threshold-based candidate labeling, a 3D residual U-Net with a
combined Dice/cross-entropy loss, deterministic training, overlap and
surface metrics, fat volume quantification, and cohort regression
analysis. `patseg.cli` exposes the same stages as subcommands.
"""

from .augmentation import AugmentPolicy, augment_pair
from .errors import (
    ConvergenceError,
    DegenerateInputError,
    EmptyMaskError,
    FormatError,
    SeparationError,
    TrainingDivergedError,
)
from .groundtruth import BoxRegion, OtsuResult, bounding_box, candidate_pat_mask, otsu_threshold
from .loss import CombinedLoss, LossConfig, combined_loss, combined_loss_grad
from .metrics import (
    EvalResult,
    dice_score,
    evaluate_pair,
    hausdorff_mm,
    patv_cm3,
    read_eval_csv,
    write_eval_csv,
)
from .network import (
    Checkpoint,
    ModelConfig,
    ResUNet3d,
    build_model,
    count_parameters,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from .overlay import render_overlay
from .phantom import CohortEffects, PhantomSpec, generate_case, generate_cohort
from .stats import (
    AnalysisResult,
    PatientRecord,
    RegressionReport,
    RegressorStat,
    join_patv,
    logistic_fit,
    ols_fit,
    pearson,
    phi,
    read_patv_csv,
    read_records_csv,
    render_analysis,
    run_paper_analysis,
    write_analysis_csv,
    write_patv_csv,
    write_records_csv,
)
from .trainer import DatasetSplit, TrainConfig, predict, split_dataset, train
from .volumes import (
    ImageVolume,
    LabelMask,
    load_mask,
    load_volume,
    save_mask,
    save_volume,
    voxel_volume_mm3,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy", "augment_pair",
    "ConvergenceError", "DegenerateInputError", "EmptyMaskError",
    "FormatError", "SeparationError", "TrainingDivergedError",
    "BoxRegion", "OtsuResult", "bounding_box", "candidate_pat_mask",
    "otsu_threshold",
    "CombinedLoss", "LossConfig", "combined_loss", "combined_loss_grad",
    "EvalResult", "dice_score", "evaluate_pair", "hausdorff_mm", "patv_cm3",
    "read_eval_csv", "write_eval_csv",
    "Checkpoint", "ModelConfig", "ResUNet3d", "build_model",
    "count_parameters", "load_checkpoint", "restore_model", "save_checkpoint",
    "render_overlay",
    "CohortEffects", "PhantomSpec", "generate_case", "generate_cohort",
    "AnalysisResult", "PatientRecord", "RegressionReport", "RegressorStat",
    "join_patv", "logistic_fit", "ols_fit", "pearson", "phi",
    "read_patv_csv", "read_records_csv", "render_analysis", "write_analysis_csv",
    "run_paper_analysis", "write_patv_csv", "write_records_csv",
    "DatasetSplit", "TrainConfig", "predict", "split_dataset", "train",
    "ImageVolume", "LabelMask", "load_mask", "load_volume", "save_mask",
    "save_volume", "voxel_volume_mm3",
    "__version__",
]
