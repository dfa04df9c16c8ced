"""Exception types shared across the package.

Everything derives from a builtin (ValueError / RuntimeError) so callers can
catch broadly without importing this module.
"""


class FormatError(ValueError):
    """Malformed or unsupported file payload (NIfTI header, checkpoint, CSV)."""


class DegenerateInputError(ValueError):
    """Input carries no usable signal, e.g. a constant image handed to Otsu."""


class EmptyMaskError(ValueError):
    """Operation is undefined on an empty mask (bounding box, Hausdorff)."""


class SeparationError(ValueError):
    """Logistic design is perfectly separable; the MLE diverges."""


class ConvergenceError(RuntimeError):
    """Iterative fit exhausted its iteration budget."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, batch: int, message: str = ""):
        self.epoch = epoch
        self.batch = batch
        detail = message or f"non-finite loss at epoch {epoch}, batch {batch}"
        super().__init__(detail)
