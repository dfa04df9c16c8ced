"""Combined Dice + cross-entropy training objective.

    loss = 1 - (2*sum(x*y) + eps) / (sum(x) + sum(y) + eps) - (1/N) * sum(x * log(y))

with x the binary reference labels and y the predicted foreground
probabilities. The cross-entropy term above penalizes only foreground
voxels; the "full-bce" variant adds the usual (1-x)*log(1-y) background
term. Predictions are clamped to [1e-7, 1-1e-7] inside the logarithms so
saturated sigmoids stay finite; the Dice ratio sees the raw probabilities,
which keeps the empty-vs-empty case at exactly eps/eps = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

__all__ = ["LossConfig", "combined_loss", "combined_loss_grad", "CombinedLoss"]

CLAMP_LO = 1e-7
CLAMP_HI = 1.0 - 1e-7

VARIANTS = ("as-written", "full-bce")


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1e-5
    variant: str = "as-written"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


def _validate(pred, target):
    y = np.asarray(pred, dtype=np.float64).ravel()
    x = np.asarray(target, dtype=np.float64).ravel()
    if y.size != x.size:
        raise ValueError(f"length mismatch: {y.size} predictions vs {x.size} labels")
    if y.size == 0:
        raise ValueError("loss is undefined on empty inputs")
    if np.any(y < 0) or np.any(y > 1) or not np.isfinite(y).all():
        raise ValueError("predictions must lie in [0, 1]")
    if not ((x == 0) | (x == 1)).all():
        raise ValueError("labels must be 0 or 1")
    return y, x


def combined_loss(pred, target, cfg: LossConfig = LossConfig()) -> float:
    """Scalar loss over flattened probabilities and binary labels."""
    y, x = _validate(pred, target)
    n = y.size
    dice = (2.0 * np.sum(x * y) + cfg.epsilon) / (np.sum(x) + np.sum(y) + cfg.epsilon)
    yc = np.clip(y, CLAMP_LO, CLAMP_HI)
    ce = np.sum(x * np.log(yc))
    if cfg.variant == "full-bce":
        ce = ce + np.sum((1.0 - x) * np.log(1.0 - yc))
    return float(1.0 - dice - ce / n)


def combined_loss_grad(pred, target, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """d loss / d prediction, zero where the log clamp saturates."""
    y, x = _validate(pred, target)
    n = y.size
    a = 2.0 * np.sum(x * y) + cfg.epsilon
    b = np.sum(x) + np.sum(y) + cfg.epsilon
    grad = (a - 2.0 * x * b) / b**2
    yc = np.clip(y, CLAMP_LO, CLAMP_HI)
    active = (y > CLAMP_LO) & (y < CLAMP_HI)
    grad = grad - active * x / (yc * n)
    if cfg.variant == "full-bce":
        grad = grad + active * (1.0 - x) / ((1.0 - yc) * n)
    return grad


class CombinedLoss(torch.nn.Module):
    """Torch counterpart of combined_loss, differentiable via autograd."""

    def __init__(self, cfg: LossConfig = LossConfig()):
        super().__init__()
        self.cfg = cfg

    def forward(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        y = pred.reshape(-1)
        x = target.reshape(-1).to(y.dtype)
        n = y.numel()
        eps = self.cfg.epsilon
        dice = (2.0 * (x * y).sum() + eps) / (x.sum() + y.sum() + eps)
        yc = y.clamp(CLAMP_LO, CLAMP_HI)
        ce = (x * torch.log(yc)).sum()
        if self.cfg.variant == "full-bce":
            ce = ce + ((1.0 - x) * torch.log(1.0 - yc)).sum()
        return 1.0 - dice - ce / n
