"""Dataset split, training loop, and binarizing inference.

Training follows a fixed recipe: Adam, batch 8, learning rate 1e-4, 60
epochs, combined Dice + cross-entropy loss, per-volume min-max intensity
normalization, stochastic augmentation on the training cases only. The
model state with the best validation loss is the one that ships in the
checkpoint. Runs are bit-for-bit reproducible under a fixed seed on a
fixed machine configuration; the loop forces single-threaded torch math
because threaded CPU reductions reorder float sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .augmentation import AugmentPolicy, augment_pair
from .errors import TrainingDivergedError
from .loss import CombinedLoss, LossConfig
from .network import (
    Checkpoint,
    ModelConfig,
    build_model,
    crop_back,
    pad_to_multiple,
    restore_model,
    state_from_model,
)
from .volumes import ImageVolume, LabelMask

__all__ = [
    "TrainConfig",
    "DatasetSplit",
    "split_dataset",
    "train",
    "predict",
    "normalize_intensities",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the training recipe. The optimizer is always Adam."""

    batch_size: int = 8
    learning_rate: float = 1e-4
    epochs: int = 60
    seed: int = 0
    validation_fraction: float = 1 / 6
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )


@dataclass(frozen=True)
class DatasetSplit:
    train_val: list[str]
    test: list[str]


def split_dataset(case_ids, test_fraction: float = 1 / 7, seed: int = 0) -> DatasetSplit:
    """Deterministic shuffled split into a train+validation pool and a test set.

    Test size is round(fraction * n), at least 1 and at most n - 1.
    """
    ids = list(case_ids)
    if len(ids) < 2:
        raise ValueError(f"need at least 2 cases to split, got {len(ids)}")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    n_test = min(max(int(round(test_fraction * len(ids))), 1), len(ids) - 1)
    test = [ids[i] for i in perm[:n_test]]
    train_val = [ids[i] for i in perm[n_test:]]
    return DatasetSplit(train_val=train_val, test=test)


def normalize_intensities(data: np.ndarray) -> np.ndarray:
    """Per-volume min-max rescale to [0, 1]; constant volumes map to zero."""
    data = np.asarray(data, dtype=np.float32)
    lo = float(data.min())
    span = float(data.max()) - lo
    if span == 0.0:
        return np.zeros_like(data)
    return (data - lo) / span


def _check_cases(cases):
    if len(cases) < 1:
        raise ValueError("need at least 1 training case")
    dims = cases[0][0].dims
    for vol, mask in cases:
        if not vol.aligned_with(mask):
            raise ValueError("every volume must be aligned with its mask")
        if vol.dims != dims:
            raise ValueError(
                f"all cases must share dims for batched training: {vol.dims} != {dims}"
            )


def _to_batch(pairs):
    vols = np.stack([v[None] for v, _ in pairs])
    masks = np.stack([m[None] for _, m in pairs])
    return torch.from_numpy(vols), torch.from_numpy(masks.astype(np.float32))


def _case_loss(model, loss_fn, vol_np, mask_np):
    x = torch.from_numpy(vol_np[None, None])
    t = torch.from_numpy(mask_np.astype(np.float32)[None, None])
    xp, orig = pad_to_multiple(x)
    out = crop_back(model(xp), orig)
    return float(loss_fn(out, t))


def train(cases, cfg: TrainConfig = TrainConfig()) -> Checkpoint:
    """Fit the network on (volume, mask) pairs and return the best checkpoint.

    A validation_fraction share of the cases (rounded, seed-shuffled) is held
    out and scored after every epoch with augmentation off; the state with
    the lowest validation loss is kept. With no validation cases the lowest
    training loss decides instead. Divergence (non-finite loss) aborts with
    the offending epoch and batch.
    """
    _check_cases(cases)
    torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)

    norm = [
        (normalize_intensities(vol.data), np.asarray(mask.data), vol.spacing)
        for vol, mask in cases
    ]

    split_seed, aug_seed, shuffle_seed = np.random.SeedSequence(cfg.seed).spawn(3)
    split_rng = np.random.default_rng(split_seed)
    n = len(norm)
    n_val = min(int(round(cfg.validation_fraction * n)), n - 1)
    order = split_rng.permutation(n)
    val_idx = sorted(int(i) for i in order[:n_val])
    train_idx = sorted(int(i) for i in order[n_val:])

    aug_rng = np.random.default_rng(aug_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)

    model = build_model(cfg.model)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    loss_fn = CombinedLoss(cfg.loss)

    meta: dict[str, float | int] = {"seed": cfg.seed, "cases": n, "val_cases": n_val}
    best_score = np.inf
    best_state = state_from_model(model)
    best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        epoch_order = shuffle_rng.permutation(len(train_idx))
        losses = []
        for start in range(0, len(train_idx), cfg.batch_size):
            batch_members = [train_idx[int(i)] for i in epoch_order[start : start + cfg.batch_size]]
            pairs = []
            for i in batch_members:
                vol_np, mask_np, spacing = norm[i]
                av, am = augment_pair(
                    ImageVolume(vol_np, spacing),
                    LabelMask(mask_np, spacing),
                    cfg.augment,
                    aug_rng,
                )
                pairs.append((av.data, am.data))
            x, t = _to_batch(pairs)
            xp, orig = pad_to_multiple(x)
            out = crop_back(model(xp), orig)
            loss = loss_fn(out, t)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    epoch=epoch, batch=start // cfg.batch_size,
                    message="non-finite training loss",
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append((float(loss.detach()), len(pairs)))

        train_loss = sum(l * k for l, k in losses) / sum(k for _, k in losses)
        meta[f"train_loss_epoch_{epoch:03d}"] = train_loss

        if val_idx:
            model.eval()
            with torch.no_grad():
                val_loss = float(
                    np.mean([_case_loss(model, loss_fn, norm[i][0], norm[i][1]) for i in val_idx])
                )
            meta[f"val_loss_epoch_{epoch:03d}"] = val_loss
            score = val_loss
        else:
            score = train_loss

        if score < best_score:
            best_score = score
            best_state = state_from_model(model)
            best_epoch = epoch

    meta["epochs_run"] = cfg.epochs
    meta["best_epoch"] = best_epoch
    meta["final_train_loss"] = meta[f"train_loss_epoch_{cfg.epochs:03d}"]
    if val_idx:
        meta["final_val_loss"] = meta[f"val_loss_epoch_{cfg.epochs:03d}"]
        meta["best_val_loss"] = float(best_score)
    return Checkpoint(config=cfg.model, state=best_state, meta=meta)


def predict(checkpoint: Checkpoint, volume: ImageVolume) -> LabelMask:
    """Probability map thresholded at 0.5; ties (exactly 0.5) are foreground."""
    model = restore_model(checkpoint)
    data = normalize_intensities(volume.data)
    x = torch.from_numpy(data[None, None])
    xp, orig = pad_to_multiple(x)
    with torch.no_grad():
        probs = crop_back(model(xp), orig)[0, 0].numpy()
    return LabelMask((probs >= 0.5).astype(np.uint8), volume.spacing)
