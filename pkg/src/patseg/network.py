"""3D Res-UNet for voxelwise foreground probability prediction.

Contracting path of four residual conv levels (each halving the grid with a
strided 3x3x3 convolution) into a bottleneck, then four transpose-conv
upsampling levels with concatenating skips, a 1x1x1 head and a sigmoid.
Residual units use BatchNorm + PReLU; with ``residual=False`` the same
layout degrades to a plain U-Net (ReLU, no shortcut adds) for baselines.

Spatial input dims must be divisible by 16 (four halvings); callers with
arbitrary stacks go through pad_to_multiple / crop_back.

Checkpoints are written to a single self-describing file: a versioned text
header with the config and training metadata, a tensor index, then raw
little-endian tensor bytes. Writing the same checkpoint twice produces
byte-identical files.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import FormatError

__all__ = [
    "ModelConfig",
    "ResUNet3d",
    "build_model",
    "count_parameters",
    "pad_to_multiple",
    "crop_back",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_model",
]

KERNEL = (3, 3, 3)
DOWNSAMPLE = 2
LEVELS = 4
GRID_MULTIPLE = DOWNSAMPLE**LEVELS
# sigmoid(-3) ~= 0.047, a typical foreground fraction for this task
HEAD_BIAS_PRIOR = -3.0

_CKPT_MAGIC = b"PATSEG-CKPT v1\n"


@dataclass(frozen=True)
class ModelConfig:
    channels_per_level: tuple[int, int, int, int] = (16, 32, 64, 128)
    bottleneck: int = 256
    residual: bool = True

    def __post_init__(self):
        ch = tuple(int(c) for c in self.channels_per_level)
        if len(ch) != LEVELS:
            raise ValueError(f"need {LEVELS} encoder widths, got {len(ch)}")
        if any(c < 1 for c in ch) or self.bottleneck < 1:
            raise ValueError("channel widths must be positive")
        object.__setattr__(self, "channels_per_level", ch)
        object.__setattr__(self, "bottleneck", int(self.bottleneck))


class _Unit(nn.Module):
    """Two 3x3x3 convolutions with BN; optional shortcut add (residual)."""

    def __init__(self, cin: int, cout: int, stride: int, residual: bool):
        super().__init__()
        self.residual = residual
        self.conv1 = nn.Conv3d(cin, cout, KERNEL, stride=stride, padding=1)
        self.bn1 = nn.BatchNorm3d(cout)
        self.conv2 = nn.Conv3d(cout, cout, KERNEL, padding=1)
        self.bn2 = nn.BatchNorm3d(cout)
        if residual:
            self.act1 = nn.PReLU()
            self.act2 = nn.PReLU()
            if cin != cout or stride != 1:
                self.skip = nn.Conv3d(cin, cout, 1, stride=stride)
            else:
                self.skip = nn.Identity()
        else:
            self.act1 = nn.ReLU()
            self.act2 = nn.ReLU()

    def forward(self, x):
        h = self.act1(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        if self.residual:
            h = h + self.skip(x)
        return self.act2(h)


class ResUNet3d(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        ch = config.channels_per_level
        res = config.residual
        self.enc = nn.ModuleList(
            [_Unit(1, ch[0], 1, res)]
            + [_Unit(ch[i], ch[i + 1], DOWNSAMPLE, res) for i in range(LEVELS - 1)]
        )
        self.bottom = _Unit(ch[-1], config.bottleneck, DOWNSAMPLE, res)
        widths = list(ch) + [config.bottleneck]
        ups, decs = [], []
        for lvl in reversed(range(LEVELS)):
            ups.append(
                nn.ConvTranspose3d(
                    widths[lvl + 1], widths[lvl], KERNEL,
                    stride=DOWNSAMPLE, padding=1, output_padding=1,
                )
            )
            decs.append(_Unit(2 * widths[lvl], widths[lvl], 1, res))
        self.ups = nn.ModuleList(ups)
        self.decs = nn.ModuleList(decs)
        self.head = nn.Conv3d(ch[0], 1, 1)
        # start the sigmoid near a sparse-foreground prior instead of 0.5,
        # otherwise short runs spend most steps deflating background mass
        nn.init.constant_(self.head.bias, HEAD_BIAS_PRIOR)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] != 1:
            raise ValueError(f"expected (batch, 1, X, Y, Z) input, got {tuple(x.shape)}")
        if any(d % GRID_MULTIPLE for d in x.shape[2:]):
            raise ValueError(
                f"spatial dims {tuple(x.shape[2:])} must be divisible by {GRID_MULTIPLE}"
            )
        skips = []
        h = x
        for unit in self.enc:
            h = unit(h)
            skips.append(h)
        h = self.bottom(h)
        for up, dec, skip in zip(self.ups, self.decs, reversed(skips)):
            h = up(h)
            h = dec(torch.cat([h, skip], dim=1))
        return torch.sigmoid(self.head(h))


def build_model(config: ModelConfig = ModelConfig()) -> ResUNet3d:
    return ResUNet3d(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def pad_to_multiple(x: torch.Tensor, multiple: int = GRID_MULTIPLE):
    """Reflect-pad trailing spatial dims up to the next multiple.

    Returns the padded tensor and the original spatial shape for crop_back.
    """
    spatial = x.shape[2:]
    pads = []
    for d in reversed(spatial):  # F.pad wants (z_lo, z_hi, y_lo, y_hi, x_lo, x_hi)
        need = (-d) % multiple
        pads.extend([need // 2, need - need // 2])
    if any(pads):
        x = F.pad(x, pads, mode="reflect")
    return x, tuple(spatial)


def crop_back(x: torch.Tensor, original_spatial: tuple[int, int, int]) -> torch.Tensor:
    slices = [slice(None), slice(None)]
    for d, orig in zip(x.shape[2:], original_spatial):
        lo = (d - orig) // 2
        slices.append(slice(lo, lo + orig))
    return x[tuple(slices)]


@dataclass(frozen=True)
class Checkpoint:
    config: ModelConfig
    state: dict[str, np.ndarray]
    meta: dict[str, float | int] = field(default_factory=dict)


_DT_TAGS = {"<f4": "f4", "<f8": "f8", "<i8": "i8", "<i4": "i4"}
_TAG_DTYPES = {v: np.dtype("<" + v) for v in _DT_TAGS.values()}


def _meta_repr(v):
    return repr(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    cfg = ckpt.config
    buf.write(b"[config]\n")
    buf.write(
        f"channels_per_level={','.join(map(str, cfg.channels_per_level))}\n".encode()
    )
    buf.write(f"bottleneck={cfg.bottleneck}\n".encode())
    buf.write(f"residual={str(cfg.residual).lower()}\n".encode())
    buf.write(b"[meta]\n")
    for k in sorted(ckpt.meta):
        buf.write(f"{k}={_meta_repr(ckpt.meta[k])}\n".encode())
    buf.write(b"[tensors]\n")
    names = sorted(ckpt.state)
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.state[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tag = _DT_TAGS.get(arr.dtype.str)
        if tag is None:
            raise FormatError(f"cannot serialize tensor dtype {arr.dtype}")
        shape = ",".join(map(str, arr.shape)) if arr.ndim else ""
        buf.write(f"{name} {tag} ({shape})\n".encode())
        blobs.append(arr.tobytes())
    buf.write(b"[data]\n")
    for blob in blobs:
        buf.write(blob)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(_CKPT_MAGIC):
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    head_end = raw.find(b"[data]\n")
    if head_end < 0:
        raise FormatError(f"{path}: missing data section")
    lines = raw[len(_CKPT_MAGIC) : head_end].decode().splitlines()
    data = raw[head_end + len(b"[data]\n") :]

    section = None
    cfg_kv, meta, index = {}, {}, []
    for ln in lines:
        if ln in ("[config]", "[meta]", "[tensors]"):
            section = ln
            continue
        if section == "[config]":
            k, v = ln.split("=", 1)
            cfg_kv[k] = v
        elif section == "[meta]":
            k, v = ln.split("=", 1)
            meta[k] = int(v) if v.lstrip("-").isdigit() else float(v)
        elif section == "[tensors]":
            name, tag, shape_s = ln.split(" ")
            shape = tuple(
                int(s) for s in shape_s.strip("()").split(",") if s
            )
            index.append((name, tag, shape))
        else:
            raise FormatError(f"{path}: stray line before any section: {ln!r}")
    try:
        config = ModelConfig(
            channels_per_level=tuple(
                int(c) for c in cfg_kv["channels_per_level"].split(",")
            ),
            bottleneck=int(cfg_kv["bottleneck"]),
            residual=cfg_kv["residual"] == "true",
        )
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad config section: {e}") from e

    state = {}
    offset = 0
    for name, tag, shape in index:
        if tag not in _TAG_DTYPES:
            raise FormatError(f"{path}: unknown tensor dtype tag {tag!r}")
        dtype = _TAG_DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        chunk = data[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise FormatError(f"{path}: truncated tensor data for {name}")
        state[name] = np.frombuffer(chunk, dtype=dtype).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after tensors")
    return Checkpoint(config=config, state=state, meta=meta)


def state_from_model(model: ResUNet3d) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def restore_model(ckpt: Checkpoint) -> ResUNet3d:
    """Rebuild the network from a checkpoint; weights must fit the config."""
    model = build_model(ckpt.config)
    tensors = {k: torch.from_numpy(v.copy()) for k, v in ckpt.state.items()}
    try:
        model.load_state_dict(tensors, strict=True)
    except RuntimeError as e:
        raise FormatError(f"checkpoint weights do not fit the config: {e}") from e
    model.eval()
    return model
