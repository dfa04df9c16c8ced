"""Volumetric image and mask data model with NIfTI-1 file I/O.

Axis convention: arrays are indexed ``data[ix, iy, iz]`` with z the slice
axis, matching the on-disk NIfTI ordering (x fastest). Intensities are kept
in floating point; masks are uint8 with values {0, 1}. Physical voxel
spacing is carried in mm and is the only orientation information this
package interprets; the rest of a loaded header is preserved opaquely and
written back on save.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = [
    "ImageVolume",
    "LabelMask",
    "load_volume",
    "save_volume",
    "load_mask",
    "save_mask",
    "voxel_volume_mm3",
]

_HDR_SIZE = 348
# NIfTI-1 datatype code -> numpy dtype character
_DTYPES = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
    256: "i1",
    512: "u2",
    768: "u4",
}
_DTYPE_CODES = {np.dtype("f4"): 16, np.dtype("f8"): 64, np.dtype("u1"): 2}


def _canonical_spacing(values) -> tuple[float, float, float]:
    """Shortest decimal that round-trips through the float32 header field."""
    out = []
    for v in values:
        out.append(float(np.format_float_positional(np.float32(v), unique=True)))
    return tuple(out)


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ValueError(f"spacing must have 3 components, got {len(spacing)}")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be strictly positive, got {spacing}")
    return spacing


@dataclass(frozen=True)
class ImageVolume:
    """3D scalar intensity grid with physical voxel spacing in mm.

    Immutable after construction; the payload array is marked read-only.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    header: bytes | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"volume must be 3D, got {data.ndim}D")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        if not np.isfinite(data).all():
            raise ValueError("volume intensities must all be finite")
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def aligned_with(self, other) -> bool:
        return self.dims == other.dims and self.spacing == other.spacing


@dataclass(frozen=True)
class LabelMask:
    """Binary 3D mask (foreground = 1) aligned to an ImageVolume."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    header: bytes | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"mask must be 3D, got {data.ndim}D")
        if not ((data == 0) | (data == 1)).all():
            raise ValueError("mask values must be 0 or 1")
        data = np.ascontiguousarray(data.astype(np.uint8))
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def foreground_count(self) -> int:
        return int(self.data.sum())

    def aligned_with(self, other) -> bool:
        return self.dims == other.dims and self.spacing == other.spacing


def voxel_volume_mm3(spacing) -> float:
    """Volume of one voxel in mm^3 for the given (sx, sy, sz) spacing."""
    sx, sy, sz = _check_spacing(spacing)
    return sx * sy * sz


def _open(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_nifti(path) -> tuple[np.ndarray, tuple[float, float, float], bytes]:
    path = Path(path)
    with _open(path, "rb") as f:
        hdr = f.read(_HDR_SIZE)
        if len(hdr) < _HDR_SIZE:
            raise FormatError(f"{path}: truncated NIfTI header")
        for bo in ("<", ">"):
            if struct.unpack(bo + "i", hdr[:4])[0] == _HDR_SIZE:
                break
        else:
            raise FormatError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
        magic = hdr[344:348]
        if magic not in (b"n+1\x00", b"ni1\x00"):
            raise FormatError(f"{path}: not a NIfTI-1 file (bad magic {magic!r})")
        if magic == b"ni1\x00":
            raise FormatError(f"{path}: detached .hdr/.img pairs are not supported")

        dim = struct.unpack(bo + "8h", hdr[40:56])
        if dim[0] != 3:
            raise FormatError(f"{path}: expected a 3D scalar image, got dim[0]={dim[0]}")
        shape = tuple(int(d) for d in dim[1:4])
        if any(d < 1 for d in shape):
            raise FormatError(f"{path}: non-positive dimensions {shape}")

        datatype = struct.unpack(bo + "h", hdr[70:72])[0]
        if datatype not in _DTYPES:
            raise FormatError(f"{path}: unsupported NIfTI datatype code {datatype}")
        dtype = np.dtype(bo + _DTYPES[datatype])

        pixdim = struct.unpack(bo + "8f", hdr[76:108])
        if any((not np.isfinite(p)) or p <= 0 for p in pixdim[1:4]):
            raise FormatError(f"{path}: non-positive voxel spacing {pixdim[1:4]}")
        spacing = _canonical_spacing(pixdim[1:4])

        vox_offset = int(struct.unpack(bo + "f", hdr[108:112])[0])
        scl_slope, scl_inter = struct.unpack(bo + "2f", hdr[112:120])

        skip = vox_offset - _HDR_SIZE
        if skip < 0:
            raise FormatError(f"{path}: vox_offset {vox_offset} inside header")
        if skip:
            f.read(skip)
        n = int(np.prod(shape))
        raw = f.read(n * dtype.itemsize)
        if len(raw) < n * dtype.itemsize:
            raise FormatError(f"{path}: truncated payload")
        data = np.frombuffer(raw, dtype=dtype).reshape(shape, order="F")

    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data.astype(np.float32) * slope + scl_inter
    return data, spacing, hdr


def _write_nifti(data: np.ndarray, spacing, path, template: bytes | None):
    path = Path(path)
    dtype = np.dtype(data.dtype).newbyteorder("<")
    code = _DTYPE_CODES.get(np.dtype(data.dtype.str.lstrip("<>=|")))
    if code is None:
        raise FormatError(f"cannot serialize dtype {data.dtype}")

    if template is not None and struct.unpack("<i", template[:4])[0] != _HDR_SIZE:
        template = None  # byte-swapped source header, rebuild from scratch
    hdr = bytearray(template) if template is not None else bytearray(_HDR_SIZE)
    if template is None:
        struct.pack_into("<h", hdr, 254, 1)  # sform_code: scanner anatomical
        struct.pack_into("<4f", hdr, 280, spacing[0], 0, 0, 0)
        struct.pack_into("<4f", hdr, 296, 0, spacing[1], 0, 0)
        struct.pack_into("<4f", hdr, 312, 0, 0, spacing[2], 0)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, code, dtype.itemsize * 8)
    qfac = struct.unpack_from("<f", hdr, 76)[0] if template is not None else 1.0
    struct.pack_into("<8f", hdr, 76, qfac or 1.0, *spacing, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, float(_HDR_SIZE + 4))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[344:348] = b"n+1\x00"

    with _open(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(b"\x00\x00\x00\x00")  # no header extensions
        f.write(np.asarray(data, dtype=dtype).tobytes(order="F"))


def load_volume(path) -> ImageVolume:
    """Read a 3D scalar NIfTI-1 image; intensities widen to floating point."""
    data, spacing, hdr = _read_nifti(path)
    if not np.issubdtype(data.dtype, np.floating):
        data = data.astype(np.float32)
    elif data.dtype.byteorder == ">":
        data = data.astype(data.dtype.newbyteorder("<"))
    if not np.isfinite(data).all():
        raise FormatError(f"{path}: payload contains non-finite intensities")
    return ImageVolume(data=data, spacing=spacing, header=hdr)


def save_volume(volume: ImageVolume, path) -> None:
    """Write the volume as NIfTI-1 (.nii or .nii.gz), payload bit-exact."""
    _write_nifti(volume.data, volume.spacing, path, volume.header)


def load_mask(path) -> LabelMask:
    """Read a binary mask; any integer or exact-0/1 float payload is accepted."""
    data, spacing, hdr = _read_nifti(path)
    if not ((data == 0) | (data == 1)).all():
        raise FormatError(f"{path}: mask payload has values outside {{0, 1}}")
    return LabelMask(data=data.astype(np.uint8), spacing=spacing, header=hdr)


def save_mask(mask: LabelMask, path) -> None:
    """Write the mask as NIfTI-1 with a uint8 payload."""
    _write_nifti(mask.data, mask.spacing, path, mask.header)
