import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from patseg.errors import FormatError
from patseg.volumes import (
    ImageVolume,
    LabelMask,
    load_mask,
    load_volume,
    save_mask,
    save_volume,
    voxel_volume_mm3,
)


def _raw_nifti(shape, dtype_code, itemsize, payload, pixdim=(1.0, 1.0, 1.0),
               ndim=3, magic=b"n+1\x00", byteorder="<"):
    """Hand-assemble a minimal NIfTI-1 byte string for error-path tests."""
    hdr = bytearray(348)
    struct.pack_into(byteorder + "i", hdr, 0, 348)
    dims = [ndim] + list(shape) + [1] * (7 - len(shape))
    struct.pack_into(byteorder + "8h", hdr, 40, *dims)
    struct.pack_into(byteorder + "2h", hdr, 70, dtype_code, itemsize * 8)
    struct.pack_into(byteorder + "8f", hdr, 76, 1.0, *pixdim, 0, 0, 0, 0)
    struct.pack_into(byteorder + "f", hdr, 108, 352.0)
    struct.pack_into(byteorder + "2f", hdr, 112, 1.0, 0.0)
    hdr[344:348] = magic
    return bytes(hdr) + b"\x00" * 4 + payload


class TestVoxelVolume:
    def test_unit_spacing(self):
        assert voxel_volume_mm3((1.0, 1.0, 1.0)) == 1.0

    def test_anisotropic_spacing(self):
        got = voxel_volume_mm3((1.4, 1.4, 6.0))
        assert got == pytest.approx(11.76, rel=1e-12)

    def test_isotropic_2mm(self):
        assert voxel_volume_mm3((2.0, 2.0, 2.0)) == 8.0

    @given(
        st.tuples(*[st.floats(0.1, 10.0, allow_nan=False)] * 3),
        st.floats(0.5, 4.0),
    )
    def test_scaling_is_cubic(self, spacing, a):
        base = voxel_volume_mm3(spacing)
        scaled = voxel_volume_mm3(tuple(a * s for s in spacing))
        assert scaled == pytest.approx(a**3 * base, rel=1e-9)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            voxel_volume_mm3((1.0, 0.0, 1.0))


class TestDataModel:
    def test_volume_widens_ints_to_float(self):
        vol = ImageVolume(np.ones((4, 4, 2), dtype=np.int16), (1.0, 1.0, 1.0))
        assert vol.data.dtype == np.float32

    def test_volume_rejects_nan(self):
        data = np.zeros((4, 4, 2), dtype=np.float32)
        data[1, 1, 1] = np.nan
        with pytest.raises(ValueError, match="finite"):
            ImageVolume(data, (1.0, 1.0, 1.0))

    def test_volume_rejects_2d(self):
        with pytest.raises(ValueError, match="3D"):
            ImageVolume(np.zeros((4, 4), dtype=np.float32), (1.0, 1.0, 1.0))

    def test_volume_is_readonly(self):
        vol = ImageVolume(np.zeros((2, 2, 2), dtype=np.float32), (1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 1.0

    def test_mask_rejects_nonbinary(self):
        with pytest.raises(ValueError, match="0 or 1"):
            LabelMask(np.full((2, 2, 2), 2, dtype=np.uint8), (1.0, 1.0, 1.0))

    def test_mask_casts_to_uint8(self):
        mask = LabelMask(np.ones((2, 2, 2), dtype=np.int64), (1.0, 1.0, 1.0))
        assert mask.data.dtype == np.uint8
        assert mask.foreground_count == 8

    def test_aligned_with(self):
        vol = ImageVolume(np.zeros((4, 4, 2), dtype=np.float32), (1.4, 1.4, 6.0))
        mask = LabelMask(np.zeros((4, 4, 2), dtype=np.uint8), (1.4, 1.4, 6.0))
        other = LabelMask(np.zeros((4, 4, 3), dtype=np.uint8), (1.4, 1.4, 6.0))
        assert vol.aligned_with(mask)
        assert not vol.aligned_with(other)

    def test_spacing_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            ImageVolume(np.zeros((2, 2, 2), dtype=np.float32), (1.0, -1.0, 1.0))


class TestRoundTrip:
    @pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
    def test_volume_payload_identity(self, tmp_path, suffix):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((12, 10, 5)).astype(np.float32)
        vol = ImageVolume(data, (1.4, 1.4, 6.0))
        path = tmp_path / f"vol{suffix}"
        save_volume(vol, path)
        back = load_volume(path)
        assert back.data.dtype == np.float32
        np.testing.assert_array_equal(back.data, data)
        assert back.spacing == (1.4, 1.4, 6.0)

    def test_float64_payload_survives(self, tmp_path):
        rng = np.random.default_rng(11)
        data = rng.standard_normal((6, 5, 4))
        vol = ImageVolume(data, (0.7, 0.7, 3.0))
        path = tmp_path / "vol64.nii.gz"
        save_volume(vol, path)
        back = load_volume(path)
        assert back.data.dtype == np.float64
        np.testing.assert_array_equal(back.data, data)

    def test_zero_mask(self, tmp_path):
        mask = LabelMask(np.zeros((8, 8, 4), dtype=np.uint8), (1.4, 1.4, 6.0))
        path = tmp_path / "zero.nii.gz"
        save_mask(mask, path)
        back = load_mask(path)
        assert back.foreground_count == 0
        np.testing.assert_array_equal(back.data, mask.data)

    def test_single_point_mask(self, tmp_path):
        data = np.zeros((8, 8, 4), dtype=np.uint8)
        data[3, 5, 2] = 1
        mask = LabelMask(data, (1.4, 1.4, 6.0))
        path = tmp_path / "pt.nii"
        save_mask(mask, path)
        back = load_mask(path)
        np.testing.assert_array_equal(back.data, data)
        assert back.spacing == (1.4, 1.4, 6.0)

    def test_random_mask_seed7(self, tmp_path):
        rng = np.random.default_rng(7)
        data = (rng.random((16, 16, 8)) < 0.3).astype(np.uint8)
        mask = LabelMask(data, (1.0, 1.0, 1.0))
        path = tmp_path / "rand.nii.gz"
        save_mask(mask, path)
        back = load_mask(path)
        np.testing.assert_array_equal(back.data, data)

    def test_header_preserved_through_resave(self, tmp_path):
        vol = ImageVolume(np.ones((4, 4, 4), dtype=np.float32), (2.0, 2.0, 2.0))
        p1 = tmp_path / "a.nii"
        save_volume(vol, p1)
        loaded = load_volume(p1)
        assert loaded.header is not None
        p2 = tmp_path / "b.nii"
        save_volume(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestFormatErrors:
    def test_4d_file_rejected(self, tmp_path):
        payload = np.zeros(2 * 2 * 2 * 3, dtype=np.float32).tobytes()
        raw = _raw_nifti((2, 2, 2, 3), 16, 4, payload, ndim=4)
        path = tmp_path / "fourd.nii"
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="3D"):
            load_volume(path)

    def test_bad_magic_rejected(self, tmp_path):
        payload = np.zeros(8, dtype=np.float32).tobytes()
        raw = _raw_nifti((2, 2, 2), 16, 4, payload, magic=b"xxx\x00")
        path = tmp_path / "bad.nii"
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="magic"):
            load_volume(path)

    def test_truncated_payload_rejected(self, tmp_path):
        payload = np.zeros(8, dtype=np.float32).tobytes()[:-4]
        raw = _raw_nifti((2, 2, 2), 16, 4, payload)
        path = tmp_path / "short.nii"
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="truncated"):
            load_volume(path)

    def test_not_nifti_rejected(self, tmp_path):
        path = tmp_path / "junk.nii"
        path.write_bytes(b"\x00" * 400)
        with pytest.raises(FormatError):
            load_volume(path)

    def test_nonpositive_spacing_rejected(self, tmp_path):
        payload = np.zeros(8, dtype=np.float32).tobytes()
        raw = _raw_nifti((2, 2, 2), 16, 4, payload, pixdim=(1.0, 0.0, 1.0))
        path = tmp_path / "flat.nii"
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="spacing"):
            load_volume(path)

    def test_nonbinary_mask_file_rejected(self, tmp_path):
        vol = ImageVolume(np.full((2, 2, 2), 3.0, dtype=np.float32), (1, 1, 1))
        path = tmp_path / "notmask.nii"
        save_volume(vol, path)
        with pytest.raises(FormatError, match="0, 1"):
            load_mask(path)


class TestForeignFiles:
    def test_big_endian_file_reads(self, tmp_path):
        data = np.arange(24, dtype=">f4").reshape((2, 3, 4), order="F")
        hdr = bytearray(348)
        struct.pack_into(">i", hdr, 0, 348)
        struct.pack_into(">8h", hdr, 40, 3, 2, 3, 4, 1, 1, 1, 1)
        struct.pack_into(">2h", hdr, 70, 16, 32)
        struct.pack_into(">8f", hdr, 76, 1.0, 1.4, 1.4, 6.0, 0, 0, 0, 0)
        struct.pack_into(">f", hdr, 108, 352.0)
        hdr[344:348] = b"n+1\x00"
        path = tmp_path / "be.nii"
        path.write_bytes(bytes(hdr) + b"\x00" * 4 + data.tobytes(order="F"))
        vol = load_volume(path)
        assert vol.spacing == (1.4, 1.4, 6.0)
        np.testing.assert_array_equal(vol.data, data.astype("<f4"))
        # resaving a byte-swapped source still yields a valid little-endian file
        out = tmp_path / "be_resaved.nii"
        save_volume(vol, out)
        again = load_volume(out)
        np.testing.assert_array_equal(again.data, vol.data)

    def test_scl_slope_applied(self, tmp_path):
        payload = np.arange(8, dtype=np.int16).tobytes()
        hdr = bytearray(_raw_nifti((2, 2, 2), 4, 2, payload))
        struct.pack_into("<2f", hdr, 112, 2.0, 10.0)
        path = tmp_path / "scaled.nii"
        path.write_bytes(bytes(hdr))
        vol = load_volume(path)
        expect = np.arange(8, dtype=np.float32).reshape((2, 2, 2), order="F") * 2 + 10
        np.testing.assert_array_equal(vol.data, expect)

    def test_integer_payload_widens(self, tmp_path):
        payload = np.arange(8, dtype=np.uint8).tobytes()
        raw = _raw_nifti((2, 2, 2), 2, 1, payload)
        path = tmp_path / "int.nii"
        path.write_bytes(raw)
        vol = load_volume(path)
        assert vol.data.dtype == np.float32

    def test_fortran_axis_order(self, tmp_path):
        # x must be the fastest on-disk axis: payload [0,1,...] maps to data[:,0,0] first
        payload = np.arange(24, dtype=np.float32).tobytes()
        raw = _raw_nifti((2, 3, 4), 16, 4, payload)
        path = tmp_path / "order.nii"
        path.write_bytes(raw)
        vol = load_volume(path)
        assert vol.data[0, 0, 0] == 0.0
        assert vol.data[1, 0, 0] == 1.0
        assert vol.data[0, 1, 0] == 2.0
        assert vol.data[0, 0, 1] == 6.0
