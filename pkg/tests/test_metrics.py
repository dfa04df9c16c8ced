import numpy as np
import pytest

from patseg.errors import EmptyMaskError
from patseg.metrics import (
    EvalResult,
    dice_score,
    evaluate_pair,
    hausdorff_mm,
    patv_cm3,
    read_eval_csv,
    write_eval_csv,
)
from patseg.volumes import LabelMask

from oracles import hausdorff_brute_force

SP = (1.4, 1.4, 6.0)


def _mask(data, spacing=SP):
    return LabelMask(np.asarray(data, dtype=np.uint8), spacing)


def _random_mask(rng, dims=(6, 6, 3), p=0.3, spacing=SP):
    data = (rng.random(dims) < p).astype(np.uint8)
    if data.sum() == 0:
        data[tuple(d // 2 for d in dims)] = 1
    return _mask(data, spacing)


class TestDice:
    def test_identical_masks(self):
        rng = np.random.default_rng(0)
        a = _random_mask(rng)
        assert dice_score(a, a) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((6, 6, 3)); a[0, 0, 0] = 1
        b = np.zeros((6, 6, 3)); b[5, 5, 2] = 1
        assert dice_score(_mask(a), _mask(b)) == 0.0

    def test_half_overlap(self):
        a = np.zeros((10, 10, 2)); b = np.zeros((10, 10, 2))
        a.ravel()[:100] = 1          # |a| = 100
        b.ravel()[50:150] = 1        # |b| = 100, overlap 50
        assert dice_score(_mask(a), _mask(b)) == 0.5

    def test_both_empty_is_one(self):
        z = _mask(np.zeros((4, 4, 2)))
        assert dice_score(z, z) == 1.0

    def test_one_empty_is_zero(self):
        z = np.zeros((4, 4, 2)); o = z.copy(); o[1, 1, 1] = 1
        assert dice_score(_mask(z), _mask(o)) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            a, b = _random_mask(rng), _random_mask(rng)
            assert dice_score(a, b) == dice_score(b, a)

    def test_misaligned_rejected(self):
        a = _mask(np.zeros((4, 4, 2)))
        b = _mask(np.zeros((4, 4, 3)))
        with pytest.raises(ValueError, match="aligned"):
            dice_score(a, b)


class TestHausdorff:
    def test_identical_masks_zero(self):
        rng = np.random.default_rng(2)
        a = _random_mask(rng)
        assert hausdorff_mm(a, a) == 0.0

    def test_single_voxel_pair(self):
        a = np.zeros((4, 4, 2)); a[0, 0, 0] = 1
        b = np.zeros((4, 4, 2)); b[1, 0, 0] = 1
        assert hausdorff_mm(_mask(a), _mask(b)) == pytest.approx(1.4, rel=1e-12)

    def test_matches_brute_force_exactly(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            a = _random_mask(rng, p=float(rng.uniform(0.1, 0.6)))
            b = _random_mask(rng, p=float(rng.uniform(0.1, 0.6)))
            got = hausdorff_mm(a, b)
            want = hausdorff_brute_force(a.data, b.data, SP)
            assert got == want

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a, b = _random_mask(rng), _random_mask(rng)
            assert hausdorff_mm(a, b) == hausdorff_mm(b, a)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(12)
        for _ in range(15):
            a, b, c = (_random_mask(rng) for _ in range(3))
            hab = hausdorff_mm(a, b)
            hbc = hausdorff_mm(b, c)
            hac = hausdorff_mm(a, c)
            assert hac <= hab + hbc + 1e-9

    def test_empty_mask_rejected(self):
        z = _mask(np.zeros((4, 4, 2)))
        o = np.zeros((4, 4, 2)); o[1, 1, 1] = 1
        with pytest.raises(EmptyMaskError, match="Hausdorff"):
            hausdorff_mm(z, _mask(o))

    def test_spacing_override(self):
        a = np.zeros((4, 4, 2)); a[0, 0, 0] = 1
        b = np.zeros((4, 4, 2)); b[0, 0, 1] = 1
        d = hausdorff_mm(_mask(a), _mask(b), spacing=(1.0, 1.0, 2.5))
        assert d == pytest.approx(2.5, rel=1e-12)


class TestPatv:
    def test_empty_mask(self):
        assert patv_cm3(_mask(np.zeros((4, 4, 2)))) == 0.0

    def test_thousand_voxels_scanner_spacing(self):
        data = np.zeros((20, 25, 2)); data[:, :, 0] = 1  # 500 voxels
        data[:, :, 1] = 1                                # 1000 total
        got = patv_cm3(_mask(data, SP))
        assert got == pytest.approx(11.76, rel=1e-12)

    def test_additive_over_disjoint_masks(self):
        rng = np.random.default_rng(6)
        whole = (rng.random((10, 10, 4)) < 0.4).astype(np.uint8)
        part = np.zeros_like(whole)
        part[:5] = whole[:5]
        rest = whole - part
        total = patv_cm3(_mask(whole))
        assert patv_cm3(_mask(part)) + patv_cm3(_mask(rest)) == pytest.approx(
            total, rel=1e-12
        )

    def test_spacing_override(self):
        data = np.zeros((4, 4, 2)); data[0, 0, 0] = 1
        assert patv_cm3(_mask(data), spacing=(10.0, 10.0, 10.0)) == pytest.approx(1.0)


class TestEvalResult:
    def test_rejects_out_of_range_dice(self):
        with pytest.raises(ValueError):
            EvalResult(dice=1.5, hausdorff_mm=0.0, patv_pred_cm3=0, patv_true_cm3=0)

    def test_rejects_negative_hausdorff(self):
        with pytest.raises(ValueError):
            EvalResult(dice=0.5, hausdorff_mm=-1.0, patv_pred_cm3=0, patv_true_cm3=0)

    def test_evaluate_pair_consistent_with_parts(self):
        rng = np.random.default_rng(13)
        pred, truth = _random_mask(rng), _random_mask(rng)
        res = evaluate_pair(pred, truth)
        assert res.dice == dice_score(pred, truth)
        assert res.hausdorff_mm == hausdorff_mm(pred, truth)
        assert res.patv_pred_cm3 == patv_cm3(pred)
        assert res.patv_true_cm3 == patv_cm3(truth)

    def test_evaluate_pair_with_collapsed_prediction(self):
        # an all-background prediction must still score, not raise
        empty = _mask(np.zeros((4, 4, 2), dtype=np.uint8))
        truth = _mask(np.ones((4, 4, 2), dtype=np.uint8))
        res = evaluate_pair(empty, truth)
        assert res.dice == 0.0
        assert np.isnan(res.hausdorff_mm)
        assert res.patv_pred_cm3 == 0.0

    def test_evaluate_pair_both_empty(self):
        empty = _mask(np.zeros((4, 4, 2), dtype=np.uint8))
        res = evaluate_pair(empty, empty)
        assert res.dice == 1.0
        assert res.hausdorff_mm == 0.0


class TestEvalCsv:
    def test_round_trip_and_byte_stability(self, tmp_path):
        rng = np.random.default_rng(21)
        rows = []
        for i in range(3):
            pred, truth = _random_mask(rng), _random_mask(rng)
            rows.append((f"case_{i:03d}", evaluate_pair(pred, truth)))
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_eval_csv(rows, p1)
        write_eval_csv(rows, p2)
        assert p1.read_bytes() == p2.read_bytes()
        back = read_eval_csv(p1)
        assert [cid for cid, _ in back] == [cid for cid, _ in rows]
        for (_, got), (_, want) in zip(back, rows):
            assert got == want  # repr round-trips floats exactly

    def test_header_checked_on_read(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("nope\n1,2,3,4,5\n")
        with pytest.raises(ValueError, match="header"):
            read_eval_csv(bad)
