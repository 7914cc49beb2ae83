"""Mask assembly and IoU scoring against hand-counted fixtures."""

import numpy as np
import pytest

from coninfer.exceptions import LabelRangeError, ShapeError
from coninfer.segmap import (
    PatchGrid,
    accumulate_confusion,
    assemble_masks,
    evaluation_report,
    iou_scores,
)


def one_hot(labels, c):
    return np.eye(c)[np.asarray(labels)]


class TestAssembleMasks:
    def test_block_fill(self):
        Z = one_hot([0, 1, 1, 0], 2)
        (mask,) = assemble_masks(Z, PatchGrid(2, 2, 2))
        expect = [[0, 0, 1, 1], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0]]
        np.testing.assert_array_equal(mask, expect)
        assert mask.dtype == np.uint8

    def test_tie_breaks_to_lowest_class(self):
        (mask,) = assemble_masks(np.array([[0.5, 0.5]]), PatchGrid(1, 1, 1))
        assert mask[0, 0] == 0

    def test_full_tile_resolution(self):
        Z = np.full((784, 3), 1 / 3)
        (mask,) = assemble_masks(Z, PatchGrid(28, 28, 16))
        assert mask.shape == (448, 448)

    def test_multiple_tiles(self):
        Z = one_hot([0, 0, 1, 1], 2)
        masks = assemble_masks(Z, PatchGrid(1, 2, 1, n_tiles=2))
        assert len(masks) == 2
        np.testing.assert_array_equal(masks[0], [[0, 0]])
        np.testing.assert_array_equal(masks[1], [[1, 1]])

    def test_only_argmax_classes_appear(self):
        rng = np.random.default_rng(0)
        Z = rng.dirichlet(np.ones(5), size=36)
        (mask,) = assemble_masks(Z, PatchGrid(6, 6, 3))
        assert set(np.unique(mask)) <= set(Z.argmax(axis=1))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            assemble_masks(np.ones((5, 2)) / 2, PatchGrid(2, 2, 4))

    def test_tile_index(self):
        g = PatchGrid(2, 2, 1, n_tiles=3)
        np.testing.assert_array_equal(g.tile_index, np.repeat([0, 1, 2], 4))


class TestConfusion:
    def test_perfect_is_diagonal(self):
        m = np.array([[0, 1], [2, 0]])
        cm = accumulate_confusion(m, m, 3)
        np.testing.assert_array_equal(cm, np.diag([2, 1, 1]))

    def test_hand_count(self):
        gt = np.array([[0, 0], [1, 1]])
        pred = np.array([[0, 1], [1, 1]])
        cm = accumulate_confusion(pred, gt, 2)
        np.testing.assert_array_equal(cm, [[1, 1], [0, 2]])

    def test_ignore_label_skips_exactly(self):
        gt = np.array([[0, 255], [1, 255]])
        pred = np.array([[0, 1], [0, 0]])
        cm = accumulate_confusion(pred, gt, 2, ignore_label=255)
        assert cm.sum() == 2
        np.testing.assert_array_equal(cm, [[1, 0], [1, 0]])

    def test_out_of_range_label(self):
        with pytest.raises(LabelRangeError):
            accumulate_confusion(np.array([[5]]), np.array([[0]]), 2)

    def test_out_of_range_gt(self):
        with pytest.raises(LabelRangeError):
            accumulate_confusion(np.array([[0]]), np.array([[7]]), 2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            accumulate_confusion(np.zeros((2, 2)), np.zeros((2, 3)), 2)

    def test_merge_by_addition(self):
        rng = np.random.default_rng(1)
        gt = rng.integers(0, 3, size=(8, 8))
        pred = rng.integers(0, 3, size=(8, 8))
        whole = accumulate_confusion(pred, gt, 3)
        parts = accumulate_confusion(pred[:4], gt[:4], 3) + accumulate_confusion(
            pred[4:], gt[4:], 3
        )
        np.testing.assert_array_equal(whole, parts)


class TestIouScores:
    def test_hand_formula(self):
        cm = np.array([[1, 1], [0, 2]])
        per_class, miou = iou_scores(cm)
        assert per_class[0] == 1 / 2
        assert per_class[1] == 2 / 3
        assert miou == (1 / 2 + 2 / 3) / 2

    def test_perfect(self):
        per_class, miou = iou_scores(np.diag([5, 3, 9]))
        np.testing.assert_array_equal(per_class, [1.0, 1.0, 1.0])
        assert miou == 1.0

    def test_disjoint_foreground(self):
        # gt all class 1, pred all class 0
        cm = accumulate_confusion(np.zeros((2, 2), int), np.ones((2, 2), int), 2)
        per_class, _ = iou_scores(cm)
        assert per_class[1] == 0.0

    def test_zero_union_excluded(self):
        cm = np.array([[4, 0, 0], [0, 4, 0], [0, 0, 0]])
        per_class, miou = iou_scores(cm)
        assert np.isnan(per_class[2])
        assert miou == 1.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        gt = rng.integers(0, 4, size=(10, 10))
        pred = rng.integers(0, 4, size=(10, 10))
        _, miou = iou_scores(accumulate_confusion(pred, gt, 4))
        perm = np.array([2, 3, 1, 0])
        _, miou_p = iou_scores(accumulate_confusion(perm[pred], perm[gt], 4))
        assert miou == pytest.approx(miou_p, abs=1e-12)

    def test_report_structure(self):
        cm = np.array([[1, 1], [0, 2]])
        rep = evaluation_report(cm, ["water", "road"])
        assert rep["miou"] == pytest.approx(7 / 12)
        assert rep["per_class_iou"]["water"] == 0.5
        assert rep["pixel_counts"]["total"] == 4
        assert rep["excluded_classes"] == []
