"""
Tests for evaluation metrics.
"""

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from errors import ContractError
from metrics import ConfusionMatrix, depth_metrics, disagreement_rate, miou


def _brute_force_iou(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> list[float]:
    ious = []
    for c in range(n_classes):
        tp = fp = fn = 0
        for p, g in zip(pred.ravel(), gt.ravel()):
            tp += int(p == c and g == c)
            fp += int(p == c and g != c)
            fn += int(p != c and g == c)
        ious.append(tp / (tp + fp + fn) if tp + fp + fn else float("nan"))
    return ious


class TestMIoU:
    """Global-confusion mean intersection over union."""

    def test_perfect(self):
        labels = np.array([[0, 1], [2, 3]])
        per_class, mean = miou(labels, labels, 4)
        assert per_class == [1.0, 1.0, 1.0, 1.0]
        assert mean == 1.0

    def test_two_by_two_example(self):
        pred = np.array([[0, 0], [1, 1]])
        gt = np.array([[0, 1], [1, 1]])
        per_class, mean = miou(pred, gt, 2)
        assert per_class == pytest.approx([0.5, 2 / 3])
        assert mean == pytest.approx(0.5833, abs=1e-4)

    def test_absent_class_excluded(self):
        pred = np.array([[0, 0], [1, 1]])
        gt = np.array([[0, 1], [1, 1]])
        per_class, mean = miou(pred, gt, 3)
        assert np.isnan(per_class[2])
        assert mean == pytest.approx((0.5 + 2 / 3) / 2)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            pred = rng.integers(0, 4, (8, 8))
            gt = rng.integers(0, 4, (8, 8))
            per_class, _ = miou(pred, gt, 4)
            expected = _brute_force_iou(pred, gt, 4)
            np.testing.assert_array_equal(per_class, expected)

    def test_accumulates_globally(self):
        cm = ConfusionMatrix(2)
        cm.update(np.array([0, 0]), np.array([0, 1]))
        cm.update(torch.tensor([1, 1]), torch.tensor([1, 1]))
        per_class, _ = cm.iou()
        assert per_class == pytest.approx([0.5, 2 / 3])
        assert cm.total == 4
        assert cm.pixel_accuracy() == 0.75

    def test_ignore_index(self):
        per_class, _ = miou(np.array([1, 0]), np.array([255, 0]), 2)
        assert per_class[0] == 1.0

    def test_no_valid_pixels(self):
        with pytest.raises(ContractError):
            miou(np.array([0]), np.array([255]), 2)

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            miou(np.array([5]), np.array([0]), 2)


class TestDepthMetrics:
    """Depth error suite."""

    def test_exact(self):
        gt = np.array([1.0, 2.0, 4.0])
        result = depth_metrics(gt.copy(), gt)
        assert (result.delta1, result.delta2, result.delta3) == (1.0, 1.0, 1.0)
        assert (result.rel, result.rms, result.rmslog) == (0.0, 0.0, 0.0)

    def test_scaled_by_threshold(self):
        gt = np.array([1.0, 2.0, 4.0, 8.0])
        result = depth_metrics(1.25 * gt, gt)
        assert result.delta1 == 0.0
        assert result.delta2 == 1.0 and result.delta3 == 1.0
        assert result.rel == pytest.approx(0.25)

    def test_error_formulas(self):
        pred = np.array([2.0, 3.0])
        gt = np.array([1.0, 4.0])
        result = depth_metrics(pred, gt)
        assert result.rel == pytest.approx((1.0 + 0.25) / 2)
        assert result.rms == pytest.approx(1.0)
        assert result.rmslog == pytest.approx(np.sqrt((np.log(2) ** 2 + np.log(0.75) ** 2) / 2))

    def test_deltas_ordered_and_order_free(self):
        rng = np.random.default_rng(0)
        pred, gt = rng.uniform(0.5, 10, 64), rng.uniform(0.5, 10, 64)
        result = depth_metrics(pred, gt)
        assert result.delta1 <= result.delta2 <= result.delta3
        perm = rng.permutation(64)
        assert depth_metrics(pred[perm], gt[perm]).to_dict() == pytest.approx(result.to_dict())

    def test_mask_and_missing_gt(self):
        pred = np.array([1.0, 100.0, 100.0])
        gt = np.array([1.0, 0.0, 2.0])
        result = depth_metrics(pred, gt, valid_mask=np.array([True, True, False]))
        assert result.rms == 0.0

    def test_empty_mask(self):
        with pytest.raises(ContractError):
            depth_metrics(np.ones(2), np.zeros(2))


class TestDisagreement:
    """Argmax disagreement between student and teacher."""

    def test_rate(self):
        student = torch.tensor([[0.9, 0.1], [0.2, 0.8]]).T.reshape(1, 2, 1, 2)
        teacher = torch.tensor([[0.6, 0.4], [0.7, 0.3]]).T.reshape(1, 2, 1, 2)
        assert disagreement_rate(student, teacher) == 0.5
        assert disagreement_rate(student, student) == 0.0
