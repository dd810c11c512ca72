"""
Tests for training objectives.
"""

import math
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from errors import ContractError
from objectives import (
    DetectionLossConfig,
    SiLogConfig,
    ce_loss,
    ce_loss_from_logits,
    det_stage_losses,
    distill_seg_l1,
    filter_pseudo_boxes,
    silog_loss,
)


def _probs(*rows) -> torch.Tensor:
    """Single-row image of per-pixel distributions: (1, C, 1, N)."""
    return torch.tensor(rows, dtype=torch.float64).T.reshape(len(rows[0]), 1, len(rows)).unsqueeze(0)


class TestCrossEntropy:
    """ce_loss over probability maps."""

    def test_certain_prediction(self):
        assert float(ce_loss(_probs([0.0, 1.0]), torch.tensor([[[1]]]))) == 0.0

    def test_uniform_four_classes(self):
        assert float(ce_loss(_probs([0.25] * 4), torch.tensor([[[2]]]))) == pytest.approx(math.log(4))

    def test_batch_is_mean_of_pixels(self):
        probs = _probs([0.7, 0.3], [0.2, 0.8], [0.5, 0.5])
        labels = torch.tensor([[[0, 1, 0]]])
        expected = -(math.log(0.7) + math.log(0.8) + math.log(0.5)) / 3
        assert float(ce_loss(probs, labels)) == pytest.approx(expected)

    def test_ignored_pixels_excluded(self):
        probs = _probs([0.7, 0.3], [0.01, 0.99])
        labels = torch.tensor([[[0, 255]]])
        assert float(ce_loss(probs, labels)) == pytest.approx(-math.log(0.7))

    def test_moving_mass_toward_truth_lowers_loss(self):
        gen = torch.Generator().manual_seed(0)
        for _ in range(20):
            logits = torch.randn(1, 3, 2, 2, generator=gen, dtype=torch.float64)
            labels = torch.randint(0, 3, (1, 2, 2), generator=gen)
            probs = torch.softmax(logits, dim=1)
            onehot = torch.nn.functional.one_hot(labels, 3).permute(0, 3, 1, 2).double()
            sharper = 0.8 * probs + 0.2 * onehot
            assert float(ce_loss(sharper, labels)) < float(ce_loss(probs, labels))

    def test_logit_variant_agrees(self):
        logits = torch.randn(2, 4, 3, 3, dtype=torch.float64)
        labels = torch.randint(0, 4, (2, 3, 3))
        labels[0, 0, 0] = 255
        expected = ce_loss(torch.softmax(logits, dim=1), labels)
        assert float(ce_loss_from_logits(logits, labels)) == pytest.approx(float(expected), rel=1e-9)

    def test_all_ignored(self):
        with pytest.raises(ContractError):
            ce_loss(_probs([0.5, 0.5]), torch.tensor([[[255]]]))

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ContractError):
            ce_loss(_probs([0.5, 0.6]), torch.tensor([[[0]]]))

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            ce_loss(_probs([0.5, 0.5]), torch.tensor([[[2]]]))


class TestSiLog:
    """Scale-invariant log depth loss."""

    def test_exact_prediction(self):
        gt = torch.rand(1, 1, 4, 4, dtype=torch.float64) + 1
        assert float(silog_loss(gt.clone(), gt)) == 0.0

    def test_uniform_scale_error(self):
        gt = torch.rand(1, 1, 4, 4, dtype=torch.float64) + 1
        expected = abs(math.log(1.5)) / math.sqrt(2)
        assert float(silog_loss(1.5 * gt, gt)) == pytest.approx(expected, rel=1e-9)

    def test_full_scale_invariance(self):
        gt = torch.rand(1, 1, 4, 4, dtype=torch.float64) + 1
        assert float(silog_loss(3.0 * gt, gt, config=SiLogConfig(lam=1.0))) == pytest.approx(0.0, abs=1e-7)

    def test_joint_rescaling_invariant(self):
        gen = torch.Generator().manual_seed(0)
        pred = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64) + 0.5
        gt = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64) + 0.5
        assert float(silog_loss(7 * pred, 7 * gt)) == pytest.approx(float(silog_loss(pred, gt)), rel=1e-9)

    def test_mask_limits_pixels(self):
        gt = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        pred = torch.tensor([[2.0, 5.0]], dtype=torch.float64)
        assert float(silog_loss(pred, gt)) == pytest.approx(math.log(2) / math.sqrt(2))

    def test_gradient_matches_finite_differences(self, fd_check):
        gen = torch.Generator().manual_seed(1)
        pred = (torch.rand(1, 1, 8, 8, generator=gen, dtype=torch.float64) + 0.5).requires_grad_(True)
        gt = torch.rand(1, 1, 8, 8, generator=gen, dtype=torch.float64) + 0.5
        assert fd_check(lambda: silog_loss(pred, gt), pred, n_entries=8) <= 1e-5

    def test_zero_loss_has_zero_gradient(self):
        gt = torch.rand(4, dtype=torch.float64) + 1
        pred = gt.clone().requires_grad_(True)
        silog_loss(pred, gt).backward()
        assert torch.all(pred.grad == 0)

    def test_empty_mask(self):
        with pytest.raises(ContractError):
            silog_loss(torch.ones(4), torch.zeros(4))

    def test_non_positive_prediction(self):
        with pytest.raises(ContractError):
            silog_loss(torch.tensor([1.0, 0.0]), torch.ones(2))


class TestDetectionLosses:
    """Cascade classification and box losses."""

    def _single(self, probs, boxes, labels, gt_boxes, n_stages=1):
        config = DetectionLossConfig(n_stages=n_stages)
        return det_stage_losses([probs] * n_stages, [boxes] * n_stages, labels, gt_boxes, config)

    def test_perfect_predictions(self):
        boxes = torch.tensor([[0.0, 0.0, 4.0, 4.0], [1.0, 1.0, 2.0, 2.0]])
        losses = self._single(torch.tensor([1.0, 0.0]), boxes, torch.tensor([1, 0]), boxes)
        assert float(losses["total"]) == 0.0

    def test_box_offset(self):
        gt = torch.tensor([[0.0, 0.0, 4.0, 4.0]])
        losses = self._single(torch.tensor([1.0]), gt + torch.tensor([1.0, 0, 0, 0]), torch.tensor([1]), gt)
        assert float(losses["box_1"]) == 1.0

    def test_negatives_carry_no_box_loss(self):
        gt = torch.zeros(1, 4)
        losses = self._single(torch.tensor([0.0]), torch.ones(1, 4), torch.tensor([0]), gt)
        assert float(losses["box_1"]) == 0.0

    def test_stages_sum(self):
        probs = torch.tensor([0.7, 0.2])
        boxes = torch.tensor([[0.5, 0.0, 4.0, 4.0], [0.0, 0.0, 1.0, 1.0]])
        gt = torch.tensor([[0.0, 0.0, 4.0, 4.0], [0.0, 0.0, 2.0, 2.0]])
        labels = torch.tensor([1, 0])
        one = self._single(probs, boxes, labels, gt)
        three = self._single(probs, boxes, labels, gt, n_stages=3)
        assert float(three["total"]) == pytest.approx(3 * float(one["total"]))
        assert set(three) == {"cls_1", "box_1", "cls_2", "box_2", "cls_3", "box_3", "total"}

    def test_no_proposals(self):
        losses = self._single(torch.zeros(0), torch.zeros(0, 4), torch.zeros(0), torch.zeros(0, 4))
        assert float(losses["total"]) == 0.0

    def test_stage_count_mismatch(self):
        with pytest.raises(ContractError):
            det_stage_losses([torch.ones(1)], [torch.zeros(1, 4)], torch.ones(1), torch.zeros(1, 4))


class TestPseudoBoxes:
    """Teacher box filtering."""

    def test_strictly_above_threshold(self):
        boxes = torch.arange(12, dtype=torch.float32).reshape(3, 4)
        kept = filter_pseudo_boxes(boxes, torch.tensor([0.39, 0.40, 0.41]))
        assert torch.equal(kept, boxes[2:])

    def test_empty(self):
        assert tuple(filter_pseudo_boxes(torch.zeros(0, 4), torch.zeros(0)).shape) == (0, 4)

    def test_low_threshold_keeps_all(self):
        config = DetectionLossConfig(confidence_threshold=0.05)
        boxes = torch.ones(3, 4)
        assert len(filter_pseudo_boxes(boxes, torch.tensor([0.1, 0.5, 0.9]), config)) == 3

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            DetectionLossConfig(confidence_threshold=1.0)
        with pytest.raises(ValueError):
            DetectionLossConfig(confidence_threshold=0.0)
        with pytest.raises(ValueError):
            DetectionLossConfig(confidence_threshold=-0.1)


class TestSegDistillation:
    """L1 between student and teacher probabilities."""

    def test_identical(self):
        p = torch.softmax(torch.randn(1, 3, 4, 4), dim=1)
        assert float(distill_seg_l1(p, p)) == 0.0

    def test_opposite_one_hot(self):
        a = torch.tensor([1.0, 0.0]).reshape(1, 2, 1, 1)
        b = torch.tensor([0.0, 1.0]).reshape(1, 2, 1, 1)
        assert float(distill_seg_l1(a, b)) == 1.0
        assert float(distill_seg_l1(b, a)) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            distill_seg_l1(torch.zeros(1, 2, 2, 2), torch.zeros(1, 3, 2, 2))
