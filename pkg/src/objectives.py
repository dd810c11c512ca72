"""
Training objectives: segmentation cross-entropy, SiLog depth loss,
cascade detection losses, pseudo-box filtering and segmentation distillation.
"""

import torch
from pydantic import BaseModel, ConfigDict, Field

from errors import ContractError

PROB_ROW_TOLERANCE = 1e-5
DEFAULT_IGNORE_INDEX = 255


class SiLogConfig(BaseModel):
    """Balance between the squared-error and scale terms of SiLog."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lam: float = Field(0.5, ge=0.0, le=1.0)


class DetectionLossConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_stages: int = Field(3, ge=1)
    confidence_threshold: float = Field(0.4, gt=0.0, lt=1.0)


def _valid_pixels(labels: torch.Tensor, ignore_index: int) -> torch.Tensor:
    valid = labels != ignore_index
    if not valid.any():
        raise ContractError("every pixel is ignored; loss is undefined")
    return valid


def ce_loss(probs: torch.Tensor, labels: torch.Tensor, ignore_index: int = DEFAULT_IGNORE_INDEX) -> torch.Tensor:
    """
    Mean negative log-probability of the true class over non-ignored pixels.

    Args:
        probs: (B, n_classes, H, W) per-pixel class distributions
        labels: (B, H, W) class indices or ignore_index
    """
    if probs.dim() != labels.dim() + 1 or probs.shape[0] != labels.shape[0] or probs.shape[2:] != labels.shape[1:]:
        raise ContractError(f"probs {tuple(probs.shape)} incompatible with labels {tuple(labels.shape)}")
    row_sums = probs.sum(dim=1)
    if not torch.allclose(row_sums, torch.ones_like(row_sums), atol=PROB_ROW_TOLERANCE, rtol=0.0):
        raise ContractError("probability rows must sum to 1")

    valid = _valid_pixels(labels, ignore_index)
    n_classes = probs.shape[1]
    if (labels[valid] < 0).any() or (labels[valid] >= n_classes).any():
        raise ContractError(f"labels must lie in [0, {n_classes}) or equal ignore_index")

    safe_labels = torch.where(valid, labels, torch.zeros_like(labels)).long()
    p_true = probs.gather(1, safe_labels.unsqueeze(1)).squeeze(1)
    return -torch.log(p_true[valid]).mean()


def ce_loss_from_logits(
    logits: torch.Tensor, labels: torch.Tensor, ignore_index: int = DEFAULT_IGNORE_INDEX
) -> torch.Tensor:
    """Same value as ce_loss(softmax(logits)), computed in the log domain."""
    _valid_pixels(labels, ignore_index)
    return torch.nn.functional.cross_entropy(logits, labels.long(), ignore_index=ignore_index)


def silog_loss(
    pred: torch.Tensor,
    gt: torch.Tensor,
    valid_mask: torch.Tensor | None = None,
    config: SiLogConfig | None = None,
) -> torch.Tensor:
    """
    sqrt(mean(g^2) - lam * mean(g)^2) with g = log(pred) - log(gt) over valid pixels.

    The square root is taken of a clamped variance and defined as 0 at 0, so
    pred = gt has a zero (not NaN) gradient.
    """
    config = config or SiLogConfig()
    if pred.shape != gt.shape:
        raise ContractError(f"pred {tuple(pred.shape)} and gt {tuple(gt.shape)} differ")
    if valid_mask is None:
        valid_mask = gt > 0
    valid_mask = valid_mask.bool()
    if not valid_mask.any():
        raise ContractError("silog_loss needs at least one valid pixel")
    if (pred <= 0).any():
        raise ContractError("depth predictions must be strictly positive")
    if (gt[valid_mask] <= 0).any():
        raise ContractError("ground truth must be positive on the valid mask")

    g = torch.log(pred[valid_mask]) - torch.log(gt[valid_mask])
    variance = (g**2).mean() - config.lam * g.mean() ** 2
    tiny = torch.finfo(variance.dtype).tiny
    return torch.where(variance > 0, torch.sqrt(variance.clamp_min(tiny)), torch.zeros_like(variance))


def _stage_loss(
    probs: torch.Tensor, boxes: torch.Tensor, gt_labels: torch.Tensor, gt_boxes: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    if probs.numel() == 0:
        zero = probs.new_zeros(())
        return zero, zero
    if boxes.shape[-1] != 4 or gt_boxes.shape[-1] != 4:
        raise ContractError("boxes must be 4-vectors")
    y = gt_labels.to(probs.dtype)
    if not torch.all((y == 0) | (y == 1)):
        raise ContractError("proposal labels must be binary")
    cls = -(torch.special.xlogy(y, probs) + torch.special.xlogy(1 - y, 1 - probs)).sum()
    positive = y == 1
    box = (boxes[positive] - gt_boxes[positive]).abs().sum()
    return cls, box


def det_stage_losses(
    pred_probs: list[torch.Tensor],
    pred_boxes: list[torch.Tensor],
    gt_labels: torch.Tensor,
    gt_boxes: torch.Tensor,
    config: DetectionLossConfig | None = None,
) -> dict[str, torch.Tensor]:
    """
    Cascade detection losses summed over stages.

    Classification is binary cross-entropy summed over proposals; box
    regression is the unnormalized L1 distance summed over positive proposals.
    Returns per-stage cls/box terms and their total.
    """
    config = config or DetectionLossConfig()
    if len(pred_probs) != config.n_stages or len(pred_boxes) != config.n_stages:
        raise ContractError(f"expected {config.n_stages} stages, got {len(pred_probs)} / {len(pred_boxes)}")

    losses: dict[str, torch.Tensor] = {}
    total = gt_boxes.new_zeros(())
    for k, (probs, boxes) in enumerate(zip(pred_probs, pred_boxes), start=1):
        cls, box = _stage_loss(probs, boxes, gt_labels, gt_boxes)
        losses[f"cls_{k}"] = cls
        losses[f"box_{k}"] = box
        total = total + cls + box
    losses["total"] = total
    return losses


def filter_pseudo_boxes(
    boxes: torch.Tensor, scores: torch.Tensor, config: DetectionLossConfig | None = None
) -> torch.Tensor:
    """Keep teacher boxes scoring strictly above the confidence threshold."""
    config = config or DetectionLossConfig()
    if boxes.numel() == 0:
        return boxes.reshape(0, 4)
    if ((scores < 0) | (scores > 1)).any():
        raise ContractError("scores must lie in [0, 1]")
    return boxes[scores > config.confidence_threshold]


def distill_seg_l1(student_probs: torch.Tensor, teacher_probs: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over every pixel-class entry."""
    if student_probs.shape != teacher_probs.shape:
        raise ContractError(
            f"student {tuple(student_probs.shape)} and teacher {tuple(teacher_probs.shape)} differ"
        )
    return (student_probs - teacher_probs).abs().mean()
