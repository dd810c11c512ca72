"""
Evaluation metrics: global-confusion MIoU, depth error suite and
student/teacher disagreement.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.metrics import confusion_matrix

from errors import ContractError
from objectives import DEFAULT_IGNORE_INDEX


def _to_numpy(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


class ConfusionMatrix:
    """
    Global confusion matrix accumulated over an evaluation split.

    Rows are ground-truth classes, columns predicted classes.
    """

    def __init__(self, n_classes: int, ignore_index: int = DEFAULT_IGNORE_INDEX):
        self.n_classes = n_classes
        self.ignore_index = ignore_index
        self.matrix = np.zeros((n_classes, n_classes), dtype=np.int64)

    def update(self, pred_labels, gt_labels) -> None:
        pred = _to_numpy(pred_labels).ravel()
        gt = _to_numpy(gt_labels).ravel()
        if pred.shape != gt.shape:
            raise ContractError(f"prediction and label counts differ: {pred.size} vs {gt.size}")
        keep = gt != self.ignore_index
        pred, gt = pred[keep], gt[keep]
        for name, arr in (("gt", gt), ("pred", pred)):
            if arr.size and (arr.min() < 0 or arr.max() >= self.n_classes):
                raise ContractError(f"{name} label outside [0, {self.n_classes})")
        if gt.size:
            self.matrix += confusion_matrix(gt, pred, labels=np.arange(self.n_classes))

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def iou(self) -> tuple[list[float], float]:
        """
        Per-class IoU and their mean.

        Classes absent from both prediction and ground truth get NaN and are
        excluded from the mean.
        """
        if self.total == 0:
            raise ContractError("no valid pixels to evaluate")
        tp = np.diag(self.matrix).astype(np.float64)
        union = self.matrix.sum(axis=0) + self.matrix.sum(axis=1) - tp
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class = np.where(union > 0, tp / union, np.nan)
        return [float(v) for v in per_class], float(np.nanmean(per_class))

    def pixel_accuracy(self) -> float:
        return float(np.trace(self.matrix) / max(self.total, 1))


def miou(
    pred_labels, gt_labels, n_classes: int, ignore_index: int = DEFAULT_IGNORE_INDEX
) -> tuple[list[float], float]:
    cm = ConfusionMatrix(n_classes, ignore_index)
    cm.update(pred_labels, gt_labels)
    return cm.iou()


@dataclass
class DepthMetrics:
    delta1: float
    delta2: float
    delta3: float
    rel: float
    rms: float
    rmslog: float

    def to_dict(self) -> dict[str, float]:
        return {
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
            "rel": self.rel,
            "rms": self.rms,
            "rmslog": self.rmslog,
        }


def depth_metrics(pred, gt, valid_mask=None) -> DepthMetrics:
    """
    Standard monocular depth suite over pixels where the mask holds.

    REL divides by the ground truth, and the delta thresholds are strict.
    """
    pred = _to_numpy(pred).astype(np.float64)
    gt = _to_numpy(gt).astype(np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"pred {pred.shape} and gt {gt.shape} differ")
    mask = gt > 0 if valid_mask is None else _to_numpy(valid_mask).astype(bool) & (gt > 0)
    if not mask.any():
        raise ContractError("depth_metrics needs at least one valid pixel")
    d, d_hat = pred[mask], gt[mask]
    if (d <= 0).any():
        raise ContractError("depth predictions must be strictly positive")

    ratio = np.maximum(d / d_hat, d_hat / d)
    return DepthMetrics(
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        rel=float(np.mean(np.abs(d - d_hat) / d_hat)),
        rms=float(np.sqrt(np.mean((d - d_hat) ** 2))),
        rmslog=float(np.sqrt(np.mean((np.log(d) - np.log(d_hat)) ** 2))),
    )


def disagreement_rate(student_probs, teacher_probs) -> float:
    """Fraction of pixels whose argmax class differs between student and teacher."""
    student = _to_numpy(student_probs)
    teacher = _to_numpy(teacher_probs)
    if student.shape != teacher.shape:
        raise ContractError(f"student {student.shape} and teacher {teacher.shape} differ")
    return float(np.mean(student.argmax(axis=1) != teacher.argmax(axis=1)))
