"""Evaluation metrics: MPJPE, pixel accuracy, IoU."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputWarning, InputError
from .raster import Mask


@dataclass(frozen=True)
class JointSet:
    """3D joint positions in millimeters."""

    positions: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise InputError(f"positions must be (Nj, 3), got {p.shape}")
        if not np.isfinite(p).all():
            raise InputError("joint positions must be finite")
        object.__setattr__(self, "positions", p)

    def __len__(self) -> int:
        return self.positions.shape[0]


def mpjpe(pred: JointSet, gt: JointSet, root_align: bool = False) -> float:
    """Mean Euclidean joint distance in millimeters.

    With root_align both sets are expressed relative to their joint 0 first.
    """
    if len(pred) != len(gt):
        raise InputError(f"joint counts differ: {len(pred)} vs {len(gt)}")
    a, b = pred.positions, gt.positions
    if root_align:
        a = a - a[0]
        b = b - b[0]
    return float(np.linalg.norm(a - b, axis=1).mean())


def _check_same_size(pred: Mask, gt: Mask):
    if pred.pixels.shape != gt.pixels.shape:
        raise InputError(
            f"mask sizes differ: {pred.pixels.shape} vs {gt.pixels.shape}")


def pixel_accuracy(pred: Mask, gt: Mask) -> float:
    """Fraction of pixels classified correctly (foreground and background)."""
    _check_same_size(pred, gt)
    return float((pred.pixels == gt.pixels).mean())


def iou(pred: Mask, gt: Mask) -> float:
    """Intersection over union; two empty masks compare as 1.0."""
    _check_same_size(pred, gt)
    union = np.logical_or(pred.pixels, gt.pixels).sum()
    if union == 0:
        warnings.warn("both masks empty, IoU defined as 1.0", DegenerateInputWarning)
        return 1.0
    inter = np.logical_and(pred.pixels, gt.pixels).sum()
    return float(inter / union)
