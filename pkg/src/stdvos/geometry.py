"""Normalized bounding-box algebra.

Boxes live in center-size form ``(cx, cy, w, h)`` normalized to the frame.
Scalar helpers operate on :class:`Box`; the ``*_xyxy`` helpers operate on
corner-form arrays in any consistent unit (pixels or normalized), and the
``torch`` variants are batched and differentiable for the training losses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

DEFAULT_L1_WEIGHT = 5.0
DEFAULT_GIOU_WEIGHT = 2.0


class InvalidBoxError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"degenerate box: w={self.w}, h={self.h}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise InvalidBoxError(f"center outside frame: ({self.cx}, {self.cy})")
        if self.w > 1.0 or self.h > 1.0:
            raise InvalidBoxError(f"box larger than frame: w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "Box":
        if not (x0 < x1 and y0 < y1):
            raise InvalidBoxError(f"corner box is not ordered: {(x0, y0, x1, y1)}")
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box":
        cx, cy, w, h = (float(v) for v in values)
        return cls(cx, cy, w, h)

    @classmethod
    def from_pixels(cls, x0, y0, x1, y1, width: int, height: int) -> "Box":
        return cls.from_corners(x0 / width, y0 / height, x1 / width, y1 / height)

    def corners(self) -> tuple[float, float, float, float]:
        hw, hh = self.w / 2, self.h / 2
        return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)

    def to_pixels(self, width: int, height: int) -> tuple[float, float, float, float]:
        x0, y0, x1, y1 = self.corners()
        return (x0 * width, y0 * height, x1 * width, y1 * height)

    def to_list(self) -> list[float]:
        return [self.cx, self.cy, self.w, self.h]

    def area(self) -> float:
        return self.w * self.h

    def clipped(self) -> "Box":
        """Clip the corner form to the unit frame and rebuild the box."""
        x0, y0, x1, y1 = self.corners()
        return Box.from_corners(max(x0, 0.0), max(y0, 0.0), min(x1, 1.0), min(y1, 1.0))


def clip_cxcywh(values: Sequence[float], min_size: float = 1e-4) -> Box:
    """Build a valid box from possibly out-of-frame center-size values."""
    cx, cy, w, h = (float(v) for v in values)
    x0 = min(max(cx - w / 2, 0.0), 1.0 - min_size)
    y0 = min(max(cy - h / 2, 0.0), 1.0 - min_size)
    x1 = max(min(cx + w / 2, 1.0), x0 + min_size)
    y1 = max(min(cy + h / 2, 1.0), y0 + min_size)
    return Box.from_corners(x0, y0, x1, y1)


# -- corner-form arrays (numpy) -------------------------------------------

def cxcywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=float)
    cx, cy, w, h = np.moveaxis(boxes, -1, 0)
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def xyxy_to_cxcywh(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=float)
    x0, y0, x1, y1 = np.moveaxis(boxes, -1, 0)
    return np.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], axis=-1)


def _check_xyxy(boxes: np.ndarray) -> None:
    if np.any(boxes[..., 2] <= boxes[..., 0]) or np.any(boxes[..., 3] <= boxes[..., 1]):
        raise InvalidBoxError("degenerate corner box")


def box_iou_xyxy(boxes1, boxes2) -> np.ndarray:
    """Pairwise IoU matrix of shape (N, M) for corner-form boxes."""
    b1 = np.atleast_2d(np.asarray(boxes1, dtype=float))
    b2 = np.atleast_2d(np.asarray(boxes2, dtype=float))
    _check_xyxy(b1)
    _check_xyxy(b2)
    inter, union = _inter_union(b1, b2)
    return inter / union


def generalized_box_iou_xyxy(boxes1, boxes2) -> np.ndarray:
    b1 = np.atleast_2d(np.asarray(boxes1, dtype=float))
    b2 = np.atleast_2d(np.asarray(boxes2, dtype=float))
    _check_xyxy(b1)
    _check_xyxy(b2)
    inter, union = _inter_union(b1, b2)
    lt = np.minimum(b1[:, None, :2], b2[None, :, :2])
    rb = np.maximum(b1[:, None, 2:], b2[None, :, 2:])
    enclosing = np.prod(rb - lt, axis=-1)
    return inter / union - (enclosing - union) / enclosing


def _inter_union(b1: np.ndarray, b2: np.ndarray):
    area1 = (b1[:, 2] - b1[:, 0]) * (b1[:, 3] - b1[:, 1])
    area2 = (b2[:, 2] - b2[:, 0]) * (b2[:, 3] - b2[:, 1])
    lt = np.maximum(b1[:, None, :2], b2[None, :, :2])
    rb = np.minimum(b1[:, None, 2:], b2[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    return inter, area1[:, None] + area2[None, :] - inter


# -- scalar Box API ---------------------------------------------------------

def iou(a: Box, b: Box) -> float:
    return float(box_iou_xyxy(a.corners(), b.corners())[0, 0])


def giou(a: Box, b: Box) -> float:
    return float(generalized_box_iou_xyxy(a.corners(), b.corners())[0, 0])


def box_loss(pred: Box, gt: Box, l1_weight: float = DEFAULT_L1_WEIGHT,
             giou_weight: float = DEFAULT_GIOU_WEIGHT) -> float:
    """Weighted L1 (mean over cx, cy, w, h) plus GIoU loss for one pair."""
    if l1_weight < 0 or giou_weight < 0:
        raise ValueError("loss weights must be non-negative")
    l1 = float(np.mean(np.abs(np.subtract(pred.to_list(), gt.to_list()))))
    return l1_weight * l1 + giou_weight * (1.0 - giou(pred, gt))


# -- batched torch ops (differentiable) -----------------------------------

def box_cxcywh_to_xyxy_t(x: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = x.unbind(-1)
    return torch.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=-1)


def generalized_box_iou_t(boxes1: torch.Tensor, boxes2: torch.Tensor) -> torch.Tensor:
    """Pairwise GIoU (N, M) for corner-form tensors."""
    area1 = (boxes1[:, 2] - boxes1[:, 0]) * (boxes1[:, 3] - boxes1[:, 1])
    area2 = (boxes2[:, 2] - boxes2[:, 0]) * (boxes2[:, 3] - boxes2[:, 1])
    lt = torch.max(boxes1[:, None, :2], boxes2[None, :, :2])
    rb = torch.min(boxes1[:, None, 2:], boxes2[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area1[:, None] + area2[None, :] - inter
    lt_c = torch.min(boxes1[:, None, :2], boxes2[None, :, :2])
    rb_c = torch.max(boxes1[:, None, 2:], boxes2[None, :, 2:])
    enclosing = (rb_c - lt_c).clamp(min=0).prod(-1)
    return inter / union - (enclosing - union) / enclosing


def paired_giou_t(boxes1: torch.Tensor, boxes2: torch.Tensor) -> torch.Tensor:
    """Element-wise GIoU for two aligned (N, 4) corner-form tensors."""
    area1 = (boxes1[:, 2] - boxes1[:, 0]) * (boxes1[:, 3] - boxes1[:, 1])
    area2 = (boxes2[:, 2] - boxes2[:, 0]) * (boxes2[:, 3] - boxes2[:, 1])
    lt = torch.max(boxes1[:, :2], boxes2[:, :2])
    rb = torch.min(boxes1[:, 2:], boxes2[:, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[:, 0] * wh[:, 1]
    union = area1 + area2 - inter
    enclosing = (torch.max(boxes1[:, 2:], boxes2[:, 2:])
                 - torch.min(boxes1[:, :2], boxes2[:, :2])).prod(-1)
    return inter / union - (enclosing - union) / enclosing
