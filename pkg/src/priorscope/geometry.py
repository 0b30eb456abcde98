"""Axis-aligned box arithmetic and the stride/IoU trade-off.

Boxes are continuous rectangles in input-image pixels; area is
``(x_max - x_min) * (y_max - y_min)`` with no +1 pixel convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates {vals}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {vals}")

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "BoundingBox":
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    @classmethod
    def from_center(cls, cx, cy, w, h) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def as_array(boxes) -> np.ndarray:
    """Stack boxes (BoundingBox objects or 4-sequences) into an (N, 4) array."""
    if isinstance(boxes, np.ndarray):
        return boxes.astype(np.float64, copy=False).reshape(-1, 4)
    rows = [b.as_tuple() if isinstance(b, BoundingBox) else tuple(b) for b in boxes]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 whenever either box has zero area."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0 or a.area <= 0.0 or b.area <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two box collections, shape (len(a), len(b))."""
    return kernels.iou_matrix(as_array(a), as_array(b))


def iou_under_shift(epsilon: float) -> float:
    """IoU predicted for a positioning error ``epsilon`` (fraction of width).

    The model is a square object whose hypothesis is displaced by
    ``epsilon * w`` along both axes, with overlap measured per axis:
    ``((1 - e) / (1 + e))**2``. This is the product of the two 1-D IoUs and
    a lower bound on the exact 2-D IoU of the displaced square.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    return (1.0 - epsilon) ** 2 / (1.0 + epsilon) ** 2


def epsilon_for_iou(target_iou: float) -> float:
    if not 0.0 < target_iou < 1.0:
        raise ValueError(f"target_iou must lie in (0, 1), got {target_iou}")
    root = math.sqrt(target_iou)
    # (t - 2 sqrt t + 1) / (1 - t) reduces to (1 - sqrt t) / (1 + sqrt t)
    return (1.0 - root) / (1.0 + root)


@dataclass(frozen=True)
class StrideAdvice:
    target_iou: float
    epsilon: float
    object_width: float

    @property
    def max_stride_fraction(self) -> float:
        return 2.0 * self.epsilon

    def max_stride_px(self, width: float | None = None) -> float:
        w = self.object_width if width is None else width
        return self.max_stride_fraction * w

    def to_dict(self) -> dict:
        return {
            "target_iou": self.target_iou,
            "epsilon": self.epsilon,
            "max_stride_fraction": self.max_stride_fraction,
            "object_width": self.object_width,
            "max_stride_px": self.max_stride_px(),
        }


def max_allowed_stride(target_iou: float, object_width: float) -> StrideAdvice:
    """Largest prior stride that still reaches ``target_iou`` on an object."""
    if target_iou >= 1.0:
        raise ValueError("target_iou = 1 is only reachable with stride 0")
    if object_width <= 0:
        raise ValueError(f"object_width must be positive, got {object_width}")
    return StrideAdvice(target_iou, epsilon_for_iou(target_iou), float(object_width))
