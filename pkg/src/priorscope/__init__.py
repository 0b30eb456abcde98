"""Prior-box design and detection evaluation for small objects."""
__version__ = "0.1.0"

from .geometry import BoundingBox, iou, iou_matrix, iou_under_shift, max_allowed_stride
from .kernels import BACKEND

__all__ = ["BoundingBox", "iou", "iou_matrix", "iou_under_shift", "max_allowed_stride", "BACKEND"]
