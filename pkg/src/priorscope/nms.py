"""Class-independent greedy NMS.

All detections of an image compete regardless of their state. A cluster is
the seed (highest remaining confidence) plus every remaining detection with
IoU >= threshold against it; the cluster reports the seed's box, confidence
and argmax state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import BoundingBox, as_array
from .lossaudit import STATES

DEFAULT_IOU = 0.35


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    state_scores: tuple[float, float, float, float]
    image_id: str = ""

    def __post_init__(self):
        if not np.isfinite(self.confidence):
            raise ValueError("confidence must be finite")
        if len(self.state_scores) != len(STATES) or not np.all(np.isfinite(self.state_scores)):
            raise ValueError("state_scores must be 4 finite values")


@dataclass(frozen=True)
class FinalDetection:
    box: BoundingBox
    confidence: float
    state: str
    image_id: str = ""
    cluster_size: int = 1

    def to_record(self) -> dict:
        b = self.box
        return {"image_id": self.image_id, "x": b.x_min, "y": b.y_min, "w": b.width,
                "h": b.height, "confidence": self.confidence, "state": self.state}


def suppress_arrays(boxes, confidences, iou_threshold=DEFAULT_IOU):
    """Array form: returns (keep, owner) in input indexing.

    ``keep`` lists seed indices by descending confidence (ties to the lower
    input index); ``owner[i]`` is the seed that absorbed detection ``i``.
    """
    boxes = as_array(boxes)
    conf = np.asarray(confidences, dtype=np.float64)
    order = np.argsort(-conf, kind="stable")
    owner_sorted = kernels.nms_clusters(boxes[order], float(iou_threshold))
    owner = np.empty(len(boxes), dtype=np.int64)
    owner[order] = order[owner_sorted]
    keep = order[owner_sorted == np.arange(len(order))]
    return keep, owner


def suppress(dets, iou_threshold: float = DEFAULT_IOU) -> list[FinalDetection]:
    dets = list(dets)
    if not dets:
        return []
    ids = {d.image_id for d in dets}
    if len(ids) > 1:
        raise ValueError(f"detections from mixed images: {sorted(map(str, ids))}")
    keep, owner = suppress_arrays([d.box for d in dets], [d.confidence for d in dets],
                                  iou_threshold)
    sizes = np.bincount(owner, minlength=len(dets))
    out = []
    for i in keep:
        d = dets[i]
        # first maximal score wins; the seed is the most confident member
        state = STATES[int(np.argmax(d.state_scores))]
        out.append(FinalDetection(d.box, d.confidence, state, d.image_id, int(sizes[i])))
    return out


def as_detections(finals) -> list[Detection]:
    """Re-wrap final detections so ``suppress`` can be applied again."""
    out = []
    for f in finals:
        scores = [0.0] * len(STATES)
        scores[STATES.index(f.state)] = 1.0
        out.append(Detection(f.box, f.confidence, tuple(scores), f.image_id))
    return out
