"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly; setting
``PRIORSCOPE_PURE=1`` forces the numpy fallback.
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

BACKEND = "python"
_impl = _pykernels

if os.environ.get("PRIORSCOPE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        log.debug("compiled kernels unavailable, using numpy fallback")

iou_matrix = _impl.iou_matrix
nms_clusters = _impl.nms_clusters
greedy_assign = _impl.greedy_assign
candidate_pairs = _impl.candidate_pairs

__all__ = ["BACKEND", "iou_matrix", "nms_clusters", "greedy_assign", "candidate_pairs"]
