"""Two-phase SSD matching of priors to ground truths, and coverage analysis.

Phase 1 pairs every GT with one prior by greedy bipartite selection on
descending IoU. Phase 2 hands each still-free prior whose IoU with some GT
reaches the threshold to its best GT. Ties go to the lower index in both
phases (prior first, then GT).
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import as_array
from .priors import PriorBoxSet


@dataclass(frozen=True)
class MatchResult:
    prior_gt: np.ndarray       # (P,) matched GT index or -1
    prior_iou: np.ndarray      # (P,) IoU with the matched GT, 0 when unmatched
    gt_best_prior: np.ndarray  # (G,) argmax-IoU prior or -1 when nothing overlaps
    gt_best_iou: np.ndarray    # (G,)
    threshold: float

    @property
    def gt_covered(self) -> np.ndarray:
        return self.gt_best_iou >= self.threshold

    @property
    def matched(self) -> np.ndarray:
        return np.nonzero(self.prior_gt >= 0)[0]

    @property
    def n_matched(self) -> int:
        return int(np.count_nonzero(self.prior_gt >= 0))


class PriorIndex:
    """Priors bucketed into vertical columns and sorted by center y.

    Any prior overlapping a box has its center within half the largest
    prior extent of that box, so a column range plus a binary search on y
    yields a candidate superset.
    """

    def __init__(self, boxes):
        self.boxes = np.ascontiguousarray(as_array(boxes))
        b = self.boxes
        n = len(b)
        if n == 0:
            self.col_width, self.col_origin = 1.0, 0.0
            self.half_w = self.half_h = 0.0
            self.order = np.zeros(0, dtype=np.int64)
            self.col_starts = np.zeros(2, dtype=np.int64)
            self.sorted_cy = np.zeros(0)
            return
        cx = (b[:, 0] + b[:, 2]) / 2.0
        cy = (b[:, 1] + b[:, 3]) / 2.0
        self.half_w = float(((b[:, 2] - b[:, 0]) / 2.0).max())
        self.half_h = float(((b[:, 3] - b[:, 1]) / 2.0).max())
        # narrow columns keep the x window tight around each query box
        self.col_width = max(float((b[:, 2] - b[:, 0]).min()), 1.0)
        self.col_origin = float(cx.min())
        col = np.floor((cx - self.col_origin) / self.col_width).astype(np.int64)
        self.order = np.lexsort((np.arange(n), cy, col)).astype(np.int64)
        n_cols = int(col.max()) + 1
        self.col_starts = np.searchsorted(col[self.order], np.arange(n_cols + 1)).astype(np.int64)
        self.sorted_cy = np.ascontiguousarray(cy[self.order])

    def __len__(self):
        return len(self.boxes)

    def pairs(self, gts, thr, k):
        """(gt, prior, iou) triples, see ``kernels.candidate_pairs``."""
        gts = np.ascontiguousarray(as_array(gts))
        if len(self.boxes) == 0 or len(gts) == 0:
            z = np.zeros(0, dtype=np.int64)
            return z, z.copy(), np.zeros(0)
        return kernels.candidate_pairs(self.boxes, self.order, self.col_starts, self.sorted_cy,
                                       self.col_origin, self.col_width, self.half_w,
                                       self.half_h, gts, float(thr), int(k))


def _as_index(priors) -> PriorIndex:
    if isinstance(priors, PriorIndex):
        return priors
    if isinstance(priors, PriorBoxSet):
        return PriorIndex(priors.boxes)
    return PriorIndex(priors)


def best_overlaps(priors, gts):
    """Per-GT argmax prior and its IoU, without the assignment phases.

    Cheaper than ``match`` when only coverage is needed. Ties go to the
    lower prior index; GTs touching no prior get (-1, 0.0).
    """
    index = _as_index(priors)
    gts = as_array(gts)
    best_prior = np.full(len(gts), -1, dtype=np.int64)
    best_iou = np.zeros(len(gts))
    if len(index) == 0 or len(gts) == 0:
        return best_prior, best_iou
    # a cut above 1 leaves only the top-1 value (and its ties) per GT
    pg, pp, pv = index.pairs(gts, 2.0, 1)
    rank = np.lexsort((pp, -pv, pg))
    pg, pp, pv = pg[rank], pp[rank], pv[rank]
    first = np.ones(len(pg), dtype=bool)
    first[1:] = pg[1:] != pg[:-1]
    best_prior[pg[first]] = pp[first]
    best_iou[pg[first]] = pv[first]
    return best_prior, best_iou


def match(priors, gts, threshold: float) -> MatchResult:
    """Match ``priors`` (PriorBoxSet, PriorIndex or (P,4) array) to ``gts``.

    Don't-care objects should be filtered out by the caller.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    index = _as_index(priors)
    gts = as_array(gts)
    n_p, n_g = len(index), len(gts)
    prior_gt = np.full(n_p, -1, dtype=np.int64)
    prior_iou = np.zeros(n_p)
    best_prior = np.full(n_g, -1, dtype=np.int64)
    best_iou = np.zeros(n_g)
    if n_p == 0 or n_g == 0:
        return MatchResult(prior_gt, prior_iou, best_prior, best_iou, threshold)

    pg, pp, pv = index.pairs(gts, threshold, n_g)
    if pg.size == 0:
        return MatchResult(prior_gt, prior_iou, best_prior, best_iou, threshold)

    # per GT: candidates by descending IoU, then ascending prior index
    rank = np.lexsort((pp, -pv, pg))
    pg, pp, pv = pg[rank], pp[rank], pv[rank]
    starts = np.searchsorted(pg, np.arange(n_g + 1))
    has = starts[1:] > starts[:-1]
    best_prior[has] = pp[starts[:-1][has]]
    best_iou[has] = pv[starts[:-1][has]]

    # phase 1: greedy bipartite on the global IoU order
    heap = [(-pv[starts[g]], int(pp[starts[g]]), g, int(starts[g]))
            for g in range(n_g) if has[g]]
    heapq.heapify(heap)
    taken = set()
    while heap:
        neg, p, g, pos = heapq.heappop(heap)
        if p not in taken:
            taken.add(p)
            prior_gt[p] = g
            prior_iou[p] = -neg
            continue
        pos += 1
        while pos < starts[g + 1] and int(pp[pos]) in taken:
            pos += 1
        if pos < starts[g + 1]:
            heapq.heappush(heap, (-pv[pos], int(pp[pos]), g, pos))

    # phase 2: remaining priors above threshold go to their best GT
    sel = (pv >= threshold) & (prior_gt[pp] < 0)
    if sel.any():
        qg, qp, qv = pg[sel], pp[sel], pv[sel]
        order = np.lexsort((qg, -qv, qp))
        qg, qp, qv = qg[order], qp[order], qv[order]
        first = np.ones(len(qp), dtype=bool)
        first[1:] = qp[1:] != qp[:-1]
        prior_gt[qp[first]] = qg[first]
        prior_iou[qp[first]] = qv[first]
    return MatchResult(prior_gt, prior_iou, best_prior, best_iou, threshold)


@dataclass(frozen=True)
class CoverageBin:
    lo: float
    hi: float
    covered: int
    uncovered: int

    @property
    def total(self) -> int:
        return self.covered + self.uncovered


def coverage_histogram(covered, gts, bin_width: float = 1.0) -> list[CoverageBin]:
    """Covered/uncovered counts per GT-width bin ``[k*bin, (k+1)*bin)``.

    ``covered`` is a MatchResult or a boolean array aligned with ``gts``.
    """
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    flags = covered.gt_covered if isinstance(covered, MatchResult) else np.asarray(covered, bool)
    g = as_array(gts)
    if len(g) == 0:
        return []
    widths = g[:, 2] - g[:, 0]
    idx = np.floor(widths / bin_width).astype(np.int64)
    lo_i, hi_i = int(idx.min()), int(idx.max())
    cov = np.bincount(idx - lo_i, weights=flags, minlength=hi_i - lo_i + 1).astype(np.int64)
    tot = np.bincount(idx - lo_i, minlength=hi_i - lo_i + 1)
    return [CoverageBin((lo_i + i) * bin_width, (lo_i + i + 1) * bin_width,
                        int(cov[i]), int(tot[i] - cov[i]))
            for i in range(hi_i - lo_i + 1)]


def coverage_csv(bins) -> str:
    lines = ["width_lo,width_hi,covered,uncovered,total,coverage"]
    for b in bins:
        frac = b.covered / b.total if b.total else 0.0
        lines.append(f"{b.lo:g},{b.hi:g},{b.covered},{b.uncovered},{b.total},{frac:.6f}")
    return "\n".join(lines) + "\n"
