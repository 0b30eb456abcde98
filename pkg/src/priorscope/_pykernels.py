"""Pure numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and bit-identical results. ``priorscope.kernels`` picks one at
import time.
"""
import numpy as np


def iou_matrix(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    # zero-area boxes score 0 against anything
    ok = (union > 0) & (area_a[:, None] > 0) & (area_b[None, :] > 0)
    np.divide(inter, union, out=out, where=ok)
    return out


def nms_clusters(boxes, thr):
    """Greedy clustering of boxes already sorted by descending confidence.

    Returns ``owner`` where ``owner[i]`` is the position of the seed that
    absorbed box ``i`` (seeds own themselves).
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = len(boxes)
    owner = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if owner[i] >= 0:
            continue
        owner[i] = i
        rest = np.nonzero(owner[i + 1:] < 0)[0] + i + 1
        if rest.size == 0:
            break
        ious = iou_matrix(boxes[i:i + 1], boxes[rest])[0]
        owner[rest[ious >= thr]] = i
    return owner


def greedy_assign(ious, gt_dc, thr):
    """Assign detections (rows, descending confidence) to ground truths.

    Returns ``(det_gt, det_dc)``: the claimed non-dc GT index or -1, and a
    flag marking unassigned detections that sit on a dc object.
    """
    ious = np.asarray(ious, dtype=np.float64)
    gt_dc = np.asarray(gt_dc, dtype=bool)
    n_det, n_gt = ious.shape
    det_gt = np.full(n_det, -1, dtype=np.int64)
    det_dc = np.zeros(n_det, dtype=bool)
    claimed = np.zeros(n_gt, dtype=bool)
    for d in range(n_det):
        row = ious[d]
        best = -1
        best_iou = thr
        for g in range(n_gt):
            if gt_dc[g] or claimed[g]:
                continue
            if row[g] >= best_iou and (best < 0 or row[g] > best_iou):
                best = g
                best_iou = row[g]
        if best >= 0:
            det_gt[d] = best
            claimed[best] = True
        elif n_gt and np.any(row[gt_dc] >= thr):
            det_dc[d] = True
    return det_gt, det_dc


def candidate_pairs(prior_boxes, order, col_starts, sorted_cy, col_origin,
                    col_width, half_w, half_h, gts, thr, k):
    """Sparse prior/GT overlaps via a column-bucketed prior index.

    For every GT emit each prior with IoU >= min(thr, kth best IoU of that
    GT), restricted to strictly positive IoU. Pairs come out grouped by GT,
    then by column and center y; callers needing another order sort them.
    """
    prior_boxes = np.asarray(prior_boxes, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    n_cols = len(col_starts) - 1
    out_g, out_p, out_v = [], [], []
    for g in range(len(gts)):
        x0, y0, x1, y1 = gts[g]
        c_lo = max(int(np.floor((x0 - half_w - col_origin) / col_width)), 0)
        c_hi = min(int(np.floor((x1 + half_w - col_origin) / col_width)), n_cols - 1)
        chunks = []
        for c in range(c_lo, c_hi + 1):
            s, e = col_starts[c], col_starts[c + 1]
            if s == e:
                continue
            lo = s + np.searchsorted(sorted_cy[s:e], y0 - half_h, side="left")
            hi = s + np.searchsorted(sorted_cy[s:e], y1 + half_h, side="right")
            if hi > lo:
                chunks.append(order[lo:hi])
        if not chunks:
            continue
        cand = np.concatenate(chunks)
        v = iou_matrix(gts[g:g + 1], prior_boxes[cand])[0]
        pos = v > 0
        cand, v = cand[pos], v[pos]
        if cand.size == 0:
            continue
        cut = thr
        if k > 0:
            kk = min(k, v.size)
            kth = np.partition(v, v.size - kk)[v.size - kk]
            cut = min(thr, kth)
        keep = v >= cut
        out_g.append(np.full(int(keep.sum()), g, dtype=np.int64))
        out_p.append(cand[keep].astype(np.int64))
        out_v.append(v[keep])
    if not out_g:
        return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.float64))
    return np.concatenate(out_g), np.concatenate(out_p), np.concatenate(out_v)
