# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline double _iou(double ax0, double ay0, double ax1, double ay1,
                        double bx0, double by0, double bx1, double by1) noexcept nogil:
    cdef double ix = (ax1 if ax1 < bx1 else bx1) - (ax0 if ax0 > bx0 else bx0)
    cdef double iy = (ay1 if ay1 < by1 else by1) - (ay0 if ay0 > by0 else by0)
    cdef double area_a = (ax1 - ax0) * (ay1 - ay0)
    cdef double area_b = (bx1 - bx0) * (by1 - by0)
    cdef double inter, union
    if ix < 0.0:
        ix = 0.0
    if iy < 0.0:
        iy = 0.0
    inter = ix * iy
    union = area_a + area_b - inter
    if union > 0.0 and area_a > 0.0 and area_b > 0.0:
        return inter / union
    return 0.0


def iou_matrix(a, b):
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] O = out
    with nogil:
        for i in range(n):
            for j in range(m):
                O[i, j] = _iou(A[i, 0], A[i, 1], A[i, 2], A[i, 3],
                               B[j, 0], B[j, 1], B[j, 2], B[j, 3])
    return out


def nms_clusters(boxes, double thr):
    cdef double[:, ::1] B = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = B.shape[0], i, j
    owner = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] O = owner
    with nogil:
        for i in range(n):
            if O[i] >= 0:
                continue
            O[i] = i
            for j in range(i + 1, n):
                if O[j] >= 0:
                    continue
                if _iou(B[i, 0], B[i, 1], B[i, 2], B[i, 3],
                        B[j, 0], B[j, 1], B[j, 2], B[j, 3]) >= thr:
                    O[j] = i
    return owner


def greedy_assign(ious, gt_dc, double thr):
    cdef double[:, ::1] M = np.ascontiguousarray(ious, dtype=np.float64)
    cdef cnp.uint8_t[::1] dc = np.ascontiguousarray(gt_dc, dtype=np.uint8)
    cdef Py_ssize_t n_det = M.shape[0], n_gt = M.shape[1], d, g, best
    cdef double best_iou, v
    det_gt = np.full(n_det, -1, dtype=np.int64)
    det_dc = np.zeros(n_det, dtype=bool)
    cdef cnp.int64_t[::1] DG = det_gt
    cdef cnp.uint8_t[::1] DD = det_dc.view(np.uint8)
    cdef cnp.uint8_t[::1] claimed = np.zeros(n_gt, dtype=np.uint8)
    with nogil:
        for d in range(n_det):
            best = -1
            best_iou = thr
            for g in range(n_gt):
                if dc[g] or claimed[g]:
                    continue
                v = M[d, g]
                if v >= best_iou and (best < 0 or v > best_iou):
                    best = g
                    best_iou = v
            if best >= 0:
                DG[d] = best
                claimed[best] = 1
            else:
                for g in range(n_gt):
                    if dc[g] and M[d, g] >= thr:
                        DD[d] = 1
                        break
    return det_gt, det_dc


def candidate_pairs(prior_boxes, order, col_starts, sorted_cy, double col_origin,
                    double col_width, double half_w, double half_h, gts,
                    double thr, Py_ssize_t k):
    cdef double[:, ::1] P = np.ascontiguousarray(prior_boxes, dtype=np.float64)
    cdef cnp.int64_t[::1] ORD = np.ascontiguousarray(order, dtype=np.int64)
    cdef cnp.int64_t[::1] CS = np.ascontiguousarray(col_starts, dtype=np.int64)
    cdef double[::1] CY = np.ascontiguousarray(sorted_cy, dtype=np.float64)
    cdef double[:, ::1] G = np.ascontiguousarray(gts, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n_cols = CS.shape[0] - 1, n_gt = G.shape[0]
    cdef Py_ssize_t g, c, c_lo, c_hi, s, e, lo, hi, mid, t, n_cand, kk, n_keep
    cdef double x0, y0, x1, y1, v, cut
    out_g, out_p, out_v = [], [], []
    cand_buf = np.empty(1024, dtype=np.int64)
    val_buf = np.empty(1024, dtype=np.float64)
    cdef cnp.int64_t[::1] CB
    cdef double[::1] VB
    for g in range(n_gt):
        x0 = G[g, 0]; y0 = G[g, 1]; x1 = G[g, 2]; y1 = G[g, 3]
        c_lo = <Py_ssize_t>floor((x0 - half_w - col_origin) / col_width)
        c_hi = <Py_ssize_t>floor((x1 + half_w - col_origin) / col_width)
        if c_lo < 0:
            c_lo = 0
        if c_hi > n_cols - 1:
            c_hi = n_cols - 1
        n_cand = 0
        for c in range(c_lo, c_hi + 1):
            s = CS[c]; e = CS[c + 1]
            if s == e:
                continue
            # lower bound: first cy >= y0 - half_h
            lo = s; hi = e
            while lo < hi:
                mid = (lo + hi) // 2
                if CY[mid] < y0 - half_h:
                    lo = mid + 1
                else:
                    hi = mid
            t = lo
            # upper bound: first cy > y1 + half_h
            hi = e
            while lo < hi:
                mid = (lo + hi) // 2
                if CY[mid] <= y1 + half_h:
                    lo = mid + 1
                else:
                    hi = mid
            if lo - t + n_cand > cand_buf.shape[0]:
                grow = max(2 * cand_buf.shape[0], lo - t + n_cand)
                cand_buf = np.resize(cand_buf, grow)
            CB = cand_buf
            for mid in range(t, lo):
                CB[n_cand] = ORD[mid]
                n_cand += 1
        if n_cand == 0:
            continue
        cand = cand_buf[:n_cand].copy()
        CB = cand
        if val_buf.shape[0] < n_cand:
            val_buf = np.empty(n_cand, dtype=np.float64)
        VB = val_buf
        n_keep = 0
        with nogil:
            for t in range(n_cand):
                s = CB[t]
                v = _iou(x0, y0, x1, y1, P[s, 0], P[s, 1], P[s, 2], P[s, 3])
                if v > 0.0:
                    CB[n_keep] = s
                    VB[n_keep] = v
                    n_keep += 1
        if n_keep == 0:
            continue
        vals = val_buf[:n_keep].copy()
        cut = thr
        if k > 0:
            kk = k if k < n_keep else n_keep
            v = np.partition(vals, n_keep - kk)[n_keep - kk]
            if v < cut:
                cut = v
        keep = vals >= cut
        out_g.append(np.full(int(keep.sum()), g, dtype=np.int64))
        out_p.append(cand[:n_keep][keep])
        out_v.append(vals[keep])
    if not out_g:
        return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.float64))
    return np.concatenate(out_g), np.concatenate(out_p), np.concatenate(out_v)
