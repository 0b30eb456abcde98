"""Compiled vs numpy kernels on representative workloads.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from priorscope import _pykernels
from priorscope.matching import PriorIndex
from priorscope.priors import PriorLayout, generate

try:
    from priorscope import _ckernels
except ImportError:
    _ckernels = None


def boxes(rng, n, lo=0, hi=500, smin=4, smax=40):
    xy = rng.uniform(lo, hi, (n, 2))
    return np.hstack([xy, xy + rng.uniform(smin, smax, (n, 2))])


def workloads(rng):
    a, b = boxes(rng, 300), boxes(rng, 2000)
    dets = boxes(rng, 3000, hi=300)
    ious = rng.random((400, 60)) ** 4
    dc = rng.random(60) < 0.2
    lay = PriorLayout((31, 127), 16, (4, 8, 14, 22, 32, 46), 1 / 0.3,
                      (0.125, 0.375, 0.625, 0.875), (0.5,))
    idx = PriorIndex(generate(lay).boxes)
    gts = boxes(rng, 2000, hi=480, smin=3, smax=40)
    gts[:, 3] = gts[:, 1] + (gts[:, 2] - gts[:, 0]) / 0.3
    cand = (idx.boxes, idx.order, idx.col_starts, idx.sorted_cy, idx.col_origin,
            idx.col_width, idx.half_w, idx.half_h, gts, 0.3, 1)
    return {
        "iou_matrix 300x2000": ("iou_matrix", (a, b)),
        "nms_clusters n=3000": ("nms_clusters", (dets, 0.35)),
        "greedy_assign 400x60": ("greedy_assign", (ious, dc, 0.5)),
        f"candidate_pairs {len(idx)} priors x 2000 gts": ("candidate_pairs", cand),
    }


def timeit(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':48s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, (name, fargs) in workloads(rng).items():
        tp = timeit(getattr(_pykernels, name), fargs, args.repeat)
        if _ckernels is None:
            print(f"{label:48s} {tp * 1e3:10.2f} {'n/a':>10s} {'':>8s}")
            continue
        tc = timeit(getattr(_ckernels, name), fargs, args.repeat)
        print(f"{label:48s} {tp * 1e3:10.2f} {tc * 1e3:10.2f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
