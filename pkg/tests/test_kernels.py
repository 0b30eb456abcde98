import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from priorscope import _pykernels as py
from priorscope import kernels
from priorscope.matching import PriorIndex

c = pytest.importorskip("priorscope._ckernels")


def boxes(rng, n, span=100):
    xy = rng.uniform(0, span, (n, 2))
    return np.hstack([xy, xy + rng.uniform(0, 20, (n, 2))])


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_env_forces_fallback():
    env = dict(os.environ, PRIORSCOPE_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import priorscope; print(priorscope.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.invariant
@given(st.integers(0, 2**32 - 1), st.integers(0, 30), st.integers(0, 30))
def test_iou_matrix_parity(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = boxes(rng, n), boxes(rng, m)
    a[: n // 4, 2] = a[: n // 4, 0]  # some zero-area boxes
    np.testing.assert_array_equal(c.iou_matrix(a, b), py.iou_matrix(a, b))


@pytest.mark.invariant
@given(st.integers(0, 2**32 - 1), st.integers(0, 80), st.floats(0.05, 0.95))
def test_nms_parity(seed, n, thr):
    b = boxes(np.random.default_rng(seed), n, 60)
    np.testing.assert_array_equal(c.nms_clusters(b, thr), py.nms_clusters(b, thr))


@pytest.mark.invariant
@given(st.integers(0, 2**32 - 1), st.integers(0, 30), st.integers(0, 10), st.floats(0.1, 0.9))
def test_greedy_assign_parity(seed, n_det, n_gt, thr):
    rng = np.random.default_rng(seed)
    ious = np.round(rng.random((n_det, n_gt)), 1)
    dc = rng.random(n_gt) < 0.3
    for x, y in zip(c.greedy_assign(ious, dc, thr), py.greedy_assign(ious, dc, thr)):
        np.testing.assert_array_equal(x, y)


@pytest.mark.invariant
@given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.integers(0, 20), st.integers(0, 5))
def test_candidate_pairs_parity(seed, n_p, n_g, k):
    rng = np.random.default_rng(seed)
    idx = PriorIndex(boxes(rng, n_p))
    gts = boxes(rng, n_g)
    args = (idx.boxes, idx.order, idx.col_starts, idx.sorted_cy, idx.col_origin,
            idx.col_width, idx.half_w, idx.half_h, gts, 0.3, k)
    for x, y in zip(c.candidate_pairs(*args), py.candidate_pairs(*args)):
        np.testing.assert_array_equal(x, y)


@pytest.mark.invariant
@given(st.integers(0, 2**32 - 1), st.integers(1, 150), st.integers(1, 10))
def test_candidates_are_complete(seed, n_p, n_g):
    # every positive-IoU pair at or above the threshold must be found
    rng = np.random.default_rng(seed)
    pri, gts = boxes(rng, n_p), boxes(rng, n_g)
    g, p, v = PriorIndex(pri).pairs(gts, 0.2, 0)
    full = py.iou_matrix(gts, pri)
    want = {(i, j) for i, j in zip(*np.nonzero(full >= 0.2)) if full[i, j] > 0}
    assert set(zip(g.tolist(), p.tolist())) == want
