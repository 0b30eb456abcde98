from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

import priorscope
from priorscope.geometry import BoundingBox, iou, max_allowed_stride
from priorscope.netgraph import ConfigError, analyze, load_netconfig_file
from priorscope.priors import (PriorLayout, coupled_offsets, effective_stride, generate,
                               load_priorconfig, resolve_layout)

import oracles

DATA = Path(priorscope.__file__).parent / "data"


def shipped_layout(name):
    analysis = analyze(load_netconfig_file(DATA / "inception_v3.netcfg"), (512, 2048))
    return resolve_layout(load_priorconfig((DATA / name).read_text()), analysis)


def test_original_ssd_centers():
    lay = PriorLayout((3, 4), 16, (8.0,), 2.0)
    pb = generate(lay)
    c = pb.centers
    xs, ys = np.meshgrid((np.arange(4) + 0.5) * 16, (np.arange(3) + 0.5) * 16)
    np.testing.assert_array_equal(c[:, 0], xs.ravel())
    np.testing.assert_array_equal(c[:, 1], ys.ravel())


def test_single_cell():
    pb = generate(PriorLayout((1, 1), 20, (10.0,), 3.0), (20, 20))
    assert len(pb) == 1
    assert pb.box(0) == BoundingBox(5, -5, 15, 25)


def test_adapted_horizontal_stride():
    lay = shipped_layout("adapted_b4.priorcfg")
    assert lay.feature_size == (31, 127) and lay.cumulative_stride == 16
    dx, dy = effective_stride(lay)
    assert dx == pytest.approx(2.56, abs=1e-9)
    # 2-3 px in width, 6-9 px in height
    assert 6 <= dy <= 9
    xs = np.unique(np.round(generate(lay).centers[:, 0], 9))
    assert np.diff(xs).min() == pytest.approx(2.56, abs=1e-6)


def test_effective_stride_examples():
    assert effective_stride(PriorLayout((2, 2), 16, (4.0,), 1.0)) == (16.0, 16.0)
    assert effective_stride(PriorLayout((2, 2), 8, (4.0,), 1.0, (0.25, 0.75)))[0] == 4.0
    xs = np.unique(generate(PriorLayout((2, 5), 8, (4.0,), 1.0, (0.25, 0.75))).centers[:, 0])
    assert np.diff(xs).min() == 4.0


def test_coupled_offsets():
    ox, oy = coupled_offsets(0.16, 1 / 0.3)
    assert ox == pytest.approx((0.08, 0.24, 0.40, 0.56, 0.72, 0.88))
    assert oy == pytest.approx((0.08 / 0.3, 0.24 / 0.3))
    assert coupled_offsets(1.0, 1.0) == ((0.5,), (0.5,))


def test_ordering_and_provenance():
    lay = PriorLayout((2, 3), 10, (2.0, 4.0), 1.0, (0.25, 0.75), (0.5,))
    pb = generate(lay)
    assert len(pb) == lay.count == 2 * 3 * 2 * 2
    assert list(pb.width_index[:4]) == [0, 1, 0, 1]
    assert list(pb.offset_index[:4]) == [0, 0, 1, 1]
    assert list(pb.cell_x[:5]) == [0, 0, 0, 0, 1]
    assert pb.cell_y[-1] == 1


def test_layout_validation():
    with pytest.raises(ValueError):
        PriorLayout((2, 2), 16, (4.0,), 1.0, (1.2,))
    with pytest.raises(ValueError):
        PriorLayout((2, 2), 16, (), 1.0)
    with pytest.raises(ValueError):
        PriorLayout((2, 2), 16, (4.0,), 0.0)
    with pytest.raises(ValueError):
        generate(PriorLayout((31, 127), 16, (4.0,), 1.0), (1024, 2048))


def test_priorconfig_errors():
    with pytest.raises(ConfigError):
        load_priorconfig("layer_name: x\nwidths: [1]\n")
    with pytest.raises(ConfigError):
        load_priorconfig("layer_name: x\nwidths: [1]\naspect_ratio: 1\nbogus: 1\n")
    analysis = analyze(load_netconfig_file(DATA / "inception_v3.netcfg"), (512, 2048))
    with pytest.raises(ConfigError):
        resolve_layout(load_priorconfig("layer_name: nope\nwidths: [1]\naspect_ratio: 1\n"), analysis)


offsets = st.lists(st.integers(0, 1000).map(lambda v: v / 1000), min_size=1, max_size=5,
                   unique=True).map(sorted)


@st.composite
def layouts(draw):
    return PriorLayout((draw(st.integers(1, 4)), draw(st.integers(1, 6))),
                       draw(st.sampled_from([4, 8, 16, 32])),
                       tuple(draw(st.lists(st.floats(1, 40), min_size=1, max_size=3))),
                       draw(st.floats(0.2, 4)), tuple(draw(offsets)), tuple(draw(offsets)))


@pytest.mark.invariant
@given(layouts())
def test_count(lay):
    hf, wf = lay.feature_size
    assert len(generate(lay)) == hf * wf * len(lay.widths) * len(lay.offsets_x) * len(lay.offsets_y)


@pytest.mark.invariant
@given(layouts())
def test_center_gap_equals_effective_stride(lay):
    dx, dy = effective_stride(lay)
    c = generate(lay).centers
    for col, d, cells in ((0, dx, lay.feature_size[1]), (1, dy, lay.feature_size[0])):
        u = np.unique(np.round(c[:, col], 7))
        # gaps between copies in the same cell are exact; the wrap gap only
        # shows up with a second cell
        if len(u) > 1 and cells > 1:
            assert abs(np.diff(u).min() - d) < 1e-6
        elif len(u) == 1:
            assert d == lay.cumulative_stride


@pytest.mark.invariant
@given(st.integers(1, 5), st.integers(1, 5), st.sampled_from([8, 16, 32]),
       st.lists(st.floats(1, 40), min_size=1, max_size=4), st.floats(0.2, 4))
def test_center_offsets_match_classic(fh, fw, s, widths, r):
    pb = generate(PriorLayout((fh, fw), s, tuple(widths), r))
    ref = np.array(oracles.ssd_priors(fh, fw, s, widths, r))
    np.testing.assert_array_equal(pb.boxes, ref)


@pytest.mark.invariant
@given(st.floats(4, 40), st.floats(0, 1), st.floats(0, 1))
def test_stride_guarantee(w, fx, fy):
    theta = 0.5
    allowed = max_allowed_stride(theta, w).max_stride_px()
    stride = 16.0
    n = int(np.ceil(stride / allowed))
    offs = tuple((np.arange(n) + 0.5) / n)
    lay = PriorLayout((6, 6), stride, (w,), 1.0, offs, offs)
    assert max(effective_stride(lay)) <= allowed + 1e-12
    # object somewhere well inside the grid
    x = 2 * stride + fx * 2 * stride
    y = 2 * stride + fy * 2 * stride
    obj = BoundingBox(x, y, x + w, y + w)
    pb = generate(lay)
    c = pb.centers
    near = np.nonzero((np.abs(c[:, 0] - x - w / 2) < stride) & (np.abs(c[:, 1] - y - w / 2) < stride))[0]
    best = max(iou(obj, pb.box(i)) for i in near)
    assert best >= theta - 1e-12
