"""Prior-box grids with sub-cell center offsets.

A cell ``(y, x)`` of a feature grid with cumulative stride ``s`` places one
prior per (offset_y, offset_x, width) at pixel center
``((x + o_x) * s, (y + o_y) * s)``. With the single offset 0.5 this is the
classic SSD layout; denser offset vectors shrink the effective stride without
touching the feature map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from .geometry import BoundingBox
from .netgraph import ConfigError, NetAnalysis


@dataclass(frozen=True)
class PriorLayout:
    feature_size: tuple[int, int]
    cumulative_stride: float
    widths: tuple[float, ...]
    aspect_ratio: float  # height / width
    offsets_x: tuple[float, ...] = (0.5,)
    offsets_y: tuple[float, ...] = (0.5,)
    name: str = ""

    def __post_init__(self):
        h, w = self.feature_size
        if h < 1 or w < 1:
            raise ValueError(f"feature size must be positive, got {self.feature_size}")
        if self.cumulative_stride <= 0:
            raise ValueError("cumulative_stride must be positive")
        if not self.widths or min(self.widths) <= 0:
            raise ValueError("widths must be a non-empty list of positive values")
        if self.aspect_ratio <= 0:
            raise ValueError("aspect_ratio must be positive")
        for label, offs in (("offsets_x", self.offsets_x), ("offsets_y", self.offsets_y)):
            if not offs:
                raise ValueError(f"{label} must not be empty")
            if min(offs) < 0 or max(offs) > 1:
                raise ValueError(f"{label} must lie in [0, 1], got {offs}")

    @property
    def priors_per_cell(self) -> int:
        return len(self.widths) * len(self.offsets_x) * len(self.offsets_y)

    @property
    def count(self) -> int:
        return self.feature_size[0] * self.feature_size[1] * self.priors_per_cell


@dataclass(frozen=True)
class PriorBoxSet:
    boxes: np.ndarray        # (N, 4) x_min, y_min, x_max, y_max
    cell_y: np.ndarray
    cell_x: np.ndarray
    width_index: np.ndarray
    offset_index: np.ndarray  # iy * len(offsets_x) + ix

    def __len__(self):
        return len(self.boxes)

    def box(self, i) -> BoundingBox:
        return BoundingBox(*map(float, self.boxes[i]))

    @property
    def centers(self) -> np.ndarray:
        b = self.boxes
        return np.stack([(b[:, 0] + b[:, 2]) / 2, (b[:, 1] + b[:, 3]) / 2], axis=1)


def coupled_offsets(spacing: float, aspect_ratio: float):
    """Offset vectors with ``o_y,i = r * o_x,i``.

    ``o_x`` steps by ``spacing`` from ``spacing / 2``; only the y offsets that
    stay inside the cell are kept.
    """
    if not 0 < spacing <= 1:
        raise ValueError("spacing must lie in (0, 1]")
    n = int(np.floor((1.0 - spacing / 2) / spacing + 1e-9)) + 1
    ox = [round(spacing / 2 + i * spacing, 10) for i in range(n)]
    oy = [round(aspect_ratio * o, 10) for o in ox if aspect_ratio * o <= 1.0 + 1e-12]
    return tuple(ox), tuple(oy)


def check_input_size(layout: PriorLayout, input_size) -> None:
    """The grid must neither overshoot the image by more than one cell nor
    leave more than a few cells of it uncovered (VALID padding loses some)."""
    s = layout.cumulative_stride
    for extent, cells, axis in zip(input_size, layout.feature_size, ("height", "width")):
        span = cells * s
        if span > extent + s or span < extent - 8 * s:
            raise ValueError(f"feature {axis} {cells} at stride {s} does not fit input {axis} {extent}")


def generate(layout: PriorLayout, input_size=None) -> PriorBoxSet:
    """All priors, row-major by cell, then offset (y-major), then width."""
    if input_size is not None:
        check_input_size(layout, input_size)
    hf, wf = layout.feature_size
    s = float(layout.cumulative_stride)
    ox = np.asarray(layout.offsets_x, dtype=np.float64)
    oy = np.asarray(layout.offsets_y, dtype=np.float64)
    widths = np.asarray(layout.widths, dtype=np.float64)
    heights = widths * layout.aspect_ratio

    cy_, cx_, oyi, oxi, wi = np.meshgrid(np.arange(hf), np.arange(wf), np.arange(len(oy)),
                                         np.arange(len(ox)), np.arange(len(widths)),
                                         indexing="ij")
    cy_, cx_, oyi, oxi, wi = (a.ravel() for a in (cy_, cx_, oyi, oxi, wi))
    centers_x = (cx_ + ox[oxi]) * s
    centers_y = (cy_ + oy[oyi]) * s
    half_w = widths[wi] / 2.0
    half_h = heights[wi] / 2.0
    boxes = np.stack([centers_x - half_w, centers_y - half_h,
                      centers_x + half_w, centers_y + half_h], axis=1)
    return PriorBoxSet(boxes, cy_, cx_, wi, oyi * len(ox) + oxi)


def _min_wrapped_gap(offsets) -> float:
    o = np.unique(np.asarray(offsets, dtype=np.float64))
    if o.size == 1:
        return 1.0
    gaps = np.diff(np.append(o, o[0] + 1.0))
    gaps = gaps[gaps > 1e-12]
    return float(gaps.min()) if gaps.size else 1.0


def effective_stride(layout: PriorLayout) -> tuple[float, float]:
    """Smallest center spacing in pixels along x and y, wrapping across cells."""
    s = layout.cumulative_stride
    return s * _min_wrapped_gap(layout.offsets_x), s * _min_wrapped_gap(layout.offsets_y)


_PRIOR_FIELDS = {"layer_name", "widths", "aspect_ratio", "offsets_x", "offsets_y"}


def load_priorconfig(text: str) -> dict:
    """Parse a ``.priorcfg`` document into a plain dict."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("prior config must be a mapping")
    unknown = set(data) - _PRIOR_FIELDS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field_name=sorted(unknown)[0])
    for req in ("layer_name", "widths", "aspect_ratio"):
        if req not in data:
            raise ConfigError("missing required key", field_name=req)
    return data


def resolve_layout(priorcfg: dict, analysis: NetAnalysis) -> PriorLayout:
    """Bind a prior config to its feature layer's size and stride."""
    name = priorcfg["layer_name"]
    if name not in analysis.nodes:
        raise ConfigError(f"layer '{name}' not found in network", field_name="layer_name")
    st = analysis[name]
    return PriorLayout(
        feature_size=(st.height, st.width),
        cumulative_stride=float(st.stride),
        widths=tuple(float(w) for w in priorcfg["widths"]),
        aspect_ratio=float(priorcfg["aspect_ratio"]),
        offsets_x=tuple(float(o) for o in priorcfg.get("offsets_x", [0.5])),
        offsets_y=tuple(float(o) for o in priorcfg.get("offsets_y", [0.5])),
        name=name,
    )
