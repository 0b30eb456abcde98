"""FPPI / miss-rate evaluation with don't-care handling.

Per image, detections are visited by descending confidence and each claims
the free non-dc ground truth of highest IoU at or above the threshold.
Unclaimed detections lying on a dc object are dropped; the rest are false
positives. Because a detection's fate only depends on more confident
detections, one pass yields the outcome at every confidence threshold: a
detection counts at threshold ``c`` iff its confidence is ``>= c``.
"""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import kernels
from .lossaudit import STATES
from .records import DetectionRecord, GroundTruthRecord, RecordError, stream_records

FP, TP, DC, IGNORED = 0, 1, 2, 3
_DISPOSITION = {FP: "fp", TP: "tp", DC: "dc", IGNORED: "ignored"}
NON_VEHICLE = frozenset({"pedestrian", "cyclist", "tram", "bus"})
LAMR_FPPI = (0.1, 1.0, 10.0)


def default_dc_rule(rec: GroundTruthRecord) -> bool:
    """Not facing the vehicle, or meant for another road user."""
    return "front" not in rec.tags or bool(rec.tags & NON_VEHICLE)


def no_dc_rule(rec: GroundTruthRecord) -> bool:
    return False


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    min_width: float = 0.0
    dc_rule: Callable[[GroundTruthRecord], bool] = default_dc_rule
    state: str | None = None  # None evaluates all states jointly

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")
        if self.state is not None and self.state not in STATES:
            raise ValueError(f"unknown state {self.state!r}")

    def is_dc(self, rec: GroundTruthRecord) -> bool:
        if rec.width < self.min_width or self.dc_rule(rec):
            return True
        # in a per-state evaluation the other states neither hit nor miss
        return self.state is not None and rec.state != self.state

    def snapshot(self) -> dict:
        return {"iou_threshold": self.iou_threshold, "min_width": self.min_width,
                "dc_rule": getattr(self.dc_rule, "__name__", repr(self.dc_rule)),
                "state": self.state or "all"}


def score_arrays(gt_boxes, gt_dc, det_boxes, det_conf, iou_threshold, det_active=None):
    """Core per-image scoring on arrays.

    Returns ``(status, det_gt, gt_claim_conf)``: per-detection status code
    (FP/TP/DC/IGNORED) and claimed GT in input order, and for each GT the
    confidence of the detection that claimed it (``-inf`` if none).
    """
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    det_conf = np.asarray(det_conf, dtype=np.float64)
    gt_dc = np.asarray(gt_dc, dtype=bool)
    n_det = len(det_boxes)
    status = np.full(n_det, IGNORED, dtype=np.int8)
    det_gt = np.full(n_det, -1, dtype=np.int64)
    claim = np.full(len(gt_boxes), -np.inf)
    active = np.arange(n_det) if det_active is None else np.nonzero(det_active)[0]
    if active.size == 0:
        return status, det_gt, claim
    order = active[np.argsort(-det_conf[active], kind="stable")]
    if len(gt_boxes) == 0:
        status[order] = FP
        return status, det_gt, claim
    ious = kernels.iou_matrix(det_boxes[order], gt_boxes)
    assigned, on_dc = kernels.greedy_assign(ious, gt_dc, float(iou_threshold))
    st = np.where(assigned >= 0, TP, np.where(on_dc, DC, FP)).astype(np.int8)
    status[order] = st
    det_gt[order] = assigned
    hit = assigned >= 0
    claim[assigned[hit]] = det_conf[order][hit]
    return status, det_gt, claim


@dataclass
class ImageScore:
    tp: int
    fp: int
    fn: int
    gt_hit: np.ndarray
    gt_dc: np.ndarray
    disposition: list[str]
    det_gt: np.ndarray


def score_image(gts: list[GroundTruthRecord], dets: list[DetectionRecord],
                cfg: EvalConfig, confidence_threshold: float = 0.0) -> ImageScore:
    """Score one image's post-NMS detections at a confidence threshold."""
    gt_dc = np.array([cfg.is_dc(g) for g in gts], dtype=bool)
    gt_boxes = np.array([g.box for g in gts], dtype=np.float64).reshape(-1, 4)
    det_boxes = np.array([d.box for d in dets], dtype=np.float64).reshape(-1, 4)
    conf = np.array([d.confidence for d in dets], dtype=np.float64)
    active = conf >= confidence_threshold
    if cfg.state is not None:
        active &= np.array([d.state == cfg.state for d in dets], dtype=bool)
    status, det_gt, claim = score_arrays(gt_boxes, gt_dc, det_boxes, conf,
                                         cfg.iou_threshold, active)
    hit = np.isfinite(claim) & ~gt_dc
    tp = int(np.count_nonzero(status == TP))
    return ImageScore(tp=tp, fp=int(np.count_nonzero(status == FP)),
                      fn=int(np.count_nonzero(~gt_dc)) - tp, gt_hit=hit, gt_dc=gt_dc,
                      disposition=[_DISPOSITION[int(s)] for s in status], det_gt=det_gt)


@dataclass
class RocCurve:
    thresholds: np.ndarray  # ascending confidence thresholds
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    n_images: int

    @property
    def fppi(self) -> np.ndarray:
        return self.fp / self.n_images if self.n_images else np.zeros(len(self.fp))

    @property
    def miss_rate(self) -> np.ndarray:
        pos = self.tp + self.fn
        return np.divide(self.fn, pos, out=np.zeros(len(pos)), where=pos > 0)

    @property
    def recall(self) -> np.ndarray:
        return 1.0 - self.miss_rate

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["confidence_threshold", "fppi", "miss_rate", "tp", "fp", "fn"])
        for c, f, m, tp, fp, fn in zip(self.thresholds, self.fppi, self.miss_rate,
                                       self.tp, self.fp, self.fn):
            w.writerow([f"{c:.6f}", f"{f:.6f}", f"{m:.6f}", int(tp), int(fp), int(fn)])
        return buf.getvalue()


def confidence_grid(n: int = 1000) -> np.ndarray:
    """``n`` uniform thresholds ``1/n, 2/n, ..., 1``."""
    if n < 1:
        raise ValueError("grid needs at least one threshold")
    return np.arange(1, n + 1, dtype=np.float64) / n


def _operating_index(curve: RocCurve, fppi_target: float) -> int:
    """Point with the largest FPPI <= target (lowest threshold among ties);
    without one, the point of smallest FPPI."""
    f = curve.fppi
    ok = np.nonzero(f <= fppi_target)[0]
    if ok.size:
        best = f[ok].max()
        return int(ok[f[ok] == best].min())
    low = f.min()
    return int(np.nonzero(f == low)[0].min())


def miss_rate_at(curve: RocCurve, fppi_target: float) -> float:
    return float(curve.miss_rate[_operating_index(curve, fppi_target)])


def lamr(curve: RocCurve, points=LAMR_FPPI) -> float:
    """Mean miss rate sampled at FPPI 0.1, 1 and 10 (step interpolation)."""
    if len(curve.thresholds) == 0:
        raise ValueError("empty ROC curve")
    return float(np.mean([miss_rate_at(curve, p) for p in points]))


def closest_threshold(curve: RocCurve, fppi_target: float) -> float:
    """Grid threshold whose FPPI is nearest the target (lower threshold on ties)."""
    d = np.abs(curve.fppi - fppi_target)
    return float(curve.thresholds[int(np.nonzero(d == d.min())[0].min())])


@dataclass(frozen=True)
class WidthBin:
    lo: float
    hi: float
    n: int
    hits: int

    @property
    def recall(self) -> float:
        return self.hits / self.n if self.n else 0.0


@dataclass
class TrackReport:
    threshold: float
    tracks: dict  # track_id -> (occurrences, detections)
    missing_track_ids: int

    def p_track(self) -> dict:
        return {t: d / n for t, (n, d) in self.tracks.items()}

    @property
    def share_high(self) -> float:
        """Share of tracks detected in 90-100 % of their frames."""
        if not self.tracks:
            return 0.0
        p = np.array(list(self.p_track().values()))
        return float(np.count_nonzero(p >= 0.9) / p.size)

    def histogram(self, n_bins: int = 10) -> list[int]:
        p = np.array(list(self.p_track().values()))
        idx = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
        return np.bincount(idx, minlength=n_bins).tolist()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["track_id", "occurrences", "detections", "p_track"])
        for t in sorted(self.tracks):
            n, d = self.tracks[t]
            w.writerow([t, n, d, f"{d / n:.6f}"])
        return buf.getvalue()


class Evaluator:
    """Accumulates per-image outcomes; merging order does not matter."""

    def __init__(self, cfg: EvalConfig):
        self.cfg = cfg
        self.n_images = 0
        self._tp_conf: list[np.ndarray] = []
        self._fp_conf: list[np.ndarray] = []
        self._gt_width: list[np.ndarray] = []
        self._gt_claim: list[np.ndarray] = []
        self._gt_track: list = []

    def add_arrays(self, gt_boxes, gt_dc, gt_tracks, det_boxes, det_conf, det_active=None):
        self.n_images += 1
        status, _, claim = score_arrays(gt_boxes, gt_dc, det_boxes, det_conf,
                                        self.cfg.iou_threshold, det_active)
        conf = np.asarray(det_conf, dtype=np.float64)
        self._tp_conf.append(conf[status == TP])
        self._fp_conf.append(conf[status == FP])
        keep = ~np.asarray(gt_dc, dtype=bool)
        gb = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
        self._gt_width.append((gb[:, 2] - gb[:, 0])[keep])
        self._gt_claim.append(claim[keep])
        self._gt_track.extend(t for t, k in zip(gt_tracks, keep) if k)

    def add_image(self, gts: list[GroundTruthRecord], dets: list[DetectionRecord]):
        cfg = self.cfg
        active = None
        if cfg.state is not None:
            active = np.array([d.state == cfg.state for d in dets], dtype=bool)
        self.add_arrays(np.array([g.box for g in gts], dtype=np.float64).reshape(-1, 4),
                        np.array([cfg.is_dc(g) for g in gts], dtype=bool),
                        [g.track_id for g in gts],
                        np.array([d.box for d in dets], dtype=np.float64).reshape(-1, 4),
                        np.array([d.confidence for d in dets], dtype=np.float64), active)

    def _cat(self, parts):
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def n_positive(self) -> int:
        return int(sum(len(c) for c in self._gt_claim))

    def roc(self, grid=1000) -> RocCurve:
        th = confidence_grid(grid) if np.isscalar(grid) else np.sort(np.asarray(grid, float))
        if th.size == 0 or th.min() <= 0 or th.max() > 1:
            raise ValueError("confidence grid must lie in (0, 1]")
        tp_c = np.sort(self._cat(self._tp_conf))
        fp_c = np.sort(self._cat(self._fp_conf))
        tp = tp_c.size - np.searchsorted(tp_c, th, side="left")
        fp = fp_c.size - np.searchsorted(fp_c, th, side="left")
        fn = self.n_positive - tp
        return RocCurve(th, tp.astype(np.int64), fp.astype(np.int64), fn.astype(np.int64),
                        self.n_images)

    def gt_hits(self, threshold: float) -> np.ndarray:
        return self._cat(self._gt_claim) >= threshold

    def recall_by_width(self, threshold: float, bin_width: float = 1.0) -> list[WidthBin]:
        if bin_width < 1:
            raise ValueError("bin_width must be >= 1")
        w = self._cat(self._gt_width)
        if w.size == 0:
            return []
        hits = self.gt_hits(threshold)
        idx = np.floor(w / bin_width).astype(np.int64)
        lo = int(idx.min())
        n = np.bincount(idx - lo)
        h = np.bincount(idx - lo, weights=hits, minlength=len(n)).astype(np.int64)
        return [WidthBin((lo + i) * bin_width, (lo + i + 1) * bin_width, int(n[i]), int(h[i]))
                for i in range(len(n))]

    def track_recall(self, threshold: float) -> TrackReport:
        hits = self.gt_hits(threshold)
        tracks: dict = defaultdict(lambda: [0, 0])
        missing = 0
        for t, h in zip(self._gt_track, hits):
            if t is None:
                missing += 1
                continue
            tracks[t][0] += 1
            tracks[t][1] += int(h)
        return TrackReport(threshold, {k: tuple(v) for k, v in tracks.items()}, missing)


def width_csv(bins: Iterable[WidthBin]) -> str:
    lines = ["width_lo,width_hi,n,hits,recall"]
    for b in bins:
        lines.append(f"{b.lo:g},{b.hi:g},{b.n},{b.hits},{b.recall:.6f}")
    return "\n".join(lines) + "\n"


def group_by_image(records) -> dict:
    out: dict = defaultdict(list)
    for r in records:
        out[r.image_id].append(r)
    return out


def roc(labels: Iterable[GroundTruthRecord], detections: Iterable[DetectionRecord],
        cfg: EvalConfig, grid=1000) -> RocCurve:
    """In-memory convenience wrapper around ``Evaluator``."""
    return evaluate(labels, detections, cfg).roc(grid)


def evaluate(labels, detections, cfg: EvalConfig) -> Evaluator:
    gts = group_by_image(labels)
    dets = group_by_image(detections)
    unknown = set(dets) - set(gts)
    if unknown:
        raise ValueError(f"detections reference unknown image ids: {sorted(unknown)[:5]}")
    ev = Evaluator(cfg)
    for image_id in sorted(gts):
        ev.add_image(gts[image_id], dets.get(image_id, []))
    return ev


@dataclass
class _LabelImage:
    boxes: list = field(default_factory=list)
    dc: list = field(default_factory=list)
    tracks: list = field(default_factory=list)


def evaluate_files(labels_path, dets_path, cfg: EvalConfig, on_error="raise",
                   stats=None) -> Evaluator:
    """Streaming evaluation of JSON-lines files.

    Labels are grouped per image; detections are held as compact columns
    (seven numbers each) rather than record objects, then scored image by
    image.
    """
    images: dict[str, _LabelImage] = {}
    label_stats = stats.get("labels") if stats else None
    for g in stream_records(labels_path, "label", on_error, label_stats):
        img = images.get(g.image_id)
        if img is None:
            img = images[g.image_id] = _LabelImage()
        img.boxes.append(g.box)
        img.dc.append(cfg.is_dc(g))
        img.tracks.append(g.track_id)
    ids = sorted(images)
    pos = {k: i for i, k in enumerate(ids)}

    from array import array
    cols = [array("d") for _ in range(5)]
    img_col = array("q")
    state_col = array("b")
    det_stats = stats.get("detections") if stats else None
    for d in stream_records(dets_path, "detection", on_error, det_stats):
        i = pos.get(d.image_id)
        if i is None:
            raise RecordError(f"unknown image_id {d.image_id!r}", None, "image_id", dets_path)
        img_col.append(i)
        for c, v in zip(cols, (d.x_min, d.y_min, d.x_max, d.y_max, d.confidence)):
            c.append(v)
        state_col.append(-1 if d.state is None else STATES.index(d.state))

    img_idx = np.frombuffer(img_col, dtype=np.int64) if len(img_col) else np.zeros(0, np.int64)
    det = np.column_stack([np.frombuffer(c, dtype=np.float64) for c in cols]) \
        if len(img_col) else np.zeros((0, 5))
    states = np.frombuffer(state_col, dtype=np.int8) if len(state_col) else np.zeros(0, np.int8)
    del cols, img_col, state_col
    order = np.argsort(img_idx, kind="stable")
    img_idx, det, states = img_idx[order], det[order], states[order]
    bounds = np.searchsorted(img_idx, np.arange(len(ids) + 1))
    want = None if cfg.state is None else STATES.index(cfg.state)

    ev = Evaluator(cfg)
    for i, image_id in enumerate(ids):
        img = images[image_id]
        s, e = bounds[i], bounds[i + 1]
        active = None if want is None else states[s:e] == want
        ev.add_arrays(np.array(img.boxes, dtype=np.float64).reshape(-1, 4),
                      np.array(img.dc, dtype=bool), img.tracks,
                      det[s:e, :4], det[s:e, 4], active)
    return ev


def summary(ev: Evaluator, curve: RocCurve) -> dict:
    return {
        "config": ev.cfg.snapshot(),
        "images": ev.n_images,
        "ground_truths": ev.n_positive,
        "lamr": round(lamr(curve), 12),
        "miss_rate_at": {f"{p:g}": round(miss_rate_at(curve, p), 12) for p in LAMR_FPPI},
    }


def summary_json(ev: Evaluator, curve: RocCurve) -> str:
    return json.dumps(summary(ev, curve), indent=2, sort_keys=True) + "\n"
