"""Deterministic synthetic label/detection sets for tests and demos.

Images are grouped into short sequences; every object of a sequence is one
track that drifts a little from frame to frame. Each GT occurrence is missed
with probability ``miss_rate``; otherwise a jittered detection (IoU > 0.8)
is emitted. False positives are drawn per image as
``Binomial(fp_slots, fp_rate)`` and never touch a ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_array
from .kernels import iou_matrix
from .records import write_jsonl

SYNTH_STATES = ("red", "green", "yellow", "off")
SYNTH_STATE_P = (0.45, 0.45, 0.07, 0.03)


@dataclass(frozen=True)
class WidthDistribution:
    kind: str
    a: float
    b: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "WidthDistribution":
        """``uniform:LO:HI``, ``lognormal:MU:SIGMA`` or ``fixed:W``."""
        parts = str(text).split(":")
        try:
            kind, nums = parts[0], [float(p) for p in parts[1:]]
        except ValueError:
            raise ValueError(f"bad width distribution {text!r}") from None
        if kind == "fixed" and len(nums) == 1:
            dist = cls(kind, nums[0])
        elif kind in ("uniform", "lognormal") and len(nums) == 2:
            dist = cls(kind, nums[0], nums[1])
        else:
            raise ValueError(f"bad width distribution {text!r}")
        dist.validate()
        return dist

    def validate(self):
        if self.kind == "fixed" and self.a <= 0:
            raise ValueError("fixed width must be positive")
        if self.kind == "uniform" and not 0 < self.a <= self.b:
            raise ValueError("uniform widths need 0 < LO <= HI")
        if self.kind == "lognormal" and self.b <= 0:
            raise ValueError("lognormal sigma must be positive")
        if self.kind not in ("fixed", "uniform", "lognormal"):
            raise ValueError(f"unknown width distribution {self.kind!r}")

    def sample(self, rng, n):
        if self.kind == "fixed":
            return np.full(n, self.a)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, n)
        return np.clip(rng.lognormal(self.a, self.b, n), 1.0, None)


def _place(rng, widths, heights, image_size, existing):
    """Random non-overlapping boxes inside the image (best effort)."""
    ih, iw = image_size
    out = []
    for w, h in zip(widths, heights):
        for _ in range(50):
            x = rng.uniform(0, iw - w)
            y = rng.uniform(0, ih - h)
            box = np.array([[x, y, x + w, y + h]])
            others = as_array(existing + out)
            if len(others) == 0 or iou_matrix(box, others).max() == 0:
                break
        out.append((x, y, x + w, y + h))
    return out


def synth_dataset(seed=0, n_images=100, width_distribution="uniform:3:40", fp_rate=0.0,
                  miss_rate=0.0, objects_per_image=5, fp_slots=20, frames_per_track=10,
                  aspect_ratio=1 / 0.3, dc_rate=0.0, image_size=(512, 2048)):
    """Return ``(labels, detections)`` as lists of JSON-ready dicts."""
    for name, p in (("fp_rate", fp_rate), ("miss_rate", miss_rate), ("dc_rate", dc_rate)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {p}")
    if n_images < 0 or objects_per_image < 0 or fp_slots < 0 or frames_per_track < 1:
        raise ValueError("counts must be non-negative and frames_per_track >= 1")
    dist = width_distribution if isinstance(width_distribution, WidthDistribution) \
        else WidthDistribution.parse(width_distribution)
    rng = np.random.default_rng(seed)
    ih, iw = image_size
    labels, dets = [], []
    n_seq = -(-n_images // frames_per_track) if n_images else 0
    frame_count = 0
    for s in range(n_seq):
        widths = np.minimum(dist.sample(rng, objects_per_image), iw / 4)
        heights = np.minimum(widths * aspect_ratio, ih / 2)
        base = _place(rng, widths, heights, image_size, [])
        states = rng.choice(len(SYNTH_STATES), size=objects_per_image, p=SYNTH_STATE_P)
        dc = rng.random(objects_per_image) < dc_rate
        drift = rng.normal(0, 0.5, size=(objects_per_image, 2))
        for f in range(min(frames_per_track, n_images - frame_count)):
            image_id = f"s{s:05d}_f{f:03d}"
            frame_count += 1
            gts = []
            for k, (x0, y0, x1, y1) in enumerate(base):
                dx, dy = drift[k] * f
                w, h = x1 - x0, y1 - y0
                x = float(np.clip(x0 + dx, 0, iw - w))
                y = float(np.clip(y0 + dy, 0, ih - h))
                gts.append((x, y, x + w, y + h))
                labels.append({
                    "image_id": image_id, "x": round(x, 4), "y": round(y, 4),
                    "w": round(w, 4), "h": round(h, 4),
                    "state": SYNTH_STATES[states[k]], "track_id": f"s{s:05d}_t{k}",
                    "tags": ["left", "vehicle"] if dc[k] else ["front", "vehicle"],
                    "sequence_id": f"s{s:05d}", "city": "synthetic",
                })
            hit = rng.random(len(gts)) >= miss_rate
            jitter = rng.uniform(-0.03, 0.03, size=(len(gts), 4))
            conf_tp = rng.uniform(0.3, 1.0, size=len(gts))
            flip = rng.random(len(gts)) < 0.05
            for k, (x0, y0, x1, y1) in enumerate(gts):
                if not hit[k]:
                    continue
                w, h = x1 - x0, y1 - y0
                jx0, jy0, jx1, jy1 = jitter[k] * np.array([w, h, w, h])
                state = SYNTH_STATES[states[k]]
                if flip[k]:
                    state = SYNTH_STATES[(states[k] + 1) % len(SYNTH_STATES)]
                dets.append({
                    "image_id": image_id, "x": round(x0 + jx0, 4), "y": round(y0 + jy0, 4),
                    "w": round(w + jx1 - jx0, 4), "h": round(h + jy1 - jy0, 4),
                    "confidence": round(float(conf_tp[k]), 6), "state": state,
                })
            n_fp = int(rng.binomial(fp_slots, fp_rate)) if fp_slots else 0
            if n_fp:
                fw = np.minimum(dist.sample(rng, n_fp), iw / 4)
                fh = np.minimum(fw * aspect_ratio, ih / 2)
                for (x0, y0, x1, y1), c, st in zip(_place(rng, fw, fh, image_size, gts),
                                                   rng.uniform(0.0, 0.8, size=n_fp),
                                                   rng.integers(0, 4, size=n_fp)):
                    dets.append({
                        "image_id": image_id, "x": round(x0, 4), "y": round(y0, 4),
                        "w": round(x1 - x0, 4), "h": round(y1 - y0, 4),
                        "confidence": round(float(c), 6), "state": SYNTH_STATES[st],
                    })
    return labels, dets


def write_dataset(labels_path, dets_path, **kwargs):
    labels, dets = synth_dataset(**kwargs)
    write_jsonl(labels_path, labels)
    write_jsonl(dets_path, dets)
    return len(labels), len(dets)


def write_bulk(labels_path, dets_path, n_labels=100_000, n_dets=1_000_000, n_images=10_000,
               seed=0, image_size=(512, 2048)):
    """Large stress-test files written with vectorized numpy.

    Objects are independent (no tracks, overlaps allowed). Roughly one
    detection in ten echoes a GT with jitter; the rest are random boxes.
    """
    rng = np.random.default_rng(seed)
    ih, iw = image_size
    g_img = np.sort(rng.integers(0, n_images, n_labels))
    gw = rng.uniform(3, 40, n_labels)
    gh = gw / 0.3
    gx = rng.uniform(0, iw - gw)
    gy = rng.uniform(0, ih - gh)
    g_state = rng.integers(0, 4, n_labels)
    with open(labels_path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(n_labels):
            fh.write(f'{{"image_id": "i{g_img[i]:06d}", "x": {gx[i]:.3f}, "y": {gy[i]:.3f}, '
                     f'"w": {gw[i]:.3f}, "h": {gh[i]:.3f}, "state": "{SYNTH_STATES[g_state[i]]}", '
                     f'"track_id": "t{i}", "tags": ["front", "vehicle"]}}\n')
    n_echo = min(n_dets // 10, n_labels)
    src = rng.choice(n_labels, n_echo, replace=False)
    jit = rng.uniform(-0.05, 0.05, (n_echo, 2))
    n_rand = n_dets - n_echo
    rw = rng.uniform(3, 40, n_rand)
    d_img = np.concatenate([g_img[src], rng.integers(0, n_images, n_rand)])
    dx = np.concatenate([gx[src] + jit[:, 0] * gw[src], rng.uniform(0, iw - rw)])
    dy = np.concatenate([gy[src] + jit[:, 1] * gh[src], rng.uniform(0, ih - rw / 0.3)])
    dw = np.concatenate([gw[src], rw])
    dh = dw / 0.3
    conf = rng.random(n_dets)
    d_state = rng.integers(0, 4, n_dets)
    with open(dets_path, "w", encoding="utf-8", newline="\n") as fh:
        for i in rng.permutation(n_dets):
            fh.write(f'{{"image_id": "i{d_img[i]:06d}", "x": {dx[i]:.3f}, "y": {dy[i]:.3f}, '
                     f'"w": {dw[i]:.3f}, "h": {dh[i]:.3f}, "confidence": {conf[i]:.6f}, '
                     f'"state": "{SYNTH_STATES[d_state[i]]}"}}\n')
    return n_labels, n_dets
