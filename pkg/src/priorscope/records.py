"""JSON-lines record schemas and streaming readers.

Labels, one object per line::

    {"image_id": "a/0001", "x": 10, "y": 20, "w": 4, "h": 12, "state": "red",
     "track_id": "t7", "tags": ["front", "vehicle"], "sequence_id": "s1", "city": "Bochum"}

Detections::

    {"image_id": "a/0001", "x": 10, "y": 20, "w": 4, "h": 12, "confidence": 0.93, "state": "red"}

Raw (pre-NMS) detections may carry ``state_scores`` (4 values) instead of
``state``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

from .lossaudit import STATES

log = logging.getLogger(__name__)


class RecordError(ValueError):
    def __init__(self, message, line=None, field_name=None, path=None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.field = field_name
        self.path = path

    def __str__(self):
        where = []
        if self.path is not None:
            where.append(str(self.path))
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field is not None:
            where.append(f"field '{self.field}'")
        return f"{', '.join(where)}: {self.message}" if where else self.message

    def to_dict(self) -> dict:
        return {"error": self.message, "path": None if self.path is None else str(self.path),
                "line": self.line, "field": self.field}


@dataclass(frozen=True, slots=True)
class GroundTruthRecord:
    image_id: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    state: str
    track_id: str | None = None
    tags: frozenset = frozenset()
    sequence_id: str | None = None
    city: str | None = None

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def box(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "x": self.x_min, "y": self.y_min,
                "w": self.x_max - self.x_min, "h": self.y_max - self.y_min,
                "state": self.state, "track_id": self.track_id, "tags": sorted(self.tags),
                "sequence_id": self.sequence_id, "city": self.city}


@dataclass(frozen=True, slots=True)
class DetectionRecord:
    image_id: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float
    state: str | None = None
    state_scores: tuple | None = None

    @property
    def box(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def to_json(self) -> dict:
        out = {"image_id": self.image_id, "x": self.x_min, "y": self.y_min,
               "w": self.x_max - self.x_min, "h": self.y_max - self.y_min,
               "confidence": self.confidence}
        if self.state is not None:
            out["state"] = self.state
        if self.state_scores is not None:
            out["state_scores"] = list(self.state_scores)
        return out


def _num(obj, key, line):
    if key not in obj:
        raise RecordError("missing required field", line, key)
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise RecordError(f"expected a finite number, got {v!r}", line, key)
    return float(v)


def _box(obj, line):
    x, y, w, h = (_num(obj, k, line) for k in ("x", "y", "w", "h"))
    if w < 0:
        raise RecordError("negative width", line, "w")
    if h < 0:
        raise RecordError("negative height", line, "h")
    return x, y, x + w, y + h


def _image_id(obj, line):
    if "image_id" not in obj or obj["image_id"] is None:
        raise RecordError("missing required field", line, "image_id")
    return str(obj["image_id"])


def _state(obj, line, required):
    s = obj.get("state")
    if s is None:
        if required:
            raise RecordError("missing required field", line, "state")
        return None
    s = str(s).lower()
    if s not in STATES:
        raise RecordError(f"unknown state {s!r}", line, "state")
    return s


def _opt_str(v):
    return None if v is None else str(v)


def parse_label(obj: dict, line=None) -> GroundTruthRecord:
    if not isinstance(obj, dict):
        raise RecordError("record must be a JSON object", line)
    tags = obj.get("tags", [])
    if not isinstance(tags, list):
        raise RecordError("tags must be a list", line, "tags")
    return GroundTruthRecord(_image_id(obj, line), *_box(obj, line), _state(obj, line, True),
                             _opt_str(obj.get("track_id")),
                             frozenset(str(t).lower() for t in tags),
                             _opt_str(obj.get("sequence_id")), _opt_str(obj.get("city")))


def parse_detection(obj: dict, line=None) -> DetectionRecord:
    if not isinstance(obj, dict):
        raise RecordError("record must be a JSON object", line)
    conf = _num(obj, "confidence", line)
    scores = obj.get("state_scores")
    if scores is not None:
        if (not isinstance(scores, list) or len(scores) != len(STATES)
                or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in scores)):
            raise RecordError("state_scores must be 4 finite numbers", line, "state_scores")
        scores = tuple(float(v) for v in scores)
    return DetectionRecord(_image_id(obj, line), *_box(obj, line), conf,
                           _state(obj, line, False), scores)


@dataclass
class StreamStats:
    lines: int = 0
    records: int = 0
    skipped: int = 0
    errors: list = field(default_factory=list)


def stream_records(path, kind="label", on_error="raise", stats: StreamStats | None = None):
    """Yield validated records from a JSON-lines file, one line at a time.

    ``on_error="skip"`` logs and counts malformed lines in ``stats`` instead
    of raising. Blank lines are ignored.
    """
    parse = {"label": parse_label, "detection": parse_detection}[kind]
    if on_error not in ("raise", "skip"):
        raise ValueError(f"on_error must be 'raise' or 'skip', got {on_error!r}")
    stats = stats if stats is not None else StreamStats()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            stats.lines += 1
            raw = raw.strip()
            if not raw:
                continue
            try:
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise RecordError(f"invalid JSON ({exc.msg})", lineno) from None
                rec = parse(obj, lineno)
            except RecordError as exc:
                exc.path, exc.line = path, lineno
                if on_error == "raise":
                    raise
                stats.skipped += 1
                if len(stats.errors) < 100:
                    stats.errors.append(str(exc))
                log.warning("skipping %s line %d: %s", path, lineno, exc)
                continue
            stats.records += 1
            yield rec


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
