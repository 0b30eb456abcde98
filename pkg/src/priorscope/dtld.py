"""Best-effort converter from DTLD label JSON to native label records.

Only enabled in the CLI when ``PRIORSCOPE_ENABLE_DTLD=1``; the upstream
schema has changed between releases. Understood layout::

    {"images": [{"image_path": ".../city/seq/img.tiff", "labels": [
        {"x": .., "y": .., "w": .., "h": .., "track_id": ..,
         "attributes": {"direction": "front", "pictogram": "circle", "state": "red", ...}}]}]}
"""
from __future__ import annotations

import json
import os
from pathlib import PurePosixPath

ENV_FLAG = "PRIORSCOPE_ENABLE_DTLD"

_PICTOGRAM_AUDIENCE = {"pedestrian": "pedestrian", "bicycle": "cyclist", "cyclist": "cyclist",
                       "tram": "tram", "bus": "bus", "pedestrian_bicycle": "pedestrian"}
_STATE = {"off": "off", "red": "red", "yellow": "yellow", "green": "green",
          "red_yellow": "yellow", "unknown": "off"}


def enabled() -> bool:
    return os.environ.get(ENV_FLAG, "") in ("1", "true", "yes")


def convert(doc: dict):
    """Yield native label dicts from a parsed DTLD document."""
    for img in doc.get("images", []):
        path = PurePosixPath(str(img.get("image_path", "")))
        image_id = str(path.with_suffix(""))
        parts = path.parts
        city = parts[-3] if len(parts) >= 3 else None
        seq = parts[-2] if len(parts) >= 2 else None
        for lab in img.get("labels", []):
            attrs = lab.get("attributes", {}) or {}
            direction = str(attrs.get("direction", "front")).lower()
            audience = _PICTOGRAM_AUDIENCE.get(str(attrs.get("pictogram", "")).lower(), "vehicle")
            yield {
                "image_id": image_id,
                "x": lab["x"], "y": lab["y"], "w": lab["w"], "h": lab["h"],
                "state": _STATE.get(str(attrs.get("state", "off")).lower(), "off"),
                "track_id": None if lab.get("track_id") is None else str(lab["track_id"]),
                "tags": sorted({direction, audience}),
                "sequence_id": seq,
                "city": city,
            }


def convert_file(src, dst) -> int:
    with open(src, encoding="utf-8") as fh:
        doc = json.load(fh)
    n = 0
    with open(dst, "w", encoding="utf-8", newline="\n") as out:
        for rec in convert(doc):
            out.write(json.dumps(rec, sort_keys=True) + "\n")
            n += 1
    return n
