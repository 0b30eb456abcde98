"""Command-line entry point: ``priorscope <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 internal error. With
``--json-errors`` failures are printed to stderr as one JSON object.
Log verbosity follows ``PRIORSCOPE_LOG`` (e.g. ``DEBUG``).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__, dtld, evalkit, geometry, lossaudit, matching, netgraph, nms, priors
from .kernels import BACKEND
from .netgraph import ConfigError
from .records import RecordError, StreamStats, stream_records, write_jsonl
from .synth import write_dataset

log = logging.getLogger("priorscope")

DATA_DIR = Path(__file__).parent / "data"


class ValidationError(ValueError):
    pass


def _resolve(path: str) -> Path:
    """Existing path, or a file shipped in the package data directory."""
    p = Path(path)
    if p.exists():
        return p
    shipped = DATA_DIR / p.name
    if shipped.exists():
        return shipped
    raise ValidationError(f"file not found: {path}")


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _emit(path, text: str, args, inputs) -> None:
    """Write a report plus its ``.manifest.json`` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    _manifest(path, args, inputs)


def _manifest(path, args, inputs) -> None:
    snapshot = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "subcommand": args.command,
        "inputs": {str(p): _digest(p) for p in inputs},
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in snapshot.items()},
        "tool_version": __version__,
        "kernel_backend": BACKEND,
        "wall_clock": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with open(f"{path}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_layout(netcfg, priorcfg, input_size):
    graph = netgraph.load_netconfig_file(_resolve(netcfg))
    analysis = netgraph.analyze(graph, input_size)
    with open(_resolve(priorcfg), encoding="utf-8") as fh:
        cfg = priors.load_priorconfig(fh.read())
    return priors.resolve_layout(cfg, analysis)


# -- subcommands -------------------------------------------------------------

def cmd_rf(args):
    path = _resolve(args.config)
    analysis = netgraph.analyze(netgraph.load_netconfig_file(path), netgraph.parse_size(args.input))
    fmt = {"text": analysis.to_text, "csv": analysis.to_csv, "json": analysis.to_json}[args.format]
    out = fmt(report_only=args.table)
    if args.emit:
        _emit(args.emit, out, args, [path])
    else:
        sys.stdout.write(out)


def cmd_stride_advice(args):
    adv = geometry.max_allowed_stride(args.iou, args.width)
    if args.json:
        print(json.dumps(adv.to_dict(), sort_keys=True))
    else:
        print(f"target IoU        {adv.target_iou:g}")
        print(f"epsilon           {adv.epsilon:.4f}")
        print(f"max stride (frac) {adv.max_stride_fraction:.4f}")
        print(f"max stride (px)   {adv.max_stride_px():.4f}  for width {adv.object_width:g} px")


def cmd_priors(args):
    size = netgraph.parse_size(args.input)
    layout = _load_layout(args.netcfg, args.priorcfg, size)
    pb = priors.generate(layout, size)
    dx, dy = priors.effective_stride(layout)
    log.info("%d priors, effective stride %.3f x %.3f px", len(pb), dx, dy)
    if args.emit:
        lines = ["index,cell_y,cell_x,offset_index,width_index,x_min,y_min,x_max,y_max"]
        for i in range(len(pb)):
            b = pb.boxes[i]
            lines.append(f"{i},{pb.cell_y[i]},{pb.cell_x[i]},{pb.offset_index[i]},"
                         f"{pb.width_index[i]},{b[0]:.6f},{b[1]:.6f},{b[2]:.6f},{b[3]:.6f}")
        _emit(args.emit, "\n".join(lines) + "\n", args,
              [_resolve(args.netcfg), _resolve(args.priorcfg)])
    print(json.dumps({"layer": layout.name, "feature_size": list(layout.feature_size),
                      "cumulative_stride": layout.cumulative_stride, "count": len(pb),
                      "effective_stride": [dx, dy]}, sort_keys=True))


def _labels_by_image(path, cfg, on_error):
    out = defaultdict(list)
    for rec in stream_records(path, "label", on_error):
        out[rec.image_id].append(rec)
    return out


def cmd_coverage(args):
    size = netgraph.parse_size(args.input)
    layout = _load_layout(args.netcfg, args.priorcfg, size)
    index = matching.PriorIndex(priors.generate(layout, size).boxes)
    cfg = evalkit.EvalConfig(iou_threshold=args.iou, min_width=0.0,
                             dc_rule=_dc_rule(args.dc_rule))
    boxes = []
    for _, gts in sorted(_labels_by_image(args.labels, cfg, args.on_error).items()):
        boxes.extend(g.box for g in gts if not cfg.is_dc(g))
    _, best_iou = matching.best_overlaps(index, boxes)
    covered = (best_iou >= args.iou).tolist()
    bins = matching.coverage_histogram(np.array(covered, dtype=bool), boxes, args.bin)
    out = matching.coverage_csv(bins)
    if args.emit:
        _emit(args.emit, out, args, [_resolve(args.netcfg), _resolve(args.priorcfg),
                                     Path(args.labels)])
    else:
        sys.stdout.write(out)
    total = len(covered)
    print(json.dumps({"ground_truths": total, "covered": int(sum(covered)),
                      "coverage": (sum(covered) / total) if total else 0.0}, sort_keys=True),
          file=sys.stderr if not args.emit else sys.stdout)


def _read_pred_rows(path):
    rows = defaultdict(lambda: ([], [], []))
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                image_id = str(obj["image_id"])
                c, lo, st = rows[image_id]
                c.append([float(v) for v in obj["conf"]])
                lo.append([float(v) for v in obj["loc"]])
                st.append([float(v) for v in obj["state"]])
            except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
                raise RecordError(f"bad prediction row ({exc})", lineno, None, path) from None
    return {k: lossaudit.PredictionRows.from_arrays(*v) for k, v in rows.items()}


def cmd_loss(args):
    size = netgraph.parse_size(args.input)
    layout = _load_layout(args.netcfg, args.priorcfg, size)
    pb = priors.generate(layout, size)
    index = matching.PriorIndex(pb.boxes)
    cfg = evalkit.EvalConfig(iou_threshold=args.iou, dc_rule=_dc_rule(args.dc_rule))
    labels = _labels_by_image(args.labels, cfg, args.on_error)
    preds = _read_pred_rows(args.pred_rows)
    total = None
    for image_id in sorted(preds):
        gts = [g for g in labels.get(image_id, []) if not cfg.is_dc(g)]
        m = matching.match(index, [g.box for g in gts], args.iou)
        br = lossaudit.evaluate_loss(pb, m, preds[image_id], [g.box for g in gts],
                                     [g.state for g in gts], args.alpha, args.beta,
                                     args.negatives)
        total = br if total is None else total + br
    if total is None:
        total = lossaudit.LossBreakdown(0.0, 0.0, 0.0, 0, args.alpha, args.beta, 0.0, 0)
    print(json.dumps(total.to_dict(), sort_keys=True))


def cmd_nms(args):
    by_image = defaultdict(list)
    for d in stream_records(args.raw_dets, "detection", args.on_error):
        scores = d.state_scores
        if scores is None:
            scores = [0.0] * len(lossaudit.STATES)
            if d.state is not None:
                scores[lossaudit.STATES.index(d.state)] = 1.0
        by_image[d.image_id].append(nms.Detection(
            geometry.BoundingBox(*d.box), d.confidence, tuple(scores), d.image_id))
    rows = []
    for image_id in sorted(by_image):
        rows.extend(f.to_record() for f in nms.suppress(by_image[image_id], args.iou))
    if args.emit:
        write_jsonl(args.emit, rows)
        _manifest(args.emit, args, [Path(args.raw_dets)])
    else:
        for r in rows:
            print(json.dumps(r, sort_keys=True))


def _dc_rule(name):
    return {"default": evalkit.default_dc_rule, "none": evalkit.no_dc_rule}[name]


def cmd_eval(args):
    cfg = evalkit.EvalConfig(iou_threshold=args.iou, min_width=args.min_width,
                             dc_rule=_dc_rule(args.dc_rule),
                             state=None if args.state == "all" else args.state)
    stats = {"labels": StreamStats(), "detections": StreamStats()}
    ev = evalkit.evaluate_files(args.labels, args.dets, cfg, args.on_error, stats)
    curve = ev.roc(args.grid)
    inputs = [Path(args.labels), Path(args.dets)]
    if args.emit_roc:
        _emit(args.emit_roc, curve.to_csv(), args, inputs)
    threshold = evalkit.closest_threshold(curve, args.operating_fppi)
    if args.emit_width:
        _emit(args.emit_width, evalkit.width_csv(ev.recall_by_width(threshold, args.width_bin)),
              args, inputs)
    tracks = ev.track_recall(threshold)
    if args.emit_track:
        _emit(args.emit_track, tracks.to_csv(), args, inputs)
    result = evalkit.summary(ev, curve)
    result["operating_point"] = {"fppi_target": args.operating_fppi, "threshold": threshold,
                                 "track_share_0.9_1.0": round(tracks.share_high, 12),
                                 "tracks": len(tracks.tracks),
                                 "missing_track_ids": tracks.missing_track_ids}
    result["skipped_lines"] = {k: v.skipped for k, v in stats.items()}
    if not args.lamr:
        result.pop("lamr")
    print(json.dumps(result, indent=2, sort_keys=True))


def cmd_synth(args):
    n_lab, n_det = write_dataset(args.out_labels, args.out_dets, seed=args.seed,
                                 n_images=args.n_images, width_distribution=args.widths,
                                 fp_rate=args.fp_rate, miss_rate=args.miss_rate,
                                 objects_per_image=args.objects, fp_slots=args.fp_slots,
                                 frames_per_track=args.frames, dc_rate=args.dc_rate)
    for p in (args.out_labels, args.out_dets):
        _manifest(p, args, [])
    print(json.dumps({"labels": n_lab, "detections": n_det}, sort_keys=True))


def cmd_import_dtld(args):
    n = dtld.convert_file(args.src, args.dst)
    _manifest(args.dst, args, [Path(args.src)])
    print(json.dumps({"labels": n}))


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="priorscope", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--json-errors", action="store_true",
                   help="report failures as a JSON object on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("rf", help="stride and receptive field per layer")
    s.add_argument("config")
    s.add_argument("--input", required=True, help="HxW, e.g. 512x2048")
    s.add_argument("--table", action="store_true", help="only rows flagged report: true")
    s.add_argument("--format", choices=("text", "csv", "json"), default="text")
    s.add_argument("--emit")
    s.set_defaults(func=cmd_rf)

    s = sub.add_parser("stride-advice", help="largest prior stride for a target IoU")
    s.add_argument("--iou", type=float, required=True)
    s.add_argument("--width", type=float, required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stride_advice)

    s = sub.add_parser("priors", help="generate prior boxes for a layer")
    s.add_argument("netcfg")
    s.add_argument("priorcfg")
    s.add_argument("--input", required=True)
    s.add_argument("--emit")
    s.set_defaults(func=cmd_priors)

    s = sub.add_parser("coverage", help="GT coverage by prior boxes per width")
    s.add_argument("netcfg")
    s.add_argument("priorcfg")
    s.add_argument("labels")
    s.add_argument("--input", default="512x2048")
    s.add_argument("--iou", type=float, default=0.3)
    s.add_argument("--bin", type=float, default=1.0)
    s.add_argument("--dc-rule", choices=("default", "none"), default="default")
    s.add_argument("--on-error", choices=("raise", "skip"), default="raise")
    s.add_argument("--emit")
    s.set_defaults(func=cmd_coverage)

    s = sub.add_parser("loss", help="evaluate the training loss on prediction rows")
    s.add_argument("netcfg")
    s.add_argument("priorcfg")
    s.add_argument("labels")
    s.add_argument("pred_rows")
    s.add_argument("--input", default="512x2048")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--iou", type=float, default=0.3)
    s.add_argument("--negatives", choices=("hard", "all"), default="hard")
    s.add_argument("--dc-rule", choices=("default", "none"), default="default")
    s.add_argument("--on-error", choices=("raise", "skip"), default="raise")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("nms", help="class-independent NMS on raw detections")
    s.add_argument("raw_dets")
    s.add_argument("--iou", type=float, default=nms.DEFAULT_IOU)
    s.add_argument("--on-error", choices=("raise", "skip"), default="raise")
    s.add_argument("--emit")
    s.set_defaults(func=cmd_nms)

    s = sub.add_parser("eval", help="ROC, LAMR, per-width and track recall")
    s.add_argument("labels")
    s.add_argument("dets")
    s.add_argument("--iou", type=float, default=0.3)
    s.add_argument("--min-width", type=float, default=0.0)
    s.add_argument("--grid", type=int, default=1000)
    s.add_argument("--state", choices=("all",) + lossaudit.STATES, default="all")
    s.add_argument("--dc-rule", choices=("default", "none"), default="default")
    s.add_argument("--operating-fppi", type=float, default=1.0)
    s.add_argument("--width-bin", type=float, default=1.0)
    s.add_argument("--emit-roc")
    s.add_argument("--emit-width")
    s.add_argument("--emit-track")
    s.add_argument("--lamr", action="store_true")
    s.add_argument("--on-error", choices=("raise", "skip"), default="raise")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic labels/detections pair")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-images", type=int, default=100)
    s.add_argument("--widths", default="uniform:3:40")
    s.add_argument("--fp-rate", type=float, default=0.0)
    s.add_argument("--miss-rate", type=float, default=0.0)
    s.add_argument("--objects", type=int, default=5)
    s.add_argument("--fp-slots", type=int, default=20)
    s.add_argument("--frames", type=int, default=10)
    s.add_argument("--dc-rate", type=float, default=0.0)
    s.add_argument("--out-labels", required=True)
    s.add_argument("--out-dets", required=True)
    s.set_defaults(func=cmd_synth)

    if dtld.enabled():
        s = sub.add_parser("import-dtld", help="convert DTLD label JSON (experimental)")
        s.add_argument("src")
        s.add_argument("dst")
        s.set_defaults(func=cmd_import_dtld)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PRIORSCOPE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help/--version exit 0; usage errors count as validation failures
        return 0 if exc.code in (0, None) else 1
    try:
        args.func(args)
    except (ConfigError, RecordError, ValidationError, ValueError, FileNotFoundError) as exc:
        _fail(args, exc, "validation")
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        _fail(args, exc, "internal")
        return 2
    return 0


def _fail(args, exc, kind):
    if args.json_errors:
        payload = exc.to_dict() if hasattr(exc, "to_dict") else {"error": str(exc)}
        payload["kind"] = kind
        payload["type"] = type(exc).__name__
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    else:
        print(f"priorscope: {kind} error: {exc}", file=sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
