"""Acceptance criteria 1-8, one test each; a PASS/FAIL line per criterion is
printed and repeated in the terminal summary."""
import json
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from priorscope import cli, evalkit, geometry, netgraph, priors, synth
from priorscope.evalkit import EvalConfig, Evaluator, evaluate_files
from priorscope.lossaudit import PredictionRows, evaluate_loss
from priorscope.matching import best_overlaps, match
from priorscope.nms import suppress_arrays

import oracles

ROOT = Path(__file__).resolve().parents[1]
FIX = Path(__file__).parent / "fixtures"


@contextmanager
def criterion(n, detail):
    info = {"detail": detail}
    try:
        yield info
    except BaseException:
        ACCEPTANCE[n] = (False, info["detail"])
        print(f"criterion {n}: FAIL - {info['detail']}")
        raise
    ACCEPTANCE[n] = (True, info["detail"])
    print(f"criterion {n}: PASS - {info['detail']}")


def best_time(fn, reps=5):
    best = float("inf")
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def test_criterion_1_stride_bound(capsys):
    with criterion(1, "stride advice") as c:
        assert cli.main(["stride-advice", "--iou", "0.5", "--width", "5", "--json"]) == 0
        d = json.loads(capsys.readouterr().out)
        dt = best_time(lambda: geometry.max_allowed_stride(0.5, 5), 50)
        c["detail"] = (f"delta={d['max_stride_fraction']:.4f} max_stride={d['max_stride_px']:.4f}px "
                       f"compute={dt * 1e6:.1f}us")
        assert abs(d["max_stride_fraction"] - 0.343) <= 0.005
        assert abs(d["max_stride_px"] - 1.72) <= 0.03
        assert dt < 1e-3


def test_criterion_2_table(capsys):
    table = {
        "input": (1, 1, 1, 512, 2048), "conv_1": (2, 3, 3, 255, 1023),
        "conv_2": (2, 7, 7, 253, 1021), "conv_3": (2, 11, 11, 253, 1021),
        "conv_4": (4, 23, 23, 124, 508), "inception_a1": (8, 31, 63, 62, 254),
        "inception_a2": (8, 31, 95, 62, 254), "inception_a3": (8, 31, 127, 62, 254),
        "inception_b1": (16, 47, 351, 31, 127), "inception_b2": (16, 47, 543, 31, 127),
        "inception_b3": (16, 47, 735, 31, 127), "inception_b4": (16, 47, 927, 31, 127),
        "inception_c1": (32, 79, 1183, 15, 63), "inception_c2": (32, 79, 1311, 15, 63),
    }
    with criterion(2, "rf table rows") as c:
        assert cli.main(["rf", "inception_v3.netcfg", "--input", "512x2048", "--table",
                         "--format", "json"]) == 0
        rows = json.loads(capsys.readouterr().out)["layers"]
        got = {r["name"]: (r["stride"], r["rf_min"], r["rf_max"], r["height"], r["width"]) for r in rows}
        text = (cli.DATA_DIR / "inception_v3.netcfg").read_text()
        dt = best_time(lambda: netgraph.analyze(netgraph.load_netconfig(text), (512, 2048)))
        wrong = [k for k in table if got.get(k) != table[k]]
        c["detail"] = f"{len(table) - len(wrong)}/14 rows exact, load+analyze={dt * 1e3:.2f}ms"
        assert not wrong and len(got) == 14
        assert dt < 10e-3


def test_criterion_3_coverage(capsys, tmp_path):
    with criterion(3, "coverage contrast") as c:
        labels, _ = synth.synth_dataset(seed=0, n_images=2000, objects_per_image=5,
                                        width_distribution="uniform:3:40", frames_per_track=1)
        lab = tmp_path / "labels.jsonl"
        synth.write_jsonl(lab, labels)
        res = {}
        for name in ("original_b4.priorcfg", "adapted_b4.priorcfg"):
            out = tmp_path / f"{name}.csv"
            t = time.perf_counter()
            assert cli.main(["coverage", "inception_v3.netcfg", name, str(lab), "--iou", "0.3",
                             "--bin", "1", "--emit", str(out)]) == 0
            res[name] = (time.perf_counter() - t, out.read_text())
            capsys.readouterr()

        def frac(csv_text, lo):
            cov = tot = 0
            for line in csv_text.splitlines()[1:]:
                a, _, k, _, n, _ = line.split(",")
                if float(a) >= lo:
                    cov, tot = cov + int(k), tot + int(n)
            return cov / tot, tot

        # the CSV bins are [k, k+1), so the <=6 px subset is scored directly
        small = np.array([[r["x"], r["y"], r["x"] + r["w"], r["y"] + r["h"]]
                          for r in labels if r["w"] <= 6])
        size = (512, 2048)
        lay = cli._load_layout("inception_v3.netcfg", "original_b4.priorcfg", size)
        _, small_iou = best_overlaps(priors.generate(lay, size).boxes, small)
        orig_small = (float(np.mean(small_iou >= 0.3)), len(small))
        adapted_all = frac(res["adapted_b4.priorcfg"][1], 3)
        slow = max(t for t, _ in res.values())
        c["detail"] = (f"original <=6px covered {orig_small[0]:.1%} (need <20%, n={orig_small[1]}), "
                       f"adapted >=3px covered {adapted_all[0]:.2%} (need >90%), "
                       f"max runtime {slow:.2f}s for {len(labels)} GTs")
        assert len(labels) == 10_000 and len(small) > 0
        assert adapted_all[0] > 0.90
        assert slow < 5.0
        assert orig_small[0] < 0.20


def test_criterion_4_oracles():
    with criterion(4, "oracle equivalence") as c:
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(0, 201))
            xy = rng.uniform(0, 150, (n, 2))
            b = np.hstack([xy, xy + rng.uniform(3, 30, (n, 2))])
            conf = np.round(rng.random(n), 2)
            keep, _ = suppress_arrays(b, conf, 0.35)
            assert keep.tolist() == oracles.nms([tuple(r) for r in b], conf.tolist(), 0.35)
        for _ in range(500):
            n_p, n_g = int(rng.integers(0, 51)), int(rng.integers(0, 11))
            pri = np.hstack([xy := rng.uniform(0, 60, (n_p, 2)), xy + rng.uniform(2, 30, (n_p, 2))])
            gts = np.hstack([xy := rng.uniform(0, 60, (n_g, 2)), xy + rng.uniform(2, 30, (n_g, 2))])
            thr = float(rng.uniform(0.1, 0.9))
            m = match(pri, gts, thr)
            _, _, ref_bi = oracles.match([tuple(r) for r in pri], [tuple(r) for r in gts], thr)
            assert m.gt_covered.tolist() == [v >= thr for v in ref_bi]
        worst = 0.0
        states = ["off", "red", "yellow", "green"]
        for _ in range(200):
            n_p, n_g = int(rng.integers(5, 30)), int(rng.integers(1, 4))
            pri = np.hstack([xy := rng.uniform(0, 40, (n_p, 2)), xy + rng.uniform(4, 20, (n_p, 2))])
            gts = pri[rng.integers(0, n_p, n_g)] + rng.uniform(-2, 2, (n_g, 4))
            gts[:, 2:] = np.maximum(gts[:, 2:], gts[:, :2] + 1)
            st = [states[i] for i in rng.integers(0, 4, n_g)]
            preds = PredictionRows.from_arrays(rng.normal(0, 2, (n_p, 2)), rng.normal(0, 1, (n_p, 4)),
                                               rng.normal(0, 2, (n_p, 4)))
            m = match(pri, gts, 0.3)
            a, b = float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 2))
            got = evaluate_loss(pri, m, preds, gts, st, a, b).total
            ref = oracles.loss([tuple(r) for r in pri], m.prior_gt.tolist(), preds.conf.tolist(),
                               preds.loc.tolist(), preds.state.tolist(), [tuple(g) for g in gts],
                               st, a, b)
            worst = max(worst, abs(got - ref))
        c["detail"] = f"NMS 1000/1000, matching 500/500, loss 200/200 (max |diff| {worst:.1e})"
        assert worst < 1e-9


def test_criterion_5_metrics():
    with criterion(5, "metric correctness") as c:
        ev = evaluate_files(FIX / "eval5_labels.jsonl", FIX / "eval5_dets.jsonl", EvalConfig(0.5))
        curve = ev.roc(10)
        assert curve.tp.tolist() == [2, 2, 2, 2, 2, 2, 2, 1, 1, 0]
        assert curve.fp.tolist() == [7, 6, 5, 4, 3, 2, 1, 1, 0, 0]
        assert evalkit.lamr(curve) == 13 / 18
        th = evalkit.closest_threshold(curve, 1.0)
        bins = {b.lo: (b.n, b.hits) for b in ev.recall_by_width(th, 1) if b.n}
        assert bins == {4: (1, 0), 10: (4, 1), 20: (1, 1)}
        tr = ev.track_recall(th)
        assert tr.tracks == {"T1": (3, 2), "T2": (2, 0)} and tr.missing_track_ids == 1

        rng = np.random.default_rng(99)
        agg = Evaluator(EvalConfig(0.5))
        total_pos = 0
        for _ in range(10_000):
            n_g, n_d = int(rng.integers(0, 8)), int(rng.integers(0, 12))
            g = np.hstack([xy := rng.uniform(0, 60, (n_g, 2)), xy + rng.uniform(2, 15, (n_g, 2))])
            d = np.hstack([xy := rng.uniform(0, 60, (n_d, 2)), xy + rng.uniform(2, 15, (n_d, 2))])
            if n_g and n_d:
                near = rng.random(n_d) < 0.6
                d[near] = g[rng.integers(0, n_g, near.sum())] + rng.uniform(-2, 2, (near.sum(), 4))
                d[:, 2:] = np.maximum(d[:, 2:], d[:, :2] + 0.5)
            dc = rng.random(n_g) < 0.3
            conf = rng.random(n_d)
            status, _, claim = evalkit.score_arrays(g, dc, d, conf, 0.5)
            tp = int(np.sum(status == evalkit.TP))
            fn = int(np.sum(~dc & ~np.isfinite(claim)))
            assert tp + fn == int(np.sum(~dc))
            agg.add_arrays(g, dc, [None] * n_g, d, conf)
            total_pos += int(np.sum(~dc))
        c2 = agg.roc(100)
        assert np.all(c2.tp + c2.fn == total_pos)
        c["detail"] = "fixture ROC/LAMR/width/track exact; conservation on 10000 fuzzed images"


def test_criterion_6_invariants():
    with criterion(6, "invariant suite") as c:
        proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-m", "invariant",
                               "-p", "no:cacheprovider", str(ROOT / "tests")],
                              capture_output=True, text=True, cwd=ROOT)
        tail = [ln for ln in proc.stdout.splitlines() if ln.strip()][-1]
        failed = [ln.split()[1] for ln in proc.stdout.splitlines() if ln.startswith("FAILED")]
        c["detail"] = f"{tail}" + (f"; failing: {', '.join(failed)}" if failed else "")
        assert proc.returncode == 0


def test_criterion_7_out_of_scope_stated():
    with criterion(7, "non-reproducible results stated") as c:
        readme = (ROOT / "README.md").read_text()
        section = readme.split("## Not reproduced", 1)
        assert len(section) == 2
        body = section[1].split("\n## ", 1)[0]
        for needle in ("LAMR", "trained", "DTLD", "fps"):
            assert needle in body
        c["detail"] = "README lists trained-network results as out of scope"


def test_criterion_8_performance(tmp_path):
    with criterion(8, "streaming eval performance") as c:
        lab, det = tmp_path / "labels.jsonl", tmp_path / "dets.jsonl"
        synth.write_bulk(lab, det, n_labels=100_000, n_dets=1_000_000, n_images=10_000, seed=8)
        probe = ("import resource, sys, time\n"
                 "from priorscope import cli\n"
                 "t = time.perf_counter()\n"
                 "code = cli.main(sys.argv[1:])\n"
                 "dt = time.perf_counter() - t\n"
                 "rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss\n"
                 "print('PROBE', code, dt, rss, file=sys.stderr)\n")
        proc = subprocess.run([sys.executable, "-c", probe, "eval", str(lab), str(det),
                               "--iou", "0.3", "--lamr"], capture_output=True, text=True)
        line = [ln for ln in proc.stderr.splitlines() if ln.startswith("PROBE")][-1]
        _, code, dt, rss_kb = line.split()
        dt, rss_mb = float(dt), int(rss_kb) / 1024
        summary = json.loads(proc.stdout)
        c["detail"] = f"1M detections x 100k labels in {dt:.1f}s, peak RSS {rss_mb:.0f} MB"
        assert int(code) == 0 and summary["ground_truths"] == 100_000
        assert dt < 30 and rss_mb < 2048
