"""Command-line interface tying the pipeline into reproducible experiments.

Subcommands: synth, supervise, loss, fit, eval, stability, bench. All JSON
outputs are byte-stable under identical inputs and carry a schema_version
field. Failures exit nonzero with a structured JSON error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .archive import (canonical_json, dump_json, load_json, read_archive, read_flow,
                      read_labels, read_points, write_flow, write_scene)
from .config import load_config
from .ensembling import mine_supervision
from .fitter import FitDivergence, fit, mine_targets
from .frames import FlowField
from .losses import total_loss
from .metrics import angle_between_deg, metric_report, supervision_stability
from .segmentation import ClusterSet
from .synth import SceneSpec, generate


class CliError(RuntimeError):
    pass


def _supervision_record(frame: int, horizon: int, mined: dict, diagnostics: bool) -> dict:
    record = {
        "schema_version": 1,
        "frame": frame,
        "horizon": horizon,
        "targets": [
            {"cluster_id": int(cid), "target": mined[cid].target.tolist()}
            for cid in sorted(mined)
        ],
    }
    if diagnostics:
        record["clusters"] = [_cluster_diagnostics(cid, mined[cid]) for cid in sorted(mined)]
    return record


def _cluster_diagnostics(cid: int, supervision) -> dict:
    pool = supervision.pool
    result = supervision.consensus
    return {
        "cluster_id": int(cid),
        "pool": [
            {
                "vector": c.vector.tolist(),
                "time_offset": int(c.time_offset),
                "source": c.source_kind,
                "frame_offset": None if c.frame_offset is None else int(c.frame_offset),
                "rank": None if c.rank is None else int(c.rank),
            }
            for c in pool.candidates
        ],
        "skipped_frame_offsets": [int(o) for o in pool.skipped_frame_offsets],
        "matrix": result.matrix.astype(int).tolist(),
        "weights": result.weights.tolist(),
        "scores": result.scores.tolist(),
        "winner": int(result.winner),
        "supporters": [int(b) for b in result.supporters],
        "target": result.target.tolist(),
    }


def _load_flow_or_zero(path, n_points: int) -> FlowField:
    if path is None:
        return FlowField.zeros(n_points)
    flow = read_flow(path)
    if len(flow) != n_points:
        raise CliError(f"flow file has {len(flow)} rows for {n_points} source points")
    return FlowField(flow)


def _targets_from_file(path) -> dict:
    data = load_json(path)
    return {int(rec["cluster_id"]): np.asarray(rec["target"], dtype=np.float64)
            for rec in data["targets"]}


def cmd_synth(args) -> int:
    spec = SceneSpec.from_dict(load_json(args.spec))
    scene = generate(spec)
    manifest = write_scene(scene, args.out)
    print(canonical_json({"schema_version": 1, "manifest": str(manifest),
                          "frames": scene.duration,
                          "points_per_frame": [len(f) for f in scene.frames]}))
    return 0


def cmd_supervise(args) -> int:
    config = load_config(args.config)
    data = read_archive(args.infile)
    window = data.window_at(args.frame, config.horizon)
    flow = _load_flow_or_zero(args.flow, len(window.source))
    mined = mine_supervision(window, flow, config.ensembling)
    record = _supervision_record(args.frame, config.horizon, mined, args.dump_diagnostics)
    dump_json(args.out, record)
    print(canonical_json({"schema_version": 1, "clusters": len(mined), "out": str(args.out)}))
    return 0


def cmd_loss(args) -> int:
    config = load_config(args.config)
    data = read_archive(args.infile)
    window = data.window_at(args.frame, config.horizon)
    flow = _load_flow_or_zero(args.flow, len(window.source))
    targets = _targets_from_file(args.targets)
    clusters = ClusterSet.from_frame(window.source)
    report = total_loss(flow, window, clusters, targets, config.loss)
    text = canonical_json(report.to_dict())
    if args.out:
        Path(args.out).write_bytes(text.encode() + b"\n")
    print(text)
    return 0


def cmd_fit(args) -> int:
    config = load_config(args.config)
    data = read_archive(args.infile)
    window = data.window_at(args.frame, config.horizon)
    flow_out, trace_out = (p.strip() for p in args.out.split(","))
    try:
        flow, trace = fit(window, None, config.fit, config.ensembling, config.loss)
    except FitDivergence as exc:
        dump_json(trace_out, exc.trace.to_dict())
        raise CliError(f"fit diverged: {exc}") from exc
    write_flow(flow_out, flow.flow)
    dump_json(trace_out, trace.to_dict())
    if args.csv:
        # Angular error of each cluster's mean flow against the scene's
        # ground-truth directions, when the archive carries them.
        gt_dirs = {}
        if data.target_directions is not None:
            for rec in data.target_directions["objects"]:
                row = rec["mean_flow"][args.frame]
                if row is not None:
                    gt_dirs[rec["index"]] = np.asarray(row)
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "total", "dcls_total", "static_loss",
                             "geom_loss", "loss_after_step", "mean_angular_error_deg"])
            for entry in trace.iterations:
                rep = entry["loss_after_remine"]
                angles = [angle_between_deg(rec["mean"], gt_dirs[rec["cluster_id"]])
                          for rec in entry["cluster_means"]
                          if rec["cluster_id"] in gt_dirs]
                writer.writerow([entry["iteration"], rep["total"], rep["dcls_total"],
                                 rep["static_loss"], rep["geom_loss"],
                                 entry["loss_after_step"],
                                 float(np.mean(angles)) if angles else ""])
    print(canonical_json({"schema_version": 1, "iterations": len(trace.iterations),
                          "stop_reason": trace.stop_reason,
                          "final_total": trace.totals()[-1] if trace.iterations else None}))
    return 0


def _format_cell(value) -> str:
    return "absent" if value is None else f"{value:.4f}"


def cmd_eval(args) -> int:
    config = load_config(args.config)
    points = read_points(args.points)
    pred = read_flow(args.pred)
    gt = read_flow(args.gt)
    labels = read_labels(args.labels)
    if not (len(pred) == len(gt) == len(labels) == len(points)):
        raise CliError("pred, gt, labels, and points must have equal point counts")
    report = metric_report(points, pred, gt, labels, config.eval)
    three = report["threeway"]
    bucket = report["bucket_normalized"]
    lines = [
        "Three-way EPE (m)",
        "  Mean      FD        FS        BS",
        "  " + "  ".join(_format_cell(three[k]).ljust(8) for k in ("mean", "FD", "FS", "BS")),
        "Dynamic bucket-normalized EPE",
        "  Mean      CAR       OTHER     PED       VRU",
        "  " + "  ".join(_format_cell(v).ljust(8) for v in
                         (bucket["mean"], bucket["per_class"]["CAR"],
                          bucket["per_class"]["OTHER"], bucket["per_class"]["PED"],
                          bucket["per_class"]["VRU"])),
    ]
    print("\n".join(lines))
    if args.out:
        dump_json(args.out, report)
    return 0


def cmd_stability(args) -> int:
    config = load_config(args.config)
    data = read_archive(args.scene)
    if data.target_directions is None:
        raise CliError("scene archive carries no ground-truth target directions")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in ("multi_frame", "two_frame"):
            raise CliError(f"unknown stability mode {mode!r}; "
                           "expected multi_frame and/or two_frame")
    gt_by_object = {rec["index"]: rec["mean_flow"] for rec in data.target_directions["objects"]}
    if args.object not in gt_by_object:
        raise CliError(f"object {args.object} not present in ground truth")
    gt_flow_rows = gt_by_object[args.object]

    h = config.horizon
    rows = []
    summary = {}
    for mode in modes:
        sequence = []
        for t in range(h, data.duration - 1):
            window = data.window_at(t, h)
            flow = FlowField.zeros(len(window.source))
            mined = mine_targets(window, flow, config.ensembling, mode)
            if args.object not in mined:
                continue
            gt_row = gt_flow_rows[t]
            sequence.append((t, mined[args.object].target,
                             None if gt_row is None else np.asarray(gt_row)))
        if len(sequence) < 2:
            raise CliError(f"mode {mode}: fewer than two frames with a mined target")
        targets = np.array([s[1] for s in sequence])
        gts = np.array([s[2] if s[2] is not None else np.zeros(3) for s in sequence])
        stats = supervision_stability(targets, gts)
        summary[mode] = {
            "mean_successive_change_deg": stats["mean_successive_change_deg"],
            "mean_error_to_gt_deg": stats["mean_error_to_gt_deg"],
            "frames": [s[0] for s in sequence],
        }
        for i, (t, tgt, gt_row) in enumerate(sequence):
            change = stats["successive_change_deg"][i - 1] if i else ""
            rows.append([mode, t, tgt[0], tgt[1], tgt[2],
                         "" if gt_row is None else gt_row[0],
                         "" if gt_row is None else gt_row[1],
                         "" if gt_row is None else gt_row[2],
                         change, stats["error_to_gt_deg"][i]])
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "frame", "fx", "fy", "fz", "gt_x", "gt_y", "gt_z",
                         "successive_change_deg", "error_to_gt_deg"])
        writer.writerows(rows)
    print(canonical_json({"schema_version": 1, "modes": summary}))
    return 0


def cmd_bench(args) -> int:
    config = load_config(args.config)
    data = read_archive(args.infile)
    frame = args.frame if args.frame is not None else config.horizon
    seconds = []
    clusters = 0
    for _ in range(args.repeat):
        start = time.perf_counter()
        window = data.window_at(frame, config.horizon)
        flow = FlowField.zeros(len(window.source))
        mined = mine_supervision(window, flow, config.ensembling)
        seconds.append(time.perf_counter() - start)
        clusters = len(mined)
    print(canonical_json({
        "schema_version": 1,
        "repeat": args.repeat,
        "frame": frame,
        "points_per_frame": [len(f) for f in data.frames],
        "clusters": clusters,
        "seconds": seconds,
        "mean_seconds": float(np.mean(seconds)),
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfm",
        description="Multi-frame consensus supervision mining, losses, and "
                    "metrics for LiDAR scene flow.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene archive")
    p.add_argument("--spec", required=True, help="SceneSpec JSON file")
    p.add_argument("--out", required=True, help="output archive directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("supervise", help="mine per-cluster supervision targets")
    p.add_argument("--in", dest="infile", required=True, help="scene archive directory")
    p.add_argument("--frame", type=int, required=True, help="source frame index t")
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--flow", default=None,
                   help="current flow estimate payload (default: zero flow)")
    p.add_argument("--out", required=True, help="targets JSON output path")
    p.add_argument("--dump-diagnostics", action="store_true",
                   help="include pools, matrices, weights, and scores")
    p.set_defaults(func=cmd_supervise)

    p = sub.add_parser("loss", help="evaluate the total loss for a flow field")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--flow", required=True, help="flow payload file")
    p.add_argument("--targets", required=True, help="targets JSON from supervise")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, help="also write the report here")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("fit", help="optimize a flow field against the loss")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, metavar="FLOW.bin,TRACE.json",
                   help="comma-separated flow payload and trace JSON paths")
    p.add_argument("--csv", default=None, help="plot-ready per-iteration CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="three-way and bucket-normalized EPE")
    p.add_argument("--pred", required=True, help="predicted flow payload")
    p.add_argument("--gt", required=True, help="ground-truth flow payload")
    p.add_argument("--labels", required=True, help="per-point class label payload")
    p.add_argument("--points", required=True, help="source frame point payload")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stability", help="supervision direction stability experiment")
    p.add_argument("--scene", required=True, help="scene archive with ground truth")
    p.add_argument("--modes", default="multi_frame,two_frame")
    p.add_argument("--object", type=int, default=0, help="tracked object index")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("bench", help="wall-clock timing of supervision mining")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--frame", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, KeyError) as exc:
        sys.stderr.write(canonical_json({
            "schema_version": 1,
            "error": {"type": type(exc).__name__, "message": str(exc)},
        }) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
