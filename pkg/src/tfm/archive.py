"""On-disk formats: binary point/label payloads, scene manifests, and a
byte-stable canonical JSON writer.

Payload format ("TFM1"): a fixed 16-byte header — magic ``TFM1`` (4 bytes),
4 reserved zero bytes, point count as little-endian uint64 — followed by the
payload: little-endian float32 triplets for points/flows, or one
little-endian int32 per point for labels (-1 static, -2 dynamic noise,
>= 0 cluster id). Double precision is used everywhere in memory; files are
the only single-precision surface.

JSON outputs are byte-stable: keys sorted, floats at 17 significant digits,
id-keyed maps emitted as arrays of records sorted by id.
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .frames import Frame, align_window
from .geometry import RigidTransform
from .synth import Scene

MAGIC = b"TFM1"
_HEADER = struct.Struct("<4s4xQ")
SCHEMA_VERSION = 1


class ArchiveError(ValueError):
    """Malformed payload, manifest, or missing sidecar file."""


def canonical_json(obj) -> str:
    """Serialize with sorted keys and %.17g floats; identical inputs give
    identical bytes. Non-finite floats are rejected (use null instead)."""
    out = []
    _emit(obj, out)
    return "".join(out)


def _emit(obj, out: list):
    if obj is None or isinstance(obj, bool):
        out.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            raise ValueError("non-finite float in JSON output; encode as null")
        out.append(format(value, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {type(key)}")
            if i:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _emit(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)) or isinstance(obj, np.ndarray):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        out.append("[")
        for i, item in enumerate(seq):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj)} canonically")


def dump_json(path, obj):
    Path(path).write_bytes(canonical_json(obj).encode("utf-8") + b"\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text("utf-8"))


def _write_payload(path, data: bytes, count: int):
    Path(path).write_bytes(_HEADER.pack(MAGIC, count) + data)


def _read_payload(path, item_size: int):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ArchiveError(f"{path}: truncated header")
    magic, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ArchiveError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    body = raw[_HEADER.size:]
    if len(body) != count * item_size:
        raise ArchiveError(f"{path}: payload is {len(body)} bytes, header declares "
                           f"{count} items of {item_size} bytes")
    return body, count


def write_points(path, points):
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3),
                               dtype="<f4")
    _write_payload(path, pts.tobytes(), len(pts))


def read_points(path) -> np.ndarray:
    body, count = _read_payload(path, 12)
    return np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(count, 3)


write_flow = write_points
read_flow = read_points


def write_labels(path, labels):
    lab = np.ascontiguousarray(np.asarray(labels, dtype=np.int32), dtype="<i4").reshape(-1)
    _write_payload(path, lab.tobytes(), len(lab))


def read_labels(path) -> np.ndarray:
    body, count = _read_payload(path, 4)
    return np.frombuffer(body, dtype="<i4").astype(np.int32)


def export_ply(path, points):
    """ASCII PLY export for interoperability with external viewers."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        for x, y, z in pts:
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


def write_scene(scene: Scene, out_dir):
    """Write a generated scene as a frame archive with ground-truth sidecars."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    frame_records = []
    gt_flow_paths = []
    gt_class_paths = []
    for t, frame in enumerate(scene.frames):
        points_rel = f"frames/{t:06d}.bin"
        labels_rel = f"frames/{t:06d}.labels.bin"
        write_points(out / points_rel, frame.points)
        write_labels(out / labels_rel, frame.labels)
        frame_records.append({
            "index": frame.timestamp_index,
            "points": points_rel,
            "labels": labels_rel,
            "ego": scene.ego_poses[t].as_matrix().tolist(),
        })
        class_rel = f"gt/class_{t:06d}.bin"
        write_labels(out / class_rel, scene.class_labels[t])
        gt_class_paths.append(class_rel)
        if scene.gt_flows[t] is not None:
            flow_rel = f"gt/flow_{t:06d}.bin"
            write_flow(out / flow_rel, scene.gt_flows[t])
            gt_flow_paths.append(flow_rel)
        else:
            gt_flow_paths.append(None)

    directions = {
        "schema_version": SCHEMA_VERSION,
        "objects": [
            {
                "index": oi,
                "class_label": scene.spec.objects[oi].class_label,
                "mean_flow": [None if np.any(np.isnan(row)) else row.tolist()
                              for row in scene.gt_target_means[oi]],
            }
            for oi in sorted(scene.gt_target_means)
        ],
    }
    dump_json(out / "gt" / "target_directions.json", directions)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "frame_count": len(scene.frames),
        "frames": frame_records,
        "gt": {
            "flows": gt_flow_paths,
            "class_labels": gt_class_paths,
            "target_directions": "gt/target_directions.json",
        },
    }
    dump_json(out / "manifest.json", manifest)
    return out / "manifest.json"


class SceneData:
    """A scene read back from disk; mirrors the parts of Scene the pipeline
    needs (frames, ego poses, optional ground truth)."""

    def __init__(self, frames, ego_poses, gt_flows=None, class_labels=None,
                 target_directions=None):
        self.frames = frames
        self.ego_poses = ego_poses
        self.gt_flows = gt_flows
        self.class_labels = class_labels
        self.target_directions = target_directions

    @property
    def duration(self) -> int:
        return len(self.frames)

    def window_at(self, t: int, h: int):
        return align_window(self.frames, self.ego_poses, t, h)

    def gt_flow(self, t: int) -> np.ndarray:
        if self.gt_flows is None or self.gt_flows[t] is None:
            raise ArchiveError(f"archive carries no ground-truth flow for frame {t}")
        return self.gt_flows[t]


def read_archive(in_dir) -> SceneData:
    root = Path(in_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ArchiveError(f"no manifest.json under {root}")
    manifest = load_json(manifest_path)
    frames = []
    ego_poses = []
    for record in manifest["frames"]:
        points_path = root / record["points"]
        labels_path = root / record["labels"]
        for p in (points_path, labels_path):
            if not p.exists():
                raise ArchiveError(f"manifest references missing file {p}")
        points = read_points(points_path)
        labels = read_labels(labels_path)
        if len(labels) != len(points):
            raise ArchiveError(f"frame {record['index']}: {len(labels)} labels for "
                               f"{len(points)} points")
        frames.append(Frame(int(record["index"]), points, labels))
        ego_poses.append(RigidTransform.from_matrix(record["ego"]))
    gt_flows = class_labels = target_directions = None
    gt = manifest.get("gt")
    if gt:
        if gt.get("flows"):
            gt_flows = [read_flow(root / rel) if rel else None for rel in gt["flows"]]
        if gt.get("class_labels"):
            class_labels = [read_labels(root / rel) for rel in gt["class_labels"]]
        if gt.get("target_directions"):
            target_directions = load_json(root / gt["target_directions"])
    return SceneData(frames, ego_poses, gt_flows, class_labels, target_directions)
