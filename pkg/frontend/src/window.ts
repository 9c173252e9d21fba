/**
 * Frame windows as plain contiguous arrays, mapped onto the core's archive
 * format without reshaping. Validation mirrors the core's diagnostics so a
 * malformed window fails with the same message whether it is caught here or
 * by the CLI.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { readLabels, readPoints, writeLabels, writePoints } from "./payload.js";

export type Matrix4 = number[][];

export interface BoundFrame {
  /** Timestamp index; indices across a window must increase by exactly 1. */
  index: number;
  /** xyz-interleaved float32 coordinates, length 3N. */
  points: Float32Array;
  /** One int32 per point: -1 static, -2 dynamic noise, >= 0 cluster id. */
  labels: Int32Array;
  /** Sensor-to-world pose, row-major 4x4; identity when omitted. */
  ego?: Matrix4;
}

/** A supervision window: last frame is the target, second-to-last the source. */
export interface BoundWindow {
  frames: BoundFrame[];
}

export const IDENTITY: Matrix4 = [
  [1, 0, 0, 0],
  [0, 1, 0, 0],
  [0, 0, 1, 0],
  [0, 0, 0, 1],
];

export function pointCount(frame: BoundFrame): number {
  return frame.points.length / 3;
}

/** Throws with core-identical diagnostic strings on structural problems. */
export function validateWindow(window: BoundWindow): void {
  const frames = window.frames;
  if (frames.length < 3) {
    throw new Error(`window has ${frames.length} frames, need at least 3 (h >= 1)`);
  }
  for (const frame of frames) {
    if (frame.points.length % 3 !== 0) {
      throw new Error(`frame ${frame.index}: point array length ${frame.points.length} ` +
        `is not divisible by 3`);
    }
    const n = pointCount(frame);
    if (frame.labels.length !== n) {
      throw new Error(`frame ${frame.index}: ${frame.labels.length} labels for ${n} points`);
    }
  }
  for (let i = 1; i < frames.length; i++) {
    if (frames[i].index !== frames[i - 1].index + 1) {
      throw new Error(`non-contiguous indices: ${frames[i - 1].index} followed by ` +
        `${frames[i].index}`);
    }
  }
}

/**
 * Materialize a window as a scene-archive directory the core CLI can read.
 * Returns the positional index of the source frame (always h = len-2) and
 * the window horizon.
 */
export function writeWindowArchive(dir: string, window: BoundWindow):
    { sourcePosition: number; horizon: number } {
  validateWindow(window);
  mkdirSync(join(dir, "frames"), { recursive: true });
  const records = window.frames.map((frame, i) => {
    const pointsRel = `frames/${String(i).padStart(6, "0")}.bin`;
    const labelsRel = `frames/${String(i).padStart(6, "0")}.labels.bin`;
    writePoints(join(dir, pointsRel), frame.points);
    writeLabels(join(dir, labelsRel), frame.labels);
    return {
      index: frame.index,
      points: pointsRel,
      labels: labelsRel,
      ego: frame.ego ?? IDENTITY,
    };
  });
  const manifest = {
    schema_version: 1,
    frame_count: records.length,
    frames: records,
  };
  writeFileSync(join(dir, "manifest.json"), JSON.stringify(manifest));
  return { sourcePosition: window.frames.length - 2, horizon: window.frames.length - 2 };
}

/**
 * Load a window straight from an existing scene archive: frames
 * [t-h, t+1] by position, typed arrays viewing the payload buffers.
 */
export function windowFromArchive(dir: string, t: number, h: number): BoundWindow {
  const manifest = JSON.parse(readFileSync(join(dir, "manifest.json"), "utf-8"));
  return windowFromManifest(dir, manifest, t, h);
}

export function windowFromManifest(dir: string, manifest: any, t: number,
                                   h: number): BoundWindow {
  const total = manifest.frames.length;
  if (h < 1 || t - h < 0 || t + 1 >= total) {
    throw new Error(`window [${t - h}, ${t + 1}] out of range for ${total} frames`);
  }
  const frames: BoundFrame[] = [];
  for (let i = t - h; i <= t + 1; i++) {
    const record = manifest.frames[i];
    frames.push({
      index: record.index,
      points: readPoints(join(dir, record.points)),
      labels: readLabels(join(dir, record.labels)),
      ego: record.ego,
    });
  }
  return { frames };
}
