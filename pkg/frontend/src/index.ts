/**
 * tfm-client: supervision mining, loss evaluation, and metrics from the tfm
 * core, driven entirely through its public CLI and file formats.
 *
 * Targets come back as plain Float64Array constants (never part of any
 * autodiff graph), numerically identical to what the CLI writes: the core's
 * JSON carries 17 significant digits, which round-trips float64 exactly.
 * Caller-owned arrays are never mutated; payload writes stream zero-copy
 * views of the caller's typed arrays.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { CoreError, coreVersion, runCore, withScratchDir } from "./bridge.js";
import { writeLabels, writePoints } from "./payload.js";
import { BoundFrame, BoundWindow, validateWindow, windowFromArchive,
         writeWindowArchive } from "./window.js";

export { CoreError, coreVersion } from "./bridge.js";
export { readLabels, readPoints, sharesBuffer, writeLabels, writePoints } from "./payload.js";
export { BoundFrame, BoundWindow, Matrix4, validateWindow, windowFromArchive,
         windowFromManifest, writeWindowArchive } from "./window.js";

export interface EnsemblingOptions {
  tauCos?: number;
  topK?: number;
  gamma?: number;
  zeroNormEps?: number;
  useConsensusMatrix?: boolean;
  useReliabilityWeights?: boolean;
  useAggregation?: boolean;
}

export interface LossOptions {
  enableDynamic?: boolean;
  enableStatic?: boolean;
  enableGeometric?: boolean;
  dclsMode?: "both" | "point_only" | "cluster_only";
  chamferTruncation?: number;
}

export interface EvalOptions {
  dynamicThreshold?: number;
  evalRegionHalfExtent?: number;
  /** (lower, upper] speed buckets in m/frame; null upper = unbounded. */
  speedBuckets?: Array<[number, number | null]>;
}

function ensemblingSection(opts: EnsemblingOptions = {}): Record<string, unknown> {
  const out: Record<string, unknown> = {};
  if (opts.tauCos !== undefined) out.tau_cos = opts.tauCos;
  if (opts.topK !== undefined) out.top_k = opts.topK;
  if (opts.gamma !== undefined) out.gamma = opts.gamma;
  if (opts.zeroNormEps !== undefined) out.zero_norm_eps = opts.zeroNormEps;
  if (opts.useConsensusMatrix !== undefined) out.use_consensus_matrix = opts.useConsensusMatrix;
  if (opts.useReliabilityWeights !== undefined) {
    out.use_reliability_weights = opts.useReliabilityWeights;
  }
  if (opts.useAggregation !== undefined) out.use_aggregation = opts.useAggregation;
  return out;
}

function lossSection(opts: LossOptions = {}): Record<string, unknown> {
  const out: Record<string, unknown> = {};
  if (opts.enableDynamic !== undefined) out.enable_dynamic = opts.enableDynamic;
  if (opts.enableStatic !== undefined) out.enable_static = opts.enableStatic;
  if (opts.enableGeometric !== undefined) out.enable_geometric = opts.enableGeometric;
  if (opts.dclsMode !== undefined) out.dcls_mode = opts.dclsMode;
  if (opts.chamferTruncation !== undefined) out.chamfer_truncation = opts.chamferTruncation;
  return out;
}

function evalSection(opts: EvalOptions = {}): Record<string, unknown> {
  const out: Record<string, unknown> = {};
  if (opts.dynamicThreshold !== undefined) out.dynamic_threshold = opts.dynamicThreshold;
  if (opts.evalRegionHalfExtent !== undefined) {
    out.eval_region_half_extent = opts.evalRegionHalfExtent;
  }
  if (opts.speedBuckets !== undefined) out.speed_buckets = opts.speedBuckets;
  return out;
}

function writeConfig(dir: string, horizon: number, sections: Record<string, unknown>): string {
  const path = join(dir, "config.json");
  writeFileSync(path, JSON.stringify({ schema_version: 1, horizon, ...sections }));
  return path;
}

function writeFlowPayload(dir: string, name: string, flow: Float32Array | Float64Array,
                          expectedPoints: number): string {
  if (flow.length !== expectedPoints * 3) {
    throw new Error(`flow has ${flow.length / 3} rows for ${expectedPoints} source points`);
  }
  const f32 = flow instanceof Float32Array ? flow : Float32Array.from(flow);
  const path = join(dir, name);
  writePoints(path, f32);
  return path;
}

export interface SupervisionTarget {
  clusterId: number;
  target: Float64Array;
}

export interface MiningResult {
  /** cluster id -> aggregated supervision flow (meters per frame interval). */
  targets: Map<number, Float64Array>;
  /** Exact response bytes as written by the core (byte-stable). */
  raw: Buffer;
  /** Per-cluster pools/matrices/scores when requested. */
  diagnostics?: unknown[];
}

/**
 * Mine one supervision target per dynamic cluster of the window's source
 * frame. ``flow`` is the current per-point estimate for the source frame
 * (xyz-interleaved); omitted means a zero field.
 */
export async function mineSupervision(
  window: BoundWindow,
  options: { flow?: Float32Array | Float64Array; ensembling?: EnsemblingOptions;
             dumpDiagnostics?: boolean } = {},
): Promise<MiningResult> {
  validateWindow(window);
  return withScratchDir(async (dir) => {
    const { sourcePosition, horizon } = writeWindowArchive(join(dir, "scene"), window);
    const config = writeConfig(dir, horizon, { ensembling: ensemblingSection(options.ensembling) });
    const outPath = join(dir, "targets.json");
    const args = ["supervise", "--in", join(dir, "scene"), "--frame", String(sourcePosition),
                  "--config", config, "--out", outPath];
    if (options.flow) {
      const source = window.frames[window.frames.length - 2];
      args.push("--flow", writeFlowPayload(dir, "flow.bin", options.flow,
                                           source.points.length / 3));
    }
    if (options.dumpDiagnostics) {
      args.push("--dump-diagnostics");
    }
    await runCore(args);
    const raw = readFileSync(outPath);
    const parsed = JSON.parse(raw.toString("utf-8"));
    const targets = new Map<number, Float64Array>();
    for (const record of parsed.targets) {
      targets.set(record.cluster_id, Float64Array.from(record.target));
    }
    return { targets, raw, diagnostics: parsed.clusters };
  });
}

export interface LossReport {
  dclsPointLevel: number;
  dclsClusterLevel: number;
  dclsTotal: number;
  staticLoss: number;
  geomLoss: number;
  total: number;
  perCluster: Map<number, number>;
  raw: Buffer;
}

/**
 * Evaluate the total self-supervised loss of a flow field against supplied
 * targets (cluster id -> 3-vector), exactly as the core computes it.
 */
export async function totalLoss(
  window: BoundWindow,
  flow: Float32Array | Float64Array,
  targets: Map<number, ArrayLike<number>> | Record<number, ArrayLike<number>>,
  options: { loss?: LossOptions } = {},
): Promise<LossReport> {
  validateWindow(window);
  const entries = targets instanceof Map
    ? [...targets.entries()]
    : Object.entries(targets).map(([k, v]) => [Number(k), v] as [number, ArrayLike<number>]);
  entries.sort((a, b) => a[0] - b[0]);
  return withScratchDir(async (dir) => {
    const { sourcePosition, horizon } = writeWindowArchive(join(dir, "scene"), window);
    const config = writeConfig(dir, horizon, { loss: lossSection(options.loss) });
    const source = window.frames[window.frames.length - 2];
    const flowPath = writeFlowPayload(dir, "flow.bin", flow, source.points.length / 3);
    const targetsPath = join(dir, "targets.json");
    writeFileSync(targetsPath, JSON.stringify({
      schema_version: 1,
      targets: entries.map(([clusterId, target]) => ({
        cluster_id: clusterId,
        target: Array.from(target),
      })),
    }));
    const outPath = join(dir, "loss.json");
    await runCore(["loss", "--in", join(dir, "scene"), "--frame", String(sourcePosition),
                   "--flow", flowPath, "--targets", targetsPath, "--config", config,
                   "--out", outPath]);
    const raw = readFileSync(outPath);
    const parsed = JSON.parse(raw.toString("utf-8"));
    const perCluster = new Map<number, number>();
    for (const record of parsed.per_cluster) {
      perCluster.set(record.cluster_id, record.mean_sq_error);
    }
    return {
      dclsPointLevel: parsed.dcls_point_level,
      dclsClusterLevel: parsed.dcls_cluster_level,
      dclsTotal: parsed.dcls_total,
      staticLoss: parsed.static_loss,
      geomLoss: parsed.geom_loss,
      total: parsed.total,
      perCluster,
      raw,
    };
  });
}

export interface MetricInputs {
  /** Source frame coordinates, xyz-interleaved, length 3N. */
  points: Float32Array;
  /** Predicted residual flow, length 3N. */
  pred: Float32Array | Float64Array;
  /** Ground-truth residual flow, length 3N. */
  gt: Float32Array | Float64Array;
  /** Per-point class codes: 0 BACKGROUND, 1 CAR, 2 OTHER, 3 PED, 4 VRU. */
  classLabels: Int32Array;
}

export interface MetricReport {
  threeway: { mean: number | null; FD: number | null; FS: number | null; BS: number | null };
  bucketNormalized: { mean: number | null; perClass: Record<string, number | null> };
  raw: Buffer;
}

/** Three-way EPE plus dynamic bucket-normalized EPE, via the core. */
export async function evaluateMetrics(
  inputs: MetricInputs,
  options: { eval?: EvalOptions } = {},
): Promise<MetricReport> {
  const n = inputs.points.length / 3;
  if (inputs.pred.length !== n * 3 || inputs.gt.length !== n * 3
      || inputs.classLabels.length !== n) {
    throw new Error("pred, gt, labels, and points must have equal point counts");
  }
  return withScratchDir(async (dir) => {
    const config = writeConfig(dir, 3, { eval: evalSection(options.eval) });
    const pointsPath = join(dir, "points.bin");
    writePoints(pointsPath, inputs.points);
    const predPath = writeFlowPayload(dir, "pred.bin", inputs.pred, n);
    const gtPath = writeFlowPayload(dir, "gt.bin", inputs.gt, n);
    const labelsPath = join(dir, "labels.bin");
    writeLabels(labelsPath, inputs.classLabels);
    const outPath = join(dir, "report.json");
    await runCore(["eval", "--pred", predPath, "--gt", gtPath, "--labels", labelsPath,
                   "--points", pointsPath, "--config", config, "--out", outPath]);
    const raw = readFileSync(outPath);
    const parsed = JSON.parse(raw.toString("utf-8"));
    return {
      threeway: {
        mean: parsed.threeway.mean,
        FD: parsed.threeway.FD,
        FS: parsed.threeway.FS,
        BS: parsed.threeway.BS,
      },
      bucketNormalized: {
        mean: parsed.bucket_normalized.mean,
        perClass: parsed.bucket_normalized.per_class,
      },
      raw,
    };
  });
}
