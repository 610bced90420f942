/** Bound entry points into the pseudo-label core.
 *
 * Every call routes through the core CLI and exchanges data via its file
 * formats; nothing is re-implemented here. Array-valued results come back
 * as typed arrays over the core's npz output buffers.
 */
import { mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import path from "node:path";

import { parseDetectionFile, type DetectionFile } from "./ndjson.js";
import { parseNpz, type NdArray, type NumericArray } from "./npz.js";
import { runCli } from "./runner.js";

export { LeodError } from "./errors.js";
export { cliCommand, runCli } from "./runner.js";
export { parseNpy, parseNpz } from "./npz.js";
export type { NdArray, NumericArray } from "./npz.js";
export { parseDetectionFile, serializeDetectionFile } from "./ndjson.js";
export type { BoxRecord, DetectionFile, DetectionHeader } from "./ndjson.js";

async function withScratch<T>(fn: (dir: string) => Promise<T>): Promise<T> {
  const dir = await mkdtemp(path.join(tmpdir(), "leodet-"));
  try {
    return await fn(dir);
  } finally {
    await rm(dir, { recursive: true, force: true });
  }
}

export interface ForgeOptions {
  configPath?: string;
  gtPath?: string;
  splitPath?: string;
  round?: number;
  jobs?: number;
  /** keep the output file here instead of a scratch directory */
  outPath?: string;
}

export interface ForgeResult {
  /** raw output bytes, for byte-level comparison against direct CLI runs */
  text: string;
  file: DetectionFile;
}

/** Forge KEEP/IGNORE pseudo labels from a (TTA-merged) detection file. */
export async function forge(detsPath: string, options: ForgeOptions = {}): Promise<ForgeResult> {
  return withScratch(async (dir) => {
    const outPath = options.outPath ?? path.join(dir, "labels.ndjson");
    const args = ["forge", "--dets", detsPath, "--out", outPath];
    if (options.configPath) args.push("--config", options.configPath);
    if (options.gtPath) args.push("--gt", options.gtPath);
    if (options.splitPath) args.push("--split", options.splitPath);
    if (options.round !== undefined) args.push("--round", String(options.round));
    if (options.jobs !== undefined) args.push("--jobs", String(options.jobs));
    await runCli(args);
    const text = await readFile(outPath, "utf-8");
    return { text, file: parseDetectionFile(text) };
  });
}

export interface HistogramOptions {
  windowUs?: number;
  bins?: number;
  saturation?: number;
  /** needed for CSV inputs */
  width?: number;
  height?: number;
}

export interface HistogramResult {
  /** (windows, 2*bins, height, width) counts, flattened C-order */
  data: NumericArray;
  shape: number[];
  windowUs: number;
  bins: number;
  partial: Uint8Array;
}

/** Build per-window event histogram tensors from an event file. */
export async function histogram(
  eventsPath: string,
  options: HistogramOptions = {},
): Promise<HistogramResult> {
  return withScratch(async (dir) => {
    const outPath = path.join(dir, "hists.npz");
    const args = ["histogram", "--events", eventsPath, "--out", outPath];
    if (options.windowUs !== undefined) args.push("--window-us", String(options.windowUs));
    if (options.bins !== undefined) args.push("--bins", String(options.bins));
    if (options.saturation !== undefined) args.push("--saturation", String(options.saturation));
    if (options.width !== undefined) args.push("--width", String(options.width));
    if (options.height !== undefined) args.push("--height", String(options.height));
    await runCli(args);
    const arrays = parseNpz(await readFile(outPath));
    return {
      data: arrays.data.data,
      shape: arrays.data.shape,
      windowUs: Number(arrays.window_us.data[0]),
      bins: Number(arrays.bins.data[0]),
      partial: Uint8Array.from(arrays.partial.data as Uint8Array),
    };
  });
}

export interface Predictions {
  p_obj: number[];
  p_iou: number[][];
  delta: number[][];
}

export interface LossBreakdown {
  total: number;
  l_obj: number;
  l_cls: number;
  l_box: number;
}

export interface AssignOptions {
  /** predictions: inline object or a path to .json/.npz */
  preds?: Predictions;
  predsPath?: string;
  seq?: string;
  t?: number;
  /** keep the npz output here instead of a scratch directory */
  outPath?: string;
}

export interface AssignResult {
  /** per requested timestep, keyed "<name>_<t>" exactly as the core emits */
  arrays: Record<string, NdArray>;
  steps: number[];
  report: {
    sequence: string;
    anchors: number;
    frames: Array<{ t: number } & LossBreakdown>;
    mean: LossBreakdown;
  };
}

/** Grid spec "S1,S2,...@HxW", e.g. "8,16,32@240x304". */
export async function assign(
  labelsPath: string,
  grid: string,
  options: AssignOptions = {},
): Promise<AssignResult> {
  return withScratch(async (dir) => {
    const outPath = options.outPath ?? path.join(dir, "assign.npz");
    const reportPath = path.join(dir, "report.json");
    const args = [
      "assign", "--labels", labelsPath, "--grid", grid,
      "--out", outPath, "--report", reportPath,
    ];
    let predsPath = options.predsPath;
    if (options.preds) {
      predsPath = path.join(dir, "preds.json");
      await writeFile(predsPath, JSON.stringify(options.preds));
    }
    if (predsPath) args.push("--preds", predsPath);
    if (options.seq !== undefined) args.push("--seq", options.seq);
    if (options.t !== undefined) args.push("--t", String(options.t));
    await runCli(args);
    const arrays = parseNpz(await readFile(outPath));
    const report = JSON.parse(await readFile(reportPath, "utf-8"));
    const steps = Array.from(arrays.steps.data as BigInt64Array, Number);
    delete arrays.steps;
    return { arrays, steps, report };
  });
}

export interface LossResult {
  loss: LossBreakdown;
  gradients: {
    d_p_obj: NumericArray;
    d_p_iou: NumericArray;
    d_delta: NumericArray;
  };
}

/** Masked detection loss and its gradients for one label frame. */
export async function loss(
  labelsPath: string,
  grid: string,
  preds: Predictions,
  options: { seq?: string; t?: number } = {},
): Promise<LossResult> {
  const result = await assign(labelsPath, grid, { ...options, preds });
  const t = options.t ?? result.steps[0];
  const frame = result.report.frames.find((f) => f.t === t);
  if (!frame) throw new Error(`no loss report for timestep ${t}`);
  return {
    loss: { total: frame.total, l_obj: frame.l_obj, l_cls: frame.l_cls, l_box: frame.l_box },
    gradients: {
      d_p_obj: result.arrays[`d_p_obj_${t}`].data,
      d_p_iou: result.arrays[`d_p_iou_${t}`].data,
      d_delta: result.arrays[`d_delta_${t}`].data,
    },
  };
}
