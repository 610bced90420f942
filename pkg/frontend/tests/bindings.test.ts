import { mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  assign,
  forge,
  histogram,
  LeodError,
  loss,
  parseDetectionFile,
  runCli,
  type Predictions,
} from "../src/index.js";

let work: string;
let synthDir: string;
let mergedPath: string;

beforeAll(async () => {
  work = await mkdtemp(path.join(tmpdir(), "leodet-bindings-"));
  synthDir = path.join(work, "urban");
  await runCli(["synth", "--scenario", "urban-01", "--out", synthDir]);
  mergedPath = path.join(work, "merged.ndjson");
  await runCli([
    "tta-merge",
    "--inputs", path.join(synthDir, "dets_identity.ndjson"),
    "--inputs", path.join(synthDir, "dets_tflip.ndjson"),
    "--out", mergedPath,
  ]);
});

afterAll(async () => {
  await rm(work, { recursive: true, force: true });
});

const GEN1_HEADER = {
  format: "leodet/1",
  classes: ["car", "pedestrian"],
  width: 304,
  height: 240,
  num_steps: 4,
};

function labelLine(record: Record<string, unknown>): string {
  return JSON.stringify(record);
}

async function writeLabelsFile(
  name: string,
  records: Array<Record<string, unknown>>,
  header: Record<string, unknown> = GEN1_HEADER,
): Promise<string> {
  const file = path.join(work, name);
  const lines = [JSON.stringify(header), ...records.map(labelLine)];
  await writeFile(file, lines.join("\n") + "\n");
  return file;
}

describe("forge binding", () => {
  it("matches a direct CLI invocation byte for byte on urban-01", async () => {
    const bound = await forge(mergedPath, { round: 1 });

    const directOut = path.join(work, "labels-direct.ndjson");
    await runCli(["forge", "--dets", mergedPath, "--round", "1", "--out", directOut]);
    const direct = await readFile(directOut, "utf-8");

    expect(bound.text).toBe(direct);
    expect(bound.file.records.length).toBeGreaterThan(0);
    const certs = new Set(bound.file.records.map((r) => r.cert));
    expect(certs).toEqual(new Set(["keep", "ignore"]));
  });

  it("returns an empty label set for an empty detection list", async () => {
    const empty = await writeLabelsFile("empty.ndjson", []);
    const result = await forge(empty);
    expect(result.file.records).toEqual([]);
  });

  it("surfaces the core's invalid-thresholds code", async () => {
    const badConfig = path.join(work, "bad.toml");
    await writeFile(badConfig, "[thresholds.soft_overrides]\ncar = 0.5\n");
    await expect(forge(mergedPath, { configPath: badConfig })).rejects.toMatchObject({
      name: "LeodError",
      code: "invalid-thresholds",
    });
  });
});

describe("histogram binding", () => {
  it("hands back the tensor as a typed array with shape metadata", async () => {
    const result = await histogram(path.join(synthDir, "events.evb1"), {
      windowUs: 50_000,
      bins: 5,
    });
    expect(result.shape).toEqual([32, 10, 240, 304]);
    expect(result.windowUs).toBe(50_000);
    expect(ArrayBuffer.isView(result.data)).toBe(true);
    let total = 0n;
    for (const v of result.data as BigInt64Array) total += v;
    expect(total).toBeGreaterThan(0n);
    expect([...result.partial].every((p) => p === 0)).toBe(true);
  });
});

// one KEEP box over the low anchors, one IGNORE box over another anchor,
// on a tiny 2x2 anchor grid (stride 8 over a 16x16 image)
const TINY_GRID = "8@16x16";
const TINY_HEADER = { ...GEN1_HEADER, width: 16, height: 16, num_steps: 1 };

function tinyLabels(cert: "keep" | "ignore"): Array<Record<string, unknown>> {
  return [
    {
      seq: "s", t: 0, cls: 0, x: 1.0, y: 1.0, w: 9.0, h: 8.5,
      p_obj: 0.9, p_iou: [0.9, 0.1], src: "pseudo", cert,
      prov: "detected", tlen_f: 8, tlen_b: 8,
    },
    {
      seq: "s", t: 0, cls: 1, x: 9.5, y: 9.5, w: 5.5, h: 5.0,
      p_obj: 0.8, p_iou: [0.1, 0.8], src: "pseudo", cert: "ignore",
      prov: "detected", tlen_f: 2, tlen_b: 1,
    },
  ];
}

function tinyPredictions(): Predictions {
  // 4 anchors; values away from probability clamps and IoU kinks
  return {
    p_obj: [0.62, 0.31, 0.47, 0.55],
    p_iou: [
      [0.58, 0.22],
      [0.33, 0.61],
      [0.44, 0.37],
      [0.52, 0.28],
    ],
    delta: [
      [0.12, -0.08, 0.05, -0.11],
      [-0.21, 0.17, -0.14, 0.08],
      [0.07, 0.23, 0.11, -0.05],
      [-0.13, -0.19, 0.02, 0.14],
    ],
  };
}

describe("assign and loss bindings", () => {
  it("an all-IGNORE frame is fully masked: zero loss, zero gradient", async () => {
    const labels = await writeLabelsFile(
      "tiny-ignore.ndjson",
      tinyLabels("ignore").map((r) => ({ ...r, x: 0.5, y: 0.5, w: 15.0, h: 15.0 })),
      TINY_HEADER,
    );
    const result = await loss(labels, TINY_GRID, tinyPredictions(), { t: 0 });
    expect(result.loss.total).toBe(0);
    expect([...(result.gradients.d_p_obj as Float64Array)].every((v) => v === 0)).toBe(true);
    expect([...(result.gradients.d_p_iou as Float64Array)].every((v) => v === 0)).toBe(true);
    expect([...(result.gradients.d_delta as Float64Array)].every((v) => v === 0)).toBe(true);
  });

  it("assign/loss npz output on urban-01 labels is byte-identical between binding and direct CLI", async () => {
    const labelsOut = path.join(work, "urban-labels.ndjson");
    await forge(mergedPath, { outPath: labelsOut });

    // deterministic pseudo-random predictions over the full anchor grid
    const grid = "8,16,32@240x304";
    const anchors = 30 * 38 + 15 * 19 + 8 * 10;
    let state = 0x12345678;
    const next = () => {
      state = (state * 1664525 + 1013904223) >>> 0;
      return 0.05 + 0.9 * (state / 0xffffffff);
    };
    const preds: Predictions = {
      p_obj: Array.from({ length: anchors }, next),
      p_iou: Array.from({ length: anchors }, () => [next(), next()]),
      delta: Array.from({ length: anchors }, () => [
        next() - 0.5, next() - 0.5, next() - 0.5, next() - 0.5,
      ]),
    };
    const predsPath = path.join(work, "urban-preds.json");
    await writeFile(predsPath, JSON.stringify(preds));

    const boundOut = path.join(work, "assign-bound.npz");
    const bound = await assign(labelsOut, grid, { predsPath, t: 12, outPath: boundOut });
    expect(bound.report.frames[0].total).toBeGreaterThan(0);

    const directOut = path.join(work, "assign-direct.npz");
    await runCli([
      "assign", "--labels", labelsOut, "--grid", grid,
      "--preds", predsPath, "--t", "12", "--out", directOut,
      "--report", path.join(work, "assign-direct.json"),
    ]);

    const a = await readFile(boundOut);
    const b = await readFile(directOut);
    expect(a.equals(b)).toBe(true);
  });

  it("analytic gradients match finite differences driven from this side", async () => {
    const labels = await writeLabelsFile("tiny-fd.ndjson", tinyLabels("keep"), TINY_HEADER);
    const preds = tinyPredictions();
    const base = await loss(labels, TINY_GRID, preds, { t: 0 });
    expect(base.loss.total).toBeGreaterThan(0);

    const h = 1e-5;
    const checks: Array<{ name: string; get: () => number; set: (v: number) => void; analytic: number }> = [];
    for (const anchor of [0, 1, 3]) {
      checks.push({
        name: `p_obj[${anchor}]`,
        get: () => preds.p_obj[anchor],
        set: (v) => (preds.p_obj[anchor] = v),
        analytic: Number(base.gradients.d_p_obj[anchor]),
      });
      for (const cls of [0, 1]) {
        checks.push({
          name: `p_iou[${anchor}][${cls}]`,
          get: () => preds.p_iou[anchor][cls],
          set: (v) => (preds.p_iou[anchor][cls] = v),
          analytic: Number(base.gradients.d_p_iou[anchor * 2 + cls]),
        });
      }
      for (const k of [0, 2]) {
        checks.push({
          name: `delta[${anchor}][${k}]`,
          get: () => preds.delta[anchor][k],
          set: (v) => (preds.delta[anchor][k] = v),
          analytic: Number(base.gradients.d_delta[anchor * 4 + k]),
        });
      }
    }

    let worst = 0;
    for (const check of checks) {
      const original = check.get();
      check.set(original + h);
      const up = (await loss(labels, TINY_GRID, preds, { t: 0 })).loss.total;
      check.set(original - h);
      const down = (await loss(labels, TINY_GRID, preds, { t: 0 })).loss.total;
      check.set(original);
      const numeric = (up - down) / (2 * h);
      const scale = Math.max(Math.abs(numeric), 1.0);
      worst = Math.max(worst, Math.abs(check.analytic - numeric) / scale);
    }
    expect(worst).toBeLessThan(1e-4);
  });
});

describe("error mapping", () => {
  it("invalid input becomes a typed error with the core's code", async () => {
    await expect(runCli(["synth", "--scenario", "bogus", "--out", work])).rejects.toSatisfy(
      (err: unknown) => err instanceof LeodError && err.code === "invalid-input",
    );
  });

  it("detection files parse and round-trip structurally", async () => {
    const text = await readFile(mergedPath, "utf-8");
    const parsed = parseDetectionFile(text);
    expect(parsed.header.classes).toEqual(["car", "pedestrian"]);
    expect(parsed.records.every((r) => r.src === "det")).toBe(true);
  });
});
