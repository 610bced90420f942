/** Detection-file (NDJSON) parsing: one header line plus one record per box. */

export interface DetectionHeader {
  format: string;
  classes: string[];
  width: number;
  height: number;
  num_steps: number;
  [extra: string]: unknown;
}

export interface BoxRecord {
  seq: string;
  t: number;
  cls: number;
  x: number;
  y: number;
  w: number;
  h: number;
  p_obj: number;
  p_iou: number[];
  src: "det" | "gt" | "pseudo";
  cert?: "keep" | "ignore";
  prov?: "detected" | "inpainted";
  tlen_f?: number;
  tlen_b?: number;
}

export interface DetectionFile {
  header: DetectionHeader;
  records: BoxRecord[];
}

export function parseDetectionFile(text: string): DetectionFile {
  const lines = text.split("\n").filter((line) => line.trim().length > 0);
  if (lines.length === 0) throw new Error("empty detection file");
  const header = JSON.parse(lines[0]) as DetectionHeader;
  if (header.format !== "leodet/1") {
    throw new Error(`unexpected format tag ${String(header.format)}`);
  }
  return { header, records: lines.slice(1).map((line) => JSON.parse(line) as BoxRecord) };
}

export function serializeDetectionFile(file: DetectionFile): string {
  const lines = [JSON.stringify(sortKeys(file.header))];
  for (const record of file.records) lines.push(JSON.stringify(sortKeys(record)));
  return lines.join("\n") + "\n";
}

function sortKeys<T extends object>(obj: T): T {
  const entries = Object.entries(obj).sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
  return Object.fromEntries(entries) as T;
}
