/** Minimal reader for .npy arrays and .npz archives.
 *
 * Arrays come back as typed-array views directly over the file bytes when
 * alignment allows (the zero-copy path); a misaligned entry is copied once.
 * Views alias the archive buffer: treat them as immutable snapshots.
 */
import { inflateRawSync } from "node:zlib";

export type NumericArray =
  | Float64Array
  | Float32Array
  | Int8Array
  | Int16Array
  | Int32Array
  | BigInt64Array
  | Uint8Array
  | Uint16Array
  | Uint32Array
  | BigUint64Array;

export interface NdArray {
  shape: number[];
  dtype: string;
  data: NumericArray;
}

const NPY_MAGIC = Buffer.from("\x93NUMPY", "latin1");

const DTYPES: Record<string, { ctor: any; bytes: number }> = {
  "<f8": { ctor: Float64Array, bytes: 8 },
  "<f4": { ctor: Float32Array, bytes: 4 },
  "<i8": { ctor: BigInt64Array, bytes: 8 },
  "<i4": { ctor: Int32Array, bytes: 4 },
  "<i2": { ctor: Int16Array, bytes: 2 },
  "<u8": { ctor: BigUint64Array, bytes: 8 },
  "<u4": { ctor: Uint32Array, bytes: 4 },
  "<u2": { ctor: Uint16Array, bytes: 2 },
  "|i1": { ctor: Int8Array, bytes: 1 },
  "|u1": { ctor: Uint8Array, bytes: 1 },
  "|b1": { ctor: Uint8Array, bytes: 1 },
};

export function parseNpy(buf: Buffer): NdArray {
  if (!buf.subarray(0, 6).equals(NPY_MAGIC)) {
    throw new Error("not an npy buffer");
  }
  const major = buf[6];
  const headerLen = major >= 2 ? buf.readUInt32LE(8) : buf.readUInt16LE(8);
  const headerEnd = (major >= 2 ? 12 : 10) + headerLen;
  const header = buf.subarray(major >= 2 ? 12 : 10, headerEnd).toString("latin1");

  const descr = /'descr':\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order':\s*(True|False)/.exec(header)?.[1];
  const shapeText = /'shape':\s*\(([^)]*)\)/.exec(header)?.[1];
  if (!descr || !fortran || shapeText === undefined) {
    throw new Error(`unparseable npy header: ${header}`);
  }
  if (fortran === "True") {
    throw new Error("fortran-ordered npy arrays are not supported");
  }
  const shape = shapeText
    .split(",")
    .map((s) => s.trim())
    .filter(Boolean)
    .map(Number);
  const spec = DTYPES[descr];
  if (!spec) throw new Error(`unsupported npy dtype ${descr}`);

  const count = shape.reduce((a, b) => a * b, 1);
  const byteStart = buf.byteOffset + headerEnd;
  let data: NumericArray;
  if (byteStart % spec.bytes === 0) {
    data = new spec.ctor(buf.buffer, byteStart, count);
  } else {
    const copy = Buffer.alloc(count * spec.bytes);
    buf.copy(copy, 0, headerEnd, headerEnd + count * spec.bytes);
    data = new spec.ctor(copy.buffer, 0, count);
  }
  return { shape, dtype: descr, data };
}

interface ZipEntry {
  name: string;
  method: number;
  compressedSize: number;
  localOffset: number;
}

function readCentralDirectory(buf: Buffer): ZipEntry[] {
  // find the end-of-central-directory record from the back
  let eocd = -1;
  for (let i = buf.length - 22; i >= 0; i--) {
    if (buf.readUInt32LE(i) === 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd < 0) throw new Error("not a zip archive (no end-of-central-directory)");
  const count = buf.readUInt16LE(eocd + 10);
  let offset = buf.readUInt32LE(eocd + 16);

  const entries: ZipEntry[] = [];
  for (let i = 0; i < count; i++) {
    if (buf.readUInt32LE(offset) !== 0x02014b50) {
      throw new Error("corrupt zip central directory");
    }
    const method = buf.readUInt16LE(offset + 10);
    const compressedSize = buf.readUInt32LE(offset + 20);
    const nameLen = buf.readUInt16LE(offset + 28);
    const extraLen = buf.readUInt16LE(offset + 30);
    const commentLen = buf.readUInt16LE(offset + 32);
    const localOffset = buf.readUInt32LE(offset + 42);
    const name = buf.subarray(offset + 46, offset + 46 + nameLen).toString("latin1");
    entries.push({ name, method, compressedSize, localOffset });
    offset += 46 + nameLen + extraLen + commentLen;
  }
  return entries;
}

function entryData(buf: Buffer, entry: ZipEntry): Buffer {
  if (buf.readUInt32LE(entry.localOffset) !== 0x04034b50) {
    throw new Error(`corrupt zip local header for ${entry.name}`);
  }
  const nameLen = buf.readUInt16LE(entry.localOffset + 26);
  const extraLen = buf.readUInt16LE(entry.localOffset + 28);
  const start = entry.localOffset + 30 + nameLen + extraLen;
  const raw = buf.subarray(start, start + entry.compressedSize);
  if (entry.method === 0) return raw;
  if (entry.method === 8) return inflateRawSync(raw);
  throw new Error(`unsupported zip compression method ${entry.method}`);
}

/** All arrays of an .npz archive, keyed by entry name without ".npy". */
export function parseNpz(buf: Buffer): Record<string, NdArray> {
  const out: Record<string, NdArray> = {};
  for (const entry of readCentralDirectory(buf)) {
    const key = entry.name.endsWith(".npy") ? entry.name.slice(0, -4) : entry.name;
    out[key] = parseNpy(entryData(buf, entry));
  }
  return out;
}
