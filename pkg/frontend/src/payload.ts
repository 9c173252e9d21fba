/**
 * Binary payload format shared with the core: a 16-byte header (magic
 * "TFM1", 4 reserved zero bytes, item count as little-endian uint64)
 * followed by little-endian float32 triplets (points, flows) or int32
 * labels.
 *
 * Reads return typed-array views over the file buffer whenever alignment
 * permits (the 16-byte header preserves 4-byte alignment, so this is the
 * common case); writes stream the caller's typed array without copying.
 */

import { closeSync, openSync, readFileSync, writeSync } from "node:fs";

export const MAGIC = Buffer.from("TFM1", "ascii");
export const HEADER_BYTES = 16;

function header(count: number): Buffer {
  const buf = Buffer.alloc(HEADER_BYTES);
  MAGIC.copy(buf, 0);
  buf.writeBigUInt64LE(BigInt(count), 8);
  return buf;
}

/** Zero-copy Buffer view over any typed array. */
export function bufferView(view: ArrayBufferView): Buffer {
  return Buffer.from(view.buffer, view.byteOffset, view.byteLength);
}

function writePayload(path: string, count: number, view: ArrayBufferView): void {
  const fd = openSync(path, "w");
  try {
    writeSync(fd, header(count));
    writeSync(fd, bufferView(view));
  } finally {
    closeSync(fd);
  }
}

/** Write xyz-interleaved float32 points (length divisible by 3). */
export function writePoints(path: string, points: Float32Array): void {
  if (points.length % 3 !== 0) {
    throw new Error(`point payload length ${points.length} is not divisible by 3`);
  }
  writePayload(path, points.length / 3, points);
}

/** Write per-point int32 labels. */
export function writeLabels(path: string, labels: Int32Array): void {
  writePayload(path, labels.length, labels);
}

function readPayload(path: string, itemBytes: number): { count: number; body: Buffer } {
  const raw = readFileSync(path);
  if (raw.length < HEADER_BYTES) {
    throw new Error(`${path}: truncated header`);
  }
  if (!raw.subarray(0, 4).equals(MAGIC)) {
    throw new Error(`${path}: bad magic`);
  }
  const count = Number(raw.readBigUInt64LE(8));
  const body = raw.subarray(HEADER_BYTES);
  if (body.length !== count * itemBytes) {
    throw new Error(`${path}: payload is ${body.length} bytes, header declares ` +
      `${count} items of ${itemBytes} bytes`);
  }
  return { count, body };
}

function viewOrCopy<T extends Float32Array | Int32Array>(
  body: Buffer,
  make: (buffer: ArrayBuffer, byteOffset: number, length: number) => T,
  copyFrom: (buf: Buffer) => T,
  elements: number,
): T {
  if (body.byteOffset % 4 === 0) {
    return make(body.buffer as ArrayBuffer, body.byteOffset, elements);
  }
  return copyFrom(body); // misaligned buffer: fall back to one copy
}

/** Read points as a float32 view (length 3N). */
export function readPoints(path: string): Float32Array {
  const { count, body } = readPayload(path, 12);
  return viewOrCopy(
    body,
    (b, o, n) => new Float32Array(b, o, n),
    (buf) => new Float32Array(new Uint8Array(buf).buffer, 0, count * 3),
    count * 3,
  );
}

/** Read per-point labels as an int32 view. */
export function readLabels(path: string): Int32Array {
  const { count, body } = readPayload(path, 4);
  return viewOrCopy(
    body,
    (b, o, n) => new Int32Array(b, o, n),
    (buf) => new Int32Array(new Uint8Array(buf).buffer, 0, count),
    count,
  );
}

/** Sanity helper: true when the typed array aliases the given buffer. */
export function sharesBuffer(view: ArrayBufferView, buffer: ArrayBufferLike): boolean {
  return view.buffer === buffer;
}
