/**
 * Strict NPY v1.0 reader/writer for (C, H, W) float32 arrays.
 *
 * This is the latent wire format of the session protocol: little-endian
 * 4-byte floats, C order, exactly three dimensions. Anything else is
 * rejected rather than coerced.
 */

import { readFileSync, writeFileSync } from "node:fs";

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

export interface Latent {
  shape: [number, number, number];
  /** values in channel-major (C, H, W) order */
  data: Float32Array;
}

export class NpyFormatError extends Error {}

export function readLatent(path: string): Latent {
  const buf = readFileSync(path);
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new NpyFormatError(`${path}: not an NPY file`);
  }
  const major = buf[6];
  const minor = buf[7];
  if (major !== 1 || minor !== 0) {
    throw new NpyFormatError(`${path}: unsupported NPY version ${major}.${minor}`);
  }
  const headerLen = buf.readUInt16LE(8);
  const headerEnd = 10 + headerLen;
  if (buf.length < headerEnd) {
    throw new NpyFormatError(`${path}: truncated header`);
  }
  const header = buf.subarray(10, headerEnd).toString("latin1");

  const descr = /'descr'\s*:\s*'([^']+)'/.exec(header);
  const fortran = /'fortran_order'\s*:\s*(True|False)/.exec(header);
  const shapeMatch = /'shape'\s*:\s*\(([^)]*)\)/.exec(header);
  if (!descr || !fortran || !shapeMatch) {
    throw new NpyFormatError(`${path}: malformed NPY header`);
  }
  if (descr[1] !== "<f4") {
    throw new NpyFormatError(`${path}: dtype ${descr[1]} is not little-endian float32`);
  }
  if (fortran[1] !== "False") {
    throw new NpyFormatError(`${path}: Fortran order not accepted`);
  }
  const dims = shapeMatch[1]
    .split(",")
    .map((tok) => tok.trim())
    .filter((tok) => tok.length > 0)
    .map((tok) => {
      const value = Number(tok);
      if (!Number.isInteger(value) || value < 1) {
        throw new NpyFormatError(`${path}: bad dimension ${tok}`);
      }
      return value;
    });
  if (dims.length !== 3) {
    throw new NpyFormatError(`${path}: expected a 3-d (C,H,W) array, got ${dims.length}-d`);
  }
  const count = dims[0] * dims[1] * dims[2];
  const expected = headerEnd + count * 4;
  if (buf.length !== expected) {
    throw new NpyFormatError(
      `${path}: payload is ${buf.length - headerEnd} bytes, expected ${count * 4}`
    );
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = buf.readFloatLE(headerEnd + i * 4);
  }
  for (let i = 0; i < count; i++) {
    if (!Number.isFinite(data[i])) {
      throw new NpyFormatError(`${path}: non-finite value at index ${i}`);
    }
  }
  return { shape: [dims[0], dims[1], dims[2]], data };
}

export function writeLatent(path: string, latent: Latent): void {
  const [c, h, w] = latent.shape;
  if (latent.data.length !== c * h * w) {
    throw new NpyFormatError(`data length ${latent.data.length} does not match shape`);
  }
  let header = `{'descr': '<f4', 'fortran_order': False, 'shape': (${c}, ${h}, ${w}), }`;
  // pad with spaces so that magic+version+len+header is a multiple of 64
  const unpadded = 10 + header.length + 1;
  header += " ".repeat((64 - (unpadded % 64)) % 64) + "\n";

  const head = Buffer.alloc(10 + header.length);
  MAGIC.copy(head, 0);
  head[6] = 1;
  head[7] = 0;
  head.writeUInt16LE(header.length, 8);
  head.write(header, 10, "latin1");

  const payload = Buffer.alloc(latent.data.length * 4);
  for (let i = 0; i < latent.data.length; i++) {
    payload.writeFloatLE(latent.data[i], i * 4);
  }
  writeFileSync(path, Buffer.concat([head, payload]));
}
