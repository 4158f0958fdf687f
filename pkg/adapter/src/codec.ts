/**
 * Deterministic image<->latent codec standing in for a pretrained VAE.
 *
 * Each 8x8 block of each color channel goes through an orthonormal 2D
 * DCT; the lowest 4x4 coefficients are kept as latent channels and the
 * rest discarded, giving a (48, H/8, W/8) float32 latent — an 8x spatial
 * bottleneck that is lossy on fine texture, like a real autoencoder, but
 * bit-for-bit reproducible with no weights to download. The DC channel is
 * shifted so latents are roughly zero-centered.
 */

import type { Latent } from "./npy.js";
import type { RgbImage } from "./png.js";

export const BLOCK = 8;
export const KEPT = 4; // kept coefficients per axis
export const CHANNELS = 3 * KEPT * KEPT;
const DC_SHIFT = 4.0; // orthonormal DC of a mid-gray block

export class CodecError extends Error {}

function dctMatrix(n: number): Float64Array {
  const m = new Float64Array(n * n);
  for (let k = 0; k < n; k++) {
    const scale = Math.sqrt((k === 0 ? 1 : 2) / n);
    for (let i = 0; i < n; i++) {
      m[k * n + i] = scale * Math.cos((Math.PI * (2 * i + 1) * k) / (2 * n));
    }
  }
  return m;
}

const DCT = dctMatrix(BLOCK);

/** out = M * block * M^T for the 8x8 DCT matrix M */
function dct2d(block: Float64Array, out: Float64Array): void {
  const tmp = new Float64Array(BLOCK * BLOCK);
  for (let k = 0; k < BLOCK; k++) {
    for (let j = 0; j < BLOCK; j++) {
      let acc = 0;
      for (let i = 0; i < BLOCK; i++) acc += DCT[k * BLOCK + i] * block[i * BLOCK + j];
      tmp[k * BLOCK + j] = acc;
    }
  }
  for (let k = 0; k < BLOCK; k++) {
    for (let l = 0; l < BLOCK; l++) {
      let acc = 0;
      for (let j = 0; j < BLOCK; j++) acc += tmp[k * BLOCK + j] * DCT[l * BLOCK + j];
      out[k * BLOCK + l] = acc;
    }
  }
}

/** out = M^T * coeffs * M (inverse of dct2d) */
function idct2d(coeffs: Float64Array, out: Float64Array): void {
  const tmp = new Float64Array(BLOCK * BLOCK);
  for (let i = 0; i < BLOCK; i++) {
    for (let l = 0; l < BLOCK; l++) {
      let acc = 0;
      for (let k = 0; k < BLOCK; k++) acc += DCT[k * BLOCK + i] * coeffs[k * BLOCK + l];
      tmp[i * BLOCK + l] = acc;
    }
  }
  for (let i = 0; i < BLOCK; i++) {
    for (let j = 0; j < BLOCK; j++) {
      let acc = 0;
      for (let l = 0; l < BLOCK; l++) acc += tmp[i * BLOCK + l] * DCT[l * BLOCK + j];
      out[i * BLOCK + j] = acc;
    }
  }
}

export function latentShape(width: number, height: number): [number, number, number] {
  if (width % BLOCK !== 0 || height % BLOCK !== 0) {
    throw new CodecError(
      `image dimensions ${width}x${height} must be divisible by ${BLOCK}`
    );
  }
  return [CHANNELS, height / BLOCK, width / BLOCK];
}

export function encode(image: RgbImage): Latent {
  const [channels, bh, bw] = latentShape(image.width, image.height);
  const plane = image.width * image.height;
  const data = new Float32Array(channels * bh * bw);
  const block = new Float64Array(BLOCK * BLOCK);
  const coeffs = new Float64Array(BLOCK * BLOCK);
  for (let color = 0; color < 3; color++) {
    for (let by = 0; by < bh; by++) {
      for (let bx = 0; bx < bw; bx++) {
        for (let y = 0; y < BLOCK; y++) {
          for (let x = 0; x < BLOCK; x++) {
            block[y * BLOCK + x] =
              image.data[color * plane + (by * BLOCK + y) * image.width + bx * BLOCK + x];
          }
        }
        dct2d(block, coeffs);
        for (let u = 0; u < KEPT; u++) {
          for (let v = 0; v < KEPT; v++) {
            const channel = color * KEPT * KEPT + u * KEPT + v;
            const value = coeffs[u * BLOCK + v] - (u === 0 && v === 0 ? DC_SHIFT : 0);
            data[(channel * bh + by) * bw + bx] = value;
          }
        }
      }
    }
  }
  return { shape: [channels, bh, bw], data };
}

export function decode(latent: Latent): RgbImage {
  const [channels, bh, bw] = latent.shape;
  if (channels !== CHANNELS) {
    throw new CodecError(`latent has ${channels} channels, codec expects ${CHANNELS}`);
  }
  const width = bw * BLOCK;
  const height = bh * BLOCK;
  const plane = width * height;
  const image = new Float64Array(3 * plane);
  const coeffs = new Float64Array(BLOCK * BLOCK);
  const block = new Float64Array(BLOCK * BLOCK);
  for (let color = 0; color < 3; color++) {
    for (let by = 0; by < bh; by++) {
      for (let bx = 0; bx < bw; bx++) {
        coeffs.fill(0);
        for (let u = 0; u < KEPT; u++) {
          for (let v = 0; v < KEPT; v++) {
            const channel = color * KEPT * KEPT + u * KEPT + v;
            coeffs[u * BLOCK + v] =
              latent.data[(channel * bh + by) * bw + bx] + (u === 0 && v === 0 ? DC_SHIFT : 0);
          }
        }
        idct2d(coeffs, block);
        for (let y = 0; y < BLOCK; y++) {
          for (let x = 0; x < BLOCK; x++) {
            const value = block[y * BLOCK + x];
            image[color * plane + (by * BLOCK + y) * width + bx * BLOCK + x] =
              value < 0 ? 0 : value > 1 ? 1 : value;
          }
        }
      }
    }
  }
  return { width, height, data: image };
}
