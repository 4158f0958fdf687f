/**
 * Image-space similarity metrics on RGB values in [0, 1].
 *
 * LPIPS needs a pretrained perceptual network, which this adapter
 * deliberately has no access to; it is reported as unavailable.
 */

import type { RgbImage } from "./png.js";

export interface ImageMetrics {
  l1: number;
  ssim: number;
  lpips: number | null;
}

export class MetricsError extends Error {}

export function imageMetrics(a: RgbImage, b: RgbImage): ImageMetrics {
  if (a.width !== b.width || a.height !== b.height) {
    throw new MetricsError(
      `size mismatch: ${a.width}x${a.height} vs ${b.width}x${b.height}`
    );
  }
  let absSum = 0;
  for (let i = 0; i < a.data.length; i++) {
    absSum += Math.abs(a.data[i] - b.data[i]);
  }
  return {
    l1: absSum / a.data.length,
    ssim: globalSsim(a, b),
    lpips: null,
  };
}

/** Single-window SSIM per channel, averaged; range from the joint span. */
function globalSsim(a: RgbImage, b: RgbImage): number {
  const plane = a.width * a.height;
  let total = 0;
  for (let c = 0; c < 3; c++) {
    const offset = c * plane;
    let min = Infinity;
    let max = -Infinity;
    let sumA = 0;
    let sumB = 0;
    for (let i = 0; i < plane; i++) {
      const va = a.data[offset + i];
      const vb = b.data[offset + i];
      min = Math.min(min, va, vb);
      max = Math.max(max, va, vb);
      sumA += va;
      sumB += vb;
    }
    const span = max - min;
    if (span === 0) {
      total += 1;
      continue;
    }
    const muA = sumA / plane;
    const muB = sumB / plane;
    let varA = 0;
    let varB = 0;
    let cov = 0;
    for (let i = 0; i < plane; i++) {
      const da = a.data[offset + i] - muA;
      const db = b.data[offset + i] - muB;
      varA += da * da;
      varB += db * db;
      cov += da * db;
    }
    varA /= plane;
    varB /= plane;
    cov /= plane;
    const c1 = (0.01 * span) ** 2;
    const c2 = (0.03 * span) ** 2;
    total +=
      ((2 * muA * muB + c1) * (2 * cov + c2)) /
      ((muA * muA + muB * muB + c1) * (varA + varB + c2));
  }
  return total / 3;
}
