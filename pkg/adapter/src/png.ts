/** PNG load/store as planar RGB float arrays in [0, 1]. */

import { readFileSync, writeFileSync } from "node:fs";
import { PNG } from "pngjs";

export interface RgbImage {
  width: number;
  height: number;
  /** planar [0,1] values: channel-major (3, height, width) */
  data: Float64Array;
}

export function readRgb(path: string): RgbImage {
  const png = PNG.sync.read(readFileSync(path));
  const { width, height } = png;
  const plane = width * height;
  const data = new Float64Array(3 * plane);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const src = (y * width + x) * 4;
      const dst = y * width + x;
      data[dst] = png.data[src] / 255;
      data[plane + dst] = png.data[src + 1] / 255;
      data[2 * plane + dst] = png.data[src + 2] / 255;
    }
  }
  return { width, height, data };
}

export function writeRgb(path: string, image: RgbImage): void {
  const { width, height } = image;
  const png = new PNG({ width, height });
  const plane = width * height;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const src = y * width + x;
      const dst = (y * width + x) * 4;
      png.data[dst] = clampByte(image.data[src]);
      png.data[dst + 1] = clampByte(image.data[plane + src]);
      png.data[dst + 2] = clampByte(image.data[2 * plane + src]);
      png.data[dst + 3] = 255;
    }
  }
  writeFileSync(path, PNG.sync.write(png));
}

function clampByte(value: number): number {
  const scaled = Math.round(value * 255);
  return scaled < 0 ? 0 : scaled > 255 ? 255 : scaled;
}
