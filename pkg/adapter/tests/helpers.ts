import { execFileSync } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import type { RgbImage } from "../src/png.js";
import { writeRgb } from "../src/png.js";

export const CLI = join(__dirname, "..", "dist", "cli.js");

export function tempDir(prefix = "lfa-adapter-test-"): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

/** Deterministic textured test image: gradients, sinusoids, hash noise. */
export function syntheticImage(width = 128, height = 128): RgbImage {
  const plane = width * height;
  const data = new Float64Array(3 * plane);
  let state = 0x9e3779b9; // fixed xorshift stream so every run is identical
  const noise = () => {
    state ^= state << 13;
    state ^= state >>> 17;
    state ^= state << 5;
    state >>>= 0;
    return state / 0xffffffff - 0.5;
  };
  for (let c = 0; c < 3; c++) {
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        const wave =
          0.2 * Math.sin((2 * Math.PI * x) / 32 + c) * Math.cos((2 * Math.PI * y) / 24);
        const gradient = 0.2 * (x / width) + 0.1 * (y / height);
        const value = 0.45 + wave + gradient + 0.08 * noise();
        data[c * plane + y * width + x] = Math.min(1, Math.max(0, value));
      }
    }
  }
  return { width, height, data };
}

export function writeSyntheticPng(path: string, width = 128, height = 128): RgbImage {
  const image = syntheticImage(width, height);
  writeRgb(path, image);
  return image;
}

export interface RunResult {
  status: number;
  stdout: string;
  stderr: string;
}

export function runCli(args: string[]): RunResult {
  try {
    const stdout = execFileSync(process.execPath, [CLI, ...args], { encoding: "utf-8" });
    return { status: 0, stdout, stderr: "" };
  } catch (error: any) {
    return {
      status: error.status ?? -1,
      stdout: error.stdout?.toString() ?? "",
      stderr: error.stderr?.toString() ?? "",
    };
  }
}

export function runLfa(args: string[]): RunResult {
  try {
    const stdout = execFileSync("lfa", args, { encoding: "utf-8" });
    return { status: 0, stdout, stderr: "" };
  } catch (error: any) {
    return {
      status: error.status ?? -1,
      stdout: error.stdout?.toString() ?? "",
      stderr: error.stderr?.toString() ?? "",
    };
  }
}
