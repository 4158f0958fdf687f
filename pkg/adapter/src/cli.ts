#!/usr/bin/env node
/**
 * Adapter-protocol CLI:
 *
 *   lfa-adapter encode  <image.png> <latent.npy>
 *   lfa-adapter decode  <latent.npy> <image.png>
 *   lfa-adapter metrics <a.png> <b.png>
 *   lfa-adapter info    <image.png>
 *
 * encode/decode write exactly one output file and exit 0 on success;
 * any failure exits nonzero with a message on stderr, as the session
 * protocol requires.
 */

import { decode, encode, latentShape } from "./codec.js";
import { imageMetrics } from "./metrics.js";
import { readLatent, writeLatent } from "./npy.js";
import { readRgb, writeRgb } from "./png.js";

function usage(): never {
  console.error(
    "usage: lfa-adapter encode <image.png> <latent.npy>\n" +
      "       lfa-adapter decode <latent.npy> <image.png>\n" +
      "       lfa-adapter metrics <a.png> <b.png>\n" +
      "       lfa-adapter info <image.png>"
  );
  process.exit(1);
}

function run(argv: string[]): number {
  const [command, first, second] = argv;
  if (!command || !first) usage();
  switch (command) {
    case "encode": {
      if (!second) usage();
      writeLatent(second, encode(readRgb(first)));
      return 0;
    }
    case "decode": {
      if (!second) usage();
      writeRgb(second, decode(readLatent(first)));
      return 0;
    }
    case "metrics": {
      if (!second) usage();
      const m = imageMetrics(readRgb(first), readRgb(second));
      console.log(`l1 ${m.l1}`);
      console.log(`ssim ${m.ssim}`);
      console.log(`lpips ${m.lpips === null ? "unavailable" : m.lpips}`);
      return 0;
    }
    case "info": {
      const image = readRgb(first);
      const [c, h, w] = latentShape(image.width, image.height);
      console.log(`image ${image.width}x${image.height}`);
      console.log(`latent_shape ${c},${h},${w}`);
      return 0;
    }
    default:
      usage();
  }
}

try {
  process.exit(run(process.argv.slice(2)));
} catch (error) {
  console.error(`lfa-adapter: ${error instanceof Error ? error.message : error}`);
  process.exit(2);
}
