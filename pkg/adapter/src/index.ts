export { BLOCK, CHANNELS, CodecError, KEPT, decode, encode, latentShape } from "./codec.js";
export { ImageMetrics, MetricsError, imageMetrics } from "./metrics.js";
export { Latent, NpyFormatError, readLatent, writeLatent } from "./npy.js";
export { RgbImage, readRgb, writeRgb } from "./png.js";
