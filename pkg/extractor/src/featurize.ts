/** Built-in deterministic local featurizer.
 *
 * No pretrained weights: image patches are summarized by color/gradient
 * statistics pushed through a fixed seeded projection, text tokens by hashed
 * character trigrams. Embeddings are unit-norm, stable across runs and
 * platforms, and good enough to smoke-test the training pipeline end to end.
 * Swap in a CLIP-family Encoder for real experiments.
 */

import { fnv1a, project, projectionMatrix, unit } from "./hash.js";
import { normalizeText, tokenize } from "./text.js";
import type { Encoder, ImageEncoding, Rgba, TextEncoding } from "./types.js";

const STAT_DIM = 12;
const IMG_SEED = 0x5eed0001;
const TXT_SEED = 0x5eed0002;
const MAX_TEXT_TOKENS = 16;

/** Mean/std of each channel, luminance, and gradient energy for one region. */
function regionStats(pixels: Rgba, width: number, x0: number, y0: number,
                     x1: number, y1: number): number[] {
  const sums = [0, 0, 0];
  const sqs = [0, 0, 0];
  let luma = 0;
  let gradX = 0;
  let gradY = 0;
  let n = 0;
  for (let y = y0; y < y1; y++) {
    for (let x = x0; x < x1; x++) {
      const idx = 4 * (y * width + x);
      const r = pixels[idx] / 255;
      const g = pixels[idx + 1] / 255;
      const b = pixels[idx + 2] / 255;
      sums[0] += r; sums[1] += g; sums[2] += b;
      sqs[0] += r * r; sqs[1] += g * g; sqs[2] += b * b;
      const l = 0.299 * r + 0.587 * g + 0.114 * b;
      luma += l;
      if (x + 1 < x1) {
        const j = 4 * (y * width + x + 1);
        const l2 = (0.299 * pixels[j] + 0.587 * pixels[j + 1] + 0.114 * pixels[j + 2]) / 255;
        gradX += Math.abs(l2 - l);
      }
      if (y + 1 < y1) {
        const j = 4 * ((y + 1) * width + x);
        const l2 = (0.299 * pixels[j] + 0.587 * pixels[j + 1] + 0.114 * pixels[j + 2]) / 255;
        gradY += Math.abs(l2 - l);
      }
      n++;
    }
  }
  const mean = sums.map((s) => s / n);
  const std = sqs.map((s, i) => Math.sqrt(Math.max(s / n - mean[i] * mean[i], 0)));
  return [
    ...mean, ...std, luma / n, gradX / n, gradY / n,
    (x1 - x0) / width, (y1 - y0) / width, 1,
  ];
}

export class LocalStatsEncoder implements Encoder {
  readonly name = "local-stats-v1";
  readonly dImg: number;
  readonly dTxt: number;
  readonly grid: number;
  private imgProj: Float64Array;
  private txtProj: Float64Array;

  constructor(dImg = 16, dTxt = 16, grid = 2) {
    this.dImg = dImg;
    this.dTxt = dTxt;
    this.grid = grid;
    this.imgProj = projectionMatrix(dImg, STAT_DIM, IMG_SEED);
    this.txtProj = projectionMatrix(dTxt, this.dTxt, TXT_SEED);
  }

  encodeImage(pixels: Rgba, width: number, height: number): ImageEncoding {
    const patches: number[][] = [];
    const g = this.grid;
    for (let gy = 0; gy < g; gy++) {
      for (let gx = 0; gx < g; gx++) {
        const stats = regionStats(
          pixels, width,
          Math.floor((gx * width) / g), Math.floor((gy * height) / g),
          Math.floor(((gx + 1) * width) / g), Math.floor(((gy + 1) * height) / g));
        patches.push(unit(project(this.imgProj, this.dImg, STAT_DIM, stats)));
      }
    }
    const whole = regionStats(pixels, width, 0, 0, width, height);
    return {
      global: unit(project(this.imgProj, this.dImg, STAT_DIM, whole)),
      patches,
    };
  }

  /** Hash each word's character trigrams into dTxt buckets, then project. */
  private wordVector(word: string): number[] {
    const padded = `^${word}$`;
    const buckets = new Array<number>(this.dTxt).fill(0);
    for (let i = 0; i + 3 <= padded.length; i++) {
      const h = fnv1a(padded.slice(i, i + 3));
      buckets[h % this.dTxt] += h & 1 ? 1 : -1;
    }
    return unit(project(this.txtProj, this.dTxt, this.dTxt, buckets));
  }

  encodeText(text: string): TextEncoding {
    const words = tokenize(normalizeText(text)).slice(0, MAX_TEXT_TOKENS);
    const tokens = words.length
      ? words.map((w) => this.wordVector(w))
      : [this.wordVector("")];  // n_x >= 1 even for empty overlay text
    const sum = new Array<number>(this.dTxt).fill(0);
    for (const tok of tokens) for (let k = 0; k < this.dTxt; k++) sum[k] += tok[k];
    return { global: unit(sum), tokens };
  }
}

export function makeEncoder(name: string, dImg: number, dTxt: number): Encoder {
  if (name === "builtin" || name === "local-stats") {
    return new LocalStatsEncoder(dImg, dTxt);
  }
  if (name === "clip") {
    throw new Error(
      "the clip encoder needs @xenova/transformers and downloadable weights; " +
      "install them and wire a ClipEncoder implementing Encoder, or use --encoder builtin");
  }
  throw new Error(`unknown encoder ${name}`);
}
