/** Manifest writer, format-compatible with the trainer's reader.
 *
 * Real payloads are float32: every number is rounded through Math.fround so
 * JSON.stringify emits the shortest decimal that round-trips the exact
 * float32 value (the float64 it prints IS the float32), matching the
 * trainer's bit-exact encoding contract.
 */

import { writeFileSync } from "node:fs";

import type { CaptionVocab } from "./text.js";
import { ATTRIBUTE_VOCAB_SIZES, type EncodedSample } from "./types.js";

export const SCHEMA_VERSION = 1;
export const FORMAT_NAME = "memefuse-manifest";

function f32(values: number[]): number[] {
  return values.map((v) => Math.fround(v));
}

function f32rows(rows: number[][]): number[][] {
  return rows.map(f32);
}

export function manifestLines(samples: EncodedSample[], dImg: number, dTxt: number,
                              vocab: CaptionVocab, encoderName: string): string[] {
  const header = {
    format: FORMAT_NAME,
    schema_version: SCHEMA_VERSION,
    d_img: dImg,
    d_txt: dTxt,
    attribute_vocab_sizes: ATTRIBUTE_VOCAB_SIZES,
    caption_vocab: { words: vocab.words, max_len: vocab.maxLen },
    n_samples: samples.length,
    encoder: encoderName, // informational; the trainer ignores unknown keys
  };
  const lines = [JSON.stringify(header)];
  for (const s of samples) {
    lines.push(JSON.stringify({
      id: s.id,
      split: s.split,
      image_global: f32(s.imageGlobal),
      image_patches: f32rows(s.imagePatches),
      text_global: f32(s.textGlobal),
      text_tokens: f32rows(s.textTokens),
      external_codes: s.externalCodes,
      caption_ids: s.captionIds,
      labels: s.labels,
    }));
  }
  return lines;
}

export function writeManifest(path: string, samples: EncodedSample[], dImg: number,
                              dTxt: number, vocab: CaptionVocab,
                              encoderName: string): void {
  writeFileSync(path, manifestLines(samples, dImg, dTxt, vocab, encoderName).join("\n") + "\n");
}
