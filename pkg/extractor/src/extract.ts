/** The extraction pipeline: metadata + image folder -> embedding manifest. */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { PNG } from "pngjs";

import { buildCaptionVocab, encodeCaption } from "./text.js";
import { makeEncoder } from "./featurize.js";
import { writeManifest } from "./manifest.js";
import {
  ATTRIBUTE_VOCAB_SIZES, type EncodedSample, type Encoder,
  type RawMemeRecord, SPLITS,
} from "./types.js";

export interface ExtractOptions {
  inputDir: string;
  outPath: string;
  dImg?: number;
  dTxt?: number;
  encoder?: string;
  log?: (msg: string) => void;
}

export interface ExtractResult {
  written: number;
  skipped: { file: string; reason: string }[];
}

export function loadMetadata(path: string): RawMemeRecord[] {
  const records = JSON.parse(readFileSync(path, "utf-8")) as RawMemeRecord[];
  if (!Array.isArray(records) || records.length === 0) {
    throw new Error(`metadata file ${path} must be a non-empty JSON array`);
  }
  for (const rec of records) {
    if (typeof rec.file !== "string" || typeof rec.text !== "string") {
      throw new Error("every metadata record needs string 'file' and 'text' fields");
    }
    if (!rec.labels || typeof rec.labels !== "object") {
      throw new Error(`record ${rec.file}: missing labels`);
    }
  }
  return records;
}

function personCodes(rec: RawMemeRecord): number[] {
  const codes: number[] = [];
  for (const person of rec.persons ?? []) {
    if (person.length !== 3) {
      throw new Error(`record ${rec.file}: person codes must be [gender, race, age]`);
    }
    person.forEach((code, attr) => {
      if (!Number.isInteger(code) || code < 0 || code >= ATTRIBUTE_VOCAB_SIZES[attr]) {
        throw new Error(`record ${rec.file}: attribute ${attr} code ${code} out of range`);
      }
      codes.push(code);
    });
  }
  return codes;
}

export function extract(records: RawMemeRecord[], options: ExtractOptions): ExtractResult {
  const log = options.log ?? (() => {});
  const encoder: Encoder = makeEncoder(options.encoder ?? "builtin",
                                       options.dImg ?? 16, options.dTxt ?? 16);
  const vocab = buildCaptionVocab(records.map((r) => r.caption ?? ""));
  const samples: EncodedSample[] = [];
  const skipped: { file: string; reason: string }[] = [];

  records.forEach((rec, index) => {
    let png: PNG;
    try {
      png = PNG.sync.read(readFileSync(join(options.inputDir, rec.file)));
    } catch (err) {
      const reason = err instanceof Error ? err.message : String(err);
      log(`skipping ${rec.file}: ${reason}`);
      skipped.push({ file: rec.file, reason });
      return;
    }
    const split = rec.split ?? "train";
    if (!SPLITS.has(split)) {
      throw new Error(`record ${rec.file}: unknown split '${split}'`);
    }
    const image = encoder.encodeImage(png.data, png.width, png.height);
    const text = encoder.encodeText(rec.text);
    samples.push({
      id: rec.file.replace(/\.[^.]+$/, ""),
      split,
      imageGlobal: image.global,
      imagePatches: image.patches,
      textGlobal: text.global,
      textTokens: text.tokens,
      externalCodes: personCodes(rec),
      captionIds: rec.caption ? encodeCaption(rec.caption, vocab) : [],
      labels: rec.labels,
    });
  });

  if (samples.length === 0) {
    throw new Error("no decodable records; nothing to write");
  }
  writeManifest(options.outPath, samples, encoder.dImg, encoder.dTxt, vocab,
                encoder.name);
  log(`wrote ${samples.length} samples to ${options.outPath}`);
  return { written: samples.length, skipped };
}
