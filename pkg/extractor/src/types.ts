/** Shared types for the extractor pipeline. */

/** One raw meme: an image file plus its overlay text and labels. */
export interface RawMemeRecord {
  /** image filename relative to the input directory */
  file: string;
  /** overlay text (may be empty, never null) */
  text: string;
  /** task labels, e.g. { hate: 1 } */
  labels: Record<string, number | number[]>;
  /** optional background-image caption used as the decoder target */
  caption?: string;
  /** optional per-person attribute codes [gender, race, age] */
  persons?: [number, number, number][];
  /** train | val | test (defaults to train) */
  split?: string;
}

export interface EncodedSample {
  id: string;
  split: string;
  imageGlobal: number[];
  imagePatches: number[][];
  textGlobal: number[];
  textTokens: number[][];
  externalCodes: number[];
  captionIds: number[];
  labels: Record<string, number | number[]>;
}

export interface ImageEncoding {
  global: number[];
  patches: number[][];
}

export interface TextEncoding {
  global: number[];
  tokens: number[][];
}

/**
 * An encoder turns decoded pixels / raw text into embeddings. The built-in
 * implementation is a deterministic local featurizer; a CLIP-family backend
 * plugs in behind the same interface when pretrained weights are reachable.
 */
export interface Encoder {
  name: string;
  dImg: number;
  dTxt: number;
  encodeImage(pixels: Rgba, width: number, height: number): ImageEncoding;
  encodeText(text: string): TextEncoding;
}

export type Rgba = Uint8Array | Buffer;

export const ATTRIBUTE_VOCAB_SIZES: [number, number, number] = [2, 7, 9];

export const SPLITS = new Set(["train", "val", "test"]);
