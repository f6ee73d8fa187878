/** Synthesizes a folder of small meme-style PNGs plus their metadata:
 * a patterned background with a bright overlay-text band, like a meme
 * screenshot shrunk down. Deterministic so tests can assert hashes. */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { PNG } from "pngjs";

import { mulberry32 } from "../src/hash.js";
import type { RawMemeRecord } from "../src/types.js";

const TEXTS = [
  "When The Cat Rules The WORLD!!",
  "nobody: ... me at 3am: FRIDGE RAID",
  "they said it could not be done",
  "group project: me doing 100% of it",
  "monday mornings be like THIS",
  "one does not simply ship on friday",
  "me explaining memes to my parents",
  "that feeling when tests pass first try",
  "expect nothing, CTRL-Z everything",
  "live footage of my sleep schedule",
];

const CAPTIONS = [
  "a cat sitting on a throne",
  "an open fridge at night",
  "a mountain climber on a cliff",
  "students around a table",
  "a tired dog on a couch",
  "a stone gate in the mountains",
  "an old photo album on a desk",
  "a laptop with confetti",
  "a keyboard in dramatic light",
  "a hamster running in a wheel",
];

export function writeMemePng(path: string, seed: number, width = 64, height = 48): void {
  const rand = mulberry32(seed);
  const png = new PNG({ width, height });
  const baseR = Math.floor(rand() * 200);
  const baseG = Math.floor(rand() * 200);
  const baseB = Math.floor(rand() * 200);
  const bandTop = Math.floor(height * 0.75);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const idx = 4 * (y * width + x);
      if (y >= bandTop) {
        // overlay-text band: near-white with dark glyph-ish speckles
        const glyph = rand() < 0.35 ? 30 : 245;
        png.data[idx] = glyph;
        png.data[idx + 1] = glyph;
        png.data[idx + 2] = glyph;
      } else {
        png.data[idx] = (baseR + x * 2 + Math.floor(rand() * 40)) % 256;
        png.data[idx + 1] = (baseG + y * 3 + Math.floor(rand() * 40)) % 256;
        png.data[idx + 2] = (baseB + Math.floor(rand() * 40)) % 256;
      }
      png.data[idx + 3] = 255;
    }
  }
  writeFileSync(path, PNG.sync.write(png));
}

export interface Fixture {
  dir: string;
  metadataPath: string;
  records: RawMemeRecord[];
}

export function buildFixture(dir: string, withBroken = false): Fixture {
  mkdirSync(dir, { recursive: true });
  const records: RawMemeRecord[] = [];
  for (let i = 0; i < 10; i++) {
    const file = `meme-${String(i).padStart(2, "0")}.png`;
    writeMemePng(join(dir, file), 1000 + i);
    records.push({
      file,
      text: TEXTS[i],
      labels: { hate: i % 3 === 0 ? 1 : 0 },
      caption: CAPTIONS[i],
      persons: i % 2 === 0 ? [[i % 2, i % 7, i % 9]] : [],
      split: i === 8 ? "val" : i === 9 ? "test" : "train",
    });
  }
  if (withBroken) {
    writeFileSync(join(dir, "broken.png"), Buffer.from("not a png"));
    records.push({ file: "broken.png", text: "corrupt", labels: { hate: 0 } });
  }
  const metadataPath = join(dir, "metadata.json");
  writeFileSync(metadataPath, JSON.stringify(records, null, 1));
  return { dir, metadataPath, records };
}
