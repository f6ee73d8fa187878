#!/usr/bin/env node
/** CLI: memefuse-extract --input DIR --metadata FILE --out MANIFEST
 *
 * Reads a metadata JSON array describing the memes in --input (see README),
 * encodes each image + overlay text, and writes a manifest the trainer
 * consumes unmodified. Undecodable images are skipped with a logged id;
 * a fatal problem (bad metadata, unknown encoder) exits nonzero.
 */

import { parseArgs } from "node:util";

import { extract, loadMetadata } from "./extract.js";

function main(): number {
  const { values } = parseArgs({
    options: {
      input: { type: "string" },
      metadata: { type: "string" },
      out: { type: "string" },
      "d-img": { type: "string", default: "16" },
      "d-txt": { type: "string", default: "16" },
      encoder: { type: "string", default: "builtin" },
      help: { type: "boolean", default: false },
    },
  });
  if (values.help || !values.input || !values.metadata || !values.out) {
    console.log("usage: memefuse-extract --input DIR --metadata FILE --out MANIFEST"
      + " [--d-img 16] [--d-txt 16] [--encoder builtin]");
    return values.help ? 0 : 2;
  }
  const records = loadMetadata(values.metadata);
  const result = extract(records, {
    inputDir: values.input,
    outPath: values.out,
    dImg: parseInt(values["d-img"]!, 10),
    dTxt: parseInt(values["d-txt"]!, 10),
    encoder: values.encoder,
    log: (msg) => console.error(msg),
  });
  console.log(`${result.written} written, ${result.skipped.length} skipped`);
  return 0;
}

try {
  process.exit(main());
} catch (err) {
  console.error(`error: ${err instanceof Error ? err.message : err}`);
  process.exit(1);
}
