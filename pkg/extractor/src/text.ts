/** Text normalization, mirroring the trainer's rules exactly:
 * lowercase, strip punctuation and digits, collapse whitespace. */

// ASCII punctuation set used by the trainer (Python's string.punctuation).
const PUNCT = new Set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~".split(""));

export function normalizeText(raw: string): string {
  let out = "";
  for (const ch of raw.toLowerCase()) {
    if (PUNCT.has(ch) || (ch >= "0" && ch <= "9")) continue;
    out += ch;
  }
  return out.replace(/\s+/g, " ").trim();
}

export function tokenize(text: string): string[] {
  return text.length ? text.split(" ").filter(Boolean) : [];
}

export const PAD_ID = 0;
export const BOS_ID = 1;
export const EOS_ID = 2;
export const UNK_ID = 3;
export const N_SPECIALS = 4;

export interface CaptionVocab {
  words: string[]; // ids assigned as 4.. in array order (sorted)
  maxLen: number;  // longest caption + BOS + EOS
  wordToId: Map<string, number>;
}

/** Caption vocabulary: every word, actual max length plus BOS/EOS framing. */
export function buildCaptionVocab(captions: string[]): CaptionVocab {
  const distinct = new Set<string>();
  let longest = 0;
  for (const caption of captions) {
    const toks = tokenize(normalizeText(caption));
    longest = Math.max(longest, toks.length);
    for (const t of toks) distinct.add(t);
  }
  const words = [...distinct].sort();
  const wordToId = new Map(words.map((w, i) => [w, N_SPECIALS + i]));
  return { words, maxLen: captions.length ? longest + 2 : 2, wordToId };
}

export function encodeCaption(caption: string, vocab: CaptionVocab): number[] {
  const ids = tokenize(normalizeText(caption)).map(
    (w) => vocab.wordToId.get(w) ?? UNK_ID,
  );
  return [BOS_ID, ...ids, EOS_ID];
}
