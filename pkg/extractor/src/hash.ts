/** Deterministic hashing and seeded projection matrices. */

/** FNV-1a 32-bit string hash. */
export function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/** mulberry32 PRNG: tiny, seedable, reproducible across platforms. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Fixed random projection rows x cols, entries roughly N(0, 1/cols). */
export function projectionMatrix(rows: number, cols: number, seed: number): Float64Array {
  const rand = mulberry32(seed);
  const mat = new Float64Array(rows * cols);
  const scale = 1 / Math.sqrt(cols);
  for (let i = 0; i < mat.length; i++) {
    // sum of 4 uniforms, centered: cheap approximate gaussian
    mat[i] = (rand() + rand() + rand() + rand() - 2) * scale;
  }
  return mat;
}

export function project(mat: Float64Array, rows: number, cols: number,
                        vec: ArrayLike<number>): number[] {
  const out = new Array<number>(rows);
  for (let r = 0; r < rows; r++) {
    let s = 0;
    for (let c = 0; c < cols; c++) s += mat[r * cols + c] * vec[c];
    out[r] = s;
  }
  return out;
}

export function unit(vec: number[]): number[] {
  let norm = Math.sqrt(vec.reduce((s, x) => s + x * x, 0));
  if (norm === 0) norm = 1;
  return vec.map((x) => x / norm);
}
