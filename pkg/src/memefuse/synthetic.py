"""Planted-rule synthetic dataset.

Each sample hides two unit vectors z (image side) and w (text side) whose
inner-product sign alternates over the dataset, so classes are balanced.
Patches are noisy copies of z, text tokens noisy copies of w, and the globals
are z and w exactly. Each sample depicts 0-2 persons with uniformly drawn
attribute codes. The label is 1 iff the inner product is positive AND some
person carries the designated code (gender == 0), which makes the label a
deterministic function of the stored arrays: `planted_label` recomputes it
as an oracle.

Captions are a deterministic 3-word description obtained by quantizing the
first three coordinates of z into a fixed 8-word alphabet.
"""

from __future__ import annotations

import numpy as np

from .data import DatasetManifest, DEFAULT_ATTRIBUTE_SIZES, EmbeddedSample
from .textproc import build_caption_vocab

CAPTION_ALPHABET = ("arc", "bay", "cliff", "dune", "fern", "glen", "moss", "reef")
NOISE_SCALE = 0.05
# designated code c*: attribute block 0 (gender), value 0
TARGET_ATTRIBUTE = 0
TARGET_CODE = 0
# |<z, w>| is kept in this range so the sign survives the float32 cast
MARGIN_RANGE = (0.1, 0.9)


def target_code_present(external_codes) -> bool:
    codes = np.asarray(external_codes).reshape(-1, 3)
    return bool(np.any(codes[:, TARGET_ATTRIBUTE] == TARGET_CODE))


def planted_label(sample: EmbeddedSample) -> int:
    """Recompute the planted rule from the stored embeddings and codes."""
    align = float(np.dot(sample.image_global.astype(np.float64),
                         sample.text_global.astype(np.float64)))
    return int(align > 0 and target_code_present(sample.external_codes))


def caption_words(z) -> list[str]:
    words = []
    for k in range(3):
        v = min(max(float(z[k]), -1.0), 1.0)
        b = min(int((v + 1.0) / 2.0 * len(CAPTION_ALPHABET)), len(CAPTION_ALPHABET) - 1)
        words.append(CAPTION_ALPHABET[b])
    return words


def _unit(v):
    return v / np.linalg.norm(v)


def generate_synthetic(n: int, d: int, n_g: int = 4, n_x: int = 4,
                       seed: int = 0) -> DatasetManifest:
    """Generate n samples of dimension d; deterministic under seed."""
    if n < 4:
        raise ValueError(f"n must be >= 4, got {n}")
    if d < 4:
        raise ValueError(f"d must be >= 4, got {d}")
    if n_g < 1 or n_x < 1:
        raise ValueError("n_g and n_x must be >= 1")

    rng = np.random.default_rng(seed)
    attr_sizes = DEFAULT_ATTRIBUTE_SIZES
    captions = []
    raw = []
    for i in range(n):
        sign = 1.0 if i % 2 == 0 else -1.0
        z = _unit(rng.standard_normal(d))
        margin = rng.uniform(*MARGIN_RANGE)
        perp = rng.standard_normal(d)
        perp = _unit(perp - np.dot(perp, z) * z)
        w = sign * margin * z + np.sqrt(1.0 - margin * margin) * perp

        patches = z[None, :] + NOISE_SCALE * rng.standard_normal((n_g, d))
        tokens = w[None, :] + NOISE_SCALE * rng.standard_normal((n_x, d))

        n_p = int(rng.integers(0, 3))
        codes = np.empty(3 * n_p, dtype=np.int64)
        for p in range(n_p):
            for a, size in enumerate(attr_sizes):
                codes[3 * p + a] = rng.integers(0, size)

        label = int(sign > 0 and target_code_present(codes))
        caption = " ".join(caption_words(z))
        captions.append(caption)
        raw.append((z, w, patches, tokens, codes, label, caption))

    vocab = build_caption_vocab(captions)
    n_train = int(n * 0.8)
    n_val = int(n * 0.9) - n_train

    samples = []
    for i, (z, w, patches, tokens, codes, label, caption) in enumerate(raw):
        if i < n_train:
            split = "train"
        elif i < n_train + n_val:
            split = "val"
        else:
            split = "test"
        samples.append(EmbeddedSample(
            id=f"synth-{i:05d}",
            image_global=z.astype(np.float32),
            image_patches=patches.astype(np.float32),
            text_global=w.astype(np.float32),
            text_tokens=tokens.astype(np.float32),
            external_codes=codes,
            caption_ids=np.array(vocab.encode(caption, bos_eos=True), dtype=np.int64),
            labels={"hate": label},
            split=split,
        ))

    return DatasetManifest(
        d_img=d, d_txt=d,
        attribute_vocab_sizes=attr_sizes,
        caption_vocab=vocab,
        samples=samples,
    )
