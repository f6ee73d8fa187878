"""Sample data model and manifest container.

An EmbeddedSample is one meme as precomputed per-modality embeddings plus
face-attribute codes, caption token ids and task labels. A DatasetManifest
bundles samples with the dimensions and vocabularies they were produced
under; every sample is validated against that header on load.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ManifestError
from .textproc import Vocabulary

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")

# FairFace-style attribute blocks: gender, race, age. Sizes are configurable
# in the manifest header; these are the conventional model outputs.
DEFAULT_ATTRIBUTE_SIZES = (2, 7, 9)
ATTRIBUTES_PER_PERSON = 3


@dataclass
class EmbeddedSample:
    id: str
    image_global: np.ndarray      # (d_img,)
    image_patches: np.ndarray     # (n_g, d_img)
    text_global: np.ndarray       # (d_txt,)
    text_tokens: np.ndarray       # (n_x, d_txt)
    external_codes: np.ndarray    # (3 * n_p,) int64
    caption_ids: np.ndarray       # (T,) int64, BOS ... EOS
    labels: dict[str, object]     # task name -> 0/1, class index, or multi-hot list
    split: str = "train"

    @property
    def n_patches(self) -> int:
        return self.image_patches.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.text_tokens.shape[0]

    @property
    def n_persons(self) -> int:
        return len(self.external_codes) // ATTRIBUTES_PER_PERSON


@dataclass
class DatasetManifest:
    d_img: int
    d_txt: int
    attribute_vocab_sizes: tuple[int, int, int]
    caption_vocab: Vocabulary
    samples: list[EmbeddedSample] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def split(self, name: str) -> list[EmbeddedSample]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [s for s in self.samples if s.split == name]

    def validate(self) -> None:
        for sample in self.samples:
            validate_sample(sample, self.d_img, self.d_txt,
                            self.attribute_vocab_sizes, len(self.caption_vocab))


def validate_sample(sample: EmbeddedSample, d_img: int, d_txt: int,
                    attr_sizes: tuple[int, int, int], caption_vocab_size: int) -> None:
    """Raise ManifestError naming the sample if any invariant fails."""
    sid = sample.id

    def bad(msg):
        raise ManifestError(f"sample {sid!r}: {msg}")

    if sample.image_patches.ndim != 2 or sample.image_patches.shape[0] < 1:
        bad("image_patches must be a non-empty 2-d array")
    if sample.text_tokens.ndim != 2 or sample.text_tokens.shape[0] < 1:
        bad("text_tokens must be a non-empty 2-d array")
    if sample.image_global.shape != (d_img,) or sample.image_patches.shape[1] != d_img:
        bad(f"image embeddings must have dimension {d_img}")
    if sample.text_global.shape != (d_txt,) or sample.text_tokens.shape[1] != d_txt:
        bad(f"text embeddings must have dimension {d_txt}")
    codes = sample.external_codes
    if len(codes) % ATTRIBUTES_PER_PERSON != 0:
        bad(f"external_codes length {len(codes)} is not a multiple of {ATTRIBUTES_PER_PERSON}")
    for p in range(len(codes) // ATTRIBUTES_PER_PERSON):
        for a in range(ATTRIBUTES_PER_PERSON):
            code = int(codes[p * ATTRIBUTES_PER_PERSON + a])
            if not 0 <= code < attr_sizes[a]:
                bad(f"attribute code {code} out of range for attribute {a} "
                    f"(vocab size {attr_sizes[a]})")
    if len(sample.caption_ids) > 0:
        if int(np.max(sample.caption_ids)) >= caption_vocab_size or int(np.min(sample.caption_ids)) < 0:
            bad(f"caption id out of range for vocab size {caption_vocab_size}")
    if sample.split not in SPLITS:
        bad(f"unknown split {sample.split!r}")
