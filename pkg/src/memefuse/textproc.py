"""Text normalization and vocabulary construction.

Tokenization is whitespace splitting of normalized text. Special ids are
fixed: PAD=0, BOS=1, EOS=2, UNK=3; corpus words start at id 4 and are
assigned in sorted order so that vocabularies are reproducible.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

_STRIP = str.maketrans("", "", string.punctuation + string.digits)
_SPACES = re.compile(r"\s+")


def normalize_text(raw: str) -> str:
    """Lowercase, drop punctuation and digits, collapse whitespace."""
    out = raw.lower().translate(_STRIP)
    return _SPACES.sub(" ", out).strip()


def tokenize(text: str) -> list[str]:
    return text.split()


@dataclass
class Vocabulary:
    word_to_id: dict[str, int]
    id_to_word: list[str]
    max_len: int

    @classmethod
    def from_words(cls, words, max_len: int) -> "Vocabulary":
        id_to_word = list(SPECIALS) + sorted(set(words))
        word_to_id = {w: i for i, w in enumerate(id_to_word) if i >= len(SPECIALS)}
        return cls(word_to_id=word_to_id, id_to_word=id_to_word, max_len=max_len)

    def __len__(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def encode(self, text: str, bos_eos: bool = False) -> list[int]:
        ids = [self.word_to_id.get(w, UNK_ID) for w in tokenize(text)]
        if bos_eos:
            ids = [BOS_ID] + ids + [EOS_ID]
        return ids

    def decode(self, ids, strip_specials: bool = True) -> str:
        words = []
        for i in ids:
            if strip_specials and i < len(SPECIALS):
                continue
            words.append(self.id_to_word[i])
        return " ".join(words)

    def to_dict(self) -> dict:
        return {"words": self.id_to_word[len(SPECIALS):], "max_len": self.max_len}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        id_to_word = list(SPECIALS) + list(d["words"])
        word_to_id = {w: i for i, w in enumerate(id_to_word) if i >= len(SPECIALS)}
        return cls(word_to_id=word_to_id, id_to_word=id_to_word, max_len=int(d["max_len"]))


def _coverage_max_len(lengths: list[int], quantile: float) -> int:
    """Smallest L such that at least quantile * len(lengths) entries are <= L.

    The 1e-9 slack keeps e.g. quantile=0.9 over 10 texts at k=9 despite
    0.9 * 10 rounding up in binary.
    """
    need = quantile * len(lengths)
    k = max(1, math.ceil(need - 1e-9))
    return sorted(lengths)[k - 1]


def build_vocab(corpus: list[str], min_count: int = 5, quantile: float = 0.9) -> Vocabulary:
    """Vocabulary of words with frequency >= min_count; max_len covers the
    given quantile of tokenized lengths (smallest such length)."""
    if not corpus:
        raise ValueError("corpus is empty")
    if not 0.0 < quantile <= 1.0:
        raise ValueError(f"quantile must be in (0, 1], got {quantile}")
    counts = Counter()
    lengths = []
    for text in corpus:
        toks = tokenize(text)
        counts.update(toks)
        lengths.append(len(toks))
    words = [w for w, c in counts.items() if c >= min_count]
    return Vocabulary.from_words(words, _coverage_max_len(lengths, quantile))


def build_caption_vocab(captions: list[str]) -> Vocabulary:
    """Caption vocabulary: every word; max_len = longest caption + BOS/EOS."""
    if not captions:
        raise ValueError("captions list is empty")
    vocab = build_vocab(captions, min_count=1, quantile=1.0)
    vocab.max_len = max(len(tokenize(t)) for t in captions) + 2
    return vocab
