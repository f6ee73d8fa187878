"""Manifest file IO.

Line-delimited JSON, one header line plus one line per sample (see
docs/manifest_format.md). Numeric payloads are float32; the writer emits the
shortest decimal that round-trips the exact float32 value, so write -> read
is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import DatasetManifest, EmbeddedSample, SCHEMA_VERSION
from .errors import ManifestError, SchemaVersionError
from .textproc import Vocabulary

FORMAT_NAME = "memefuse-manifest"


def _f32_list(arr) -> list:
    # float32 -> float64 is exact and repr() round-trips float64, so the JSON
    # text parses back to the identical float32 payload.
    return np.asarray(arr, dtype=np.float32).tolist()


def _sample_record(s: EmbeddedSample) -> dict:
    return {
        "id": s.id,
        "split": s.split,
        "image_global": _f32_list(s.image_global),
        "image_patches": _f32_list(s.image_patches),
        "text_global": _f32_list(s.text_global),
        "text_tokens": _f32_list(s.text_tokens),
        "external_codes": [int(c) for c in s.external_codes],
        "caption_ids": [int(c) for c in s.caption_ids],
        "labels": s.labels,
    }


def _record_sample(rec: dict) -> EmbeddedSample:
    return EmbeddedSample(
        id=rec["id"],
        split=rec["split"],
        image_global=np.array(rec["image_global"], dtype=np.float32),
        image_patches=np.array(rec["image_patches"], dtype=np.float32),
        text_global=np.array(rec["text_global"], dtype=np.float32),
        text_tokens=np.array(rec["text_tokens"], dtype=np.float32),
        external_codes=np.array(rec["external_codes"], dtype=np.int64),
        caption_ids=np.array(rec["caption_ids"], dtype=np.int64),
        labels=rec["labels"],
    )


def write_manifest(manifest: DatasetManifest, path) -> None:
    manifest.validate()
    header = {
        "format": FORMAT_NAME,
        "schema_version": manifest.schema_version,
        "d_img": manifest.d_img,
        "d_txt": manifest.d_txt,
        "attribute_vocab_sizes": list(manifest.attribute_vocab_sizes),
        "caption_vocab": manifest.caption_vocab.to_dict(),
        "n_samples": len(manifest.samples),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for sample in manifest.samples:
            fh.write(json.dumps(_sample_record(sample), sort_keys=True) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"malformed manifest header: {exc}") from exc
        if header.get("format") != FORMAT_NAME:
            raise ManifestError(f"not a {FORMAT_NAME} file: {path}")
        if header.get("schema_version") != SCHEMA_VERSION:
            raise SchemaVersionError(header.get("schema_version"), SCHEMA_VERSION)
        samples = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"malformed record at line {lineno}: {exc}") from exc
            try:
                samples.append(_record_sample(rec))
            except (KeyError, TypeError, ValueError) as exc:
                rid = rec.get("id", f"<line {lineno}>")
                raise ManifestError(f"malformed record {rid!r}: {exc}") from exc
    manifest = DatasetManifest(
        d_img=int(header["d_img"]),
        d_txt=int(header["d_txt"]),
        attribute_vocab_sizes=tuple(header["attribute_vocab_sizes"]),
        caption_vocab=Vocabulary.from_dict(header["caption_vocab"]),
        samples=samples,
    )
    manifest.validate()
    return manifest
