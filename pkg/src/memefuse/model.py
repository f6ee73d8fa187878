"""The dual-stage fusion classifier.

Stage 1 fuses each modality's token embeddings with the other modality's
global embedding by element-wise multiplication. Stage 2 runs a Transformer
encoder over [CLS, fused image tokens, fused text tokens, external-attribute
tokens]; the post-encoder CLS state feeds the task heads and the post-encoder
image tokens feed a caption decoder used as auxiliary supervision:

    total_loss = task_loss + alpha * caption_loss

Ablation flags rewire the graph: no_stage1 feeds projections through
unfused, no_stage2 swaps the encoder for masked mean-pooling, no_external
drops the attribute tokens, no_caption drops the decoder and forces alpha=0.

All passes are explicit numpy/numba; backward() methods mirror forward()
exactly, which is what the finite-difference gradient suite checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import backend
from .config import ModelConfig, SEGMENTS
from .data import ATTRIBUTES_PER_PERSON, EmbeddedSample
from .errors import ConfigError, ShapeError, SchemaVersionError, ManifestError
from .layers import (
    Affine, DecoderLayer, Embedding, EncoderLayer, Module, Parameter,
    causal_padding_mask, cross_mask, dropout_backward, dropout_forward,
    key_padding_mask, trunc_normal_init,
)
from .textproc import BOS_ID, PAD_ID, EOS_ID

SEG_CLS, SEG_IMG, SEG_TXT, SEG_EXT = range(4)

CHECKPOINT_MAGIC = b"MEMEFUSE-CKPT"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# value types


@dataclass
class HeadScore:
    logits: np.ndarray
    probs: np.ndarray


@dataclass
class FusedSequence:
    """Token sequence in encoder order [CLS, image, text, external]."""
    tokens: np.ndarray       # (S, d_model)
    segment_ids: np.ndarray  # (S,) ints indexing SEGMENTS
    pad_mask: np.ndarray     # (S,) bool, True = real token


@dataclass
class ModelOutput:
    head_scores: dict[str, HeadScore]
    caption_logits: np.ndarray | None
    fused_image_features: np.ndarray  # (n_g, d_model) post-encoder
    r_cls: np.ndarray                 # (d_model,)


@dataclass
class Batch:
    ids: list[str]
    img_patches: np.ndarray   # (B, ng, d_img)
    img_mask: np.ndarray      # (B, ng) uint8
    img_global: np.ndarray    # (B, d_img)
    txt_tokens: np.ndarray    # (B, nx, d_txt)
    txt_mask: np.ndarray      # (B, nx) uint8
    txt_global: np.ndarray    # (B, d_txt)
    ext_codes: np.ndarray     # (B, ne) int64, offset into the joint table
    ext_mask: np.ndarray      # (B, ne) uint8
    captions: np.ndarray | None   # (B, T) int64 with PAD, BOS ... EOS
    labels: dict[str, np.ndarray]

    @property
    def size(self) -> int:
        return len(self.ids)


def attribute_offsets(attr_sizes) -> np.ndarray:
    """Start offset of each attribute block in the joint embedding table."""
    return np.concatenate([[0], np.cumsum(attr_sizes)[:-1]]).astype(np.int64)


def collate(samples: list[EmbeddedSample], config: ModelConfig) -> Batch:
    """Pad a list of samples into one batch of the model's dtype."""
    if not samples:
        raise ValueError("cannot collate an empty batch")
    dtype = config.np_dtype
    b = len(samples)
    ng = max(s.n_patches for s in samples)
    nx = max(s.n_tokens for s in samples)
    ne = 0 if config.no_external else max(len(s.external_codes) for s in samples)
    offsets = attribute_offsets(config.attribute_vocab_sizes)

    img_patches = np.zeros((b, ng, config.d_img), dtype=dtype)
    img_mask = np.zeros((b, ng), dtype=np.uint8)
    img_global = np.zeros((b, config.d_img), dtype=dtype)
    txt_tokens = np.zeros((b, nx, config.d_txt), dtype=dtype)
    txt_mask = np.zeros((b, nx), dtype=np.uint8)
    txt_global = np.zeros((b, config.d_txt), dtype=dtype)
    ext_codes = np.zeros((b, ne), dtype=np.int64)
    ext_mask = np.zeros((b, ne), dtype=np.uint8)

    want_caption = not config.no_caption
    cap_len = 0
    if want_caption:
        cap_len = max((len(s.caption_ids) for s in samples), default=0)
        if cap_len > config.caption_max_len:
            raise ShapeError(f"caption length {cap_len} exceeds configured "
                             f"maximum {config.caption_max_len}")
    captions = np.full((b, cap_len), PAD_ID, dtype=np.int64) if want_caption else None

    for i, s in enumerate(samples):
        if s.image_patches.shape[1] != config.d_img or s.text_tokens.shape[1] != config.d_txt:
            raise ShapeError(f"sample {s.id!r}: embedding dims "
                             f"({s.image_patches.shape[1]}, {s.text_tokens.shape[1]}) "
                             f"do not match config ({config.d_img}, {config.d_txt})")
        img_patches[i, :s.n_patches] = s.image_patches
        img_mask[i, :s.n_patches] = 1
        img_global[i] = s.image_global
        txt_tokens[i, :s.n_tokens] = s.text_tokens
        txt_mask[i, :s.n_tokens] = 1
        txt_global[i] = s.text_global
        if ne:
            k = len(s.external_codes)
            if k:
                codes = np.asarray(s.external_codes, dtype=np.int64)
                for a in range(ATTRIBUTES_PER_PERSON):
                    block = codes[a::ATTRIBUTES_PER_PERSON]
                    if np.any(block < 0) or np.any(block >= config.attribute_vocab_sizes[a]):
                        raise ShapeError(f"sample {s.id!r}: attribute code out of range")
                ext_codes[i, :k] = codes + np.tile(offsets, k // ATTRIBUTES_PER_PERSON)
                ext_mask[i, :k] = 1
        if want_caption and len(s.caption_ids):
            captions[i, :len(s.caption_ids)] = s.caption_ids

    labels = _collate_labels(samples, config, dtype)
    return Batch(ids=[s.id for s in samples], img_patches=img_patches,
                 img_mask=img_mask, img_global=img_global, txt_tokens=txt_tokens,
                 txt_mask=txt_mask, txt_global=txt_global, ext_codes=ext_codes,
                 ext_mask=ext_mask, captions=captions, labels=labels)


def _collate_labels(samples, config, dtype):
    labels = {}
    for head in config.heads:
        values = []
        for s in samples:
            if head.name not in s.labels:
                raise ValueError(f"sample {s.id!r} has no label for head {head.name!r}")
            values.append(s.labels[head.name])
        if head.kind == "binary":
            arr = np.asarray(values, dtype=dtype)
            if not np.all((arr == 0) | (arr == 1)):
                raise ValueError(f"head {head.name!r}: binary labels must be 0/1")
            labels[head.name] = arr
        elif head.kind == "multiclass":
            arr = np.asarray(values, dtype=np.int64)
            if np.any(arr < 0) or np.any(arr >= head.classes):
                raise ValueError(f"head {head.name!r}: class index out of range")
            labels[head.name] = arr
        else:
            arr = np.asarray(values, dtype=dtype)
            if arr.shape != (len(samples), head.classes):
                raise ValueError(f"head {head.name!r}: multilabel vectors must "
                                 f"have length {head.classes}")
            labels[head.name] = arr
    return labels


# ---------------------------------------------------------------------------
# losses (logit-space, numerically stable)


def binary_ce(logits, targets):
    """Mean BCE over (B,) logits; returns (loss, dlogits)."""
    z = logits.astype(np.float64)
    y = targets.astype(np.float64)
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    p = 1.0 / (1.0 + np.exp(-z))
    return loss, ((p - y) / z.size).astype(logits.dtype)


def multilabel_ce(logits, targets):
    """Mean BCE over all (B, k) units; returns (loss, dlogits)."""
    z = logits.astype(np.float64)
    y = targets.astype(np.float64)
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    p = 1.0 / (1.0 + np.exp(-z))
    return loss, ((p - y) / z.size).astype(logits.dtype)


def categorical_ce(logits, targets):
    """Mean softmax cross-entropy over (B, k); returns (loss, dlogits)."""
    z = logits.astype(np.float64)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    p = e / e.sum(axis=1, keepdims=True)
    n = z.shape[0]
    nll = -np.log(p[np.arange(n), targets])
    d = p
    d[np.arange(n), targets] -= 1
    return float(nll.mean()), (d / n).astype(logits.dtype)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def head_loss(kind, logits, targets):
    if kind == "binary":
        return binary_ce(logits[:, 0], targets)
    if kind == "multiclass":
        return categorical_ce(logits, targets)
    return multilabel_ce(logits, targets)


def head_probs(kind, logits):
    if kind == "binary":
        return sigmoid(logits[:, 0])
    if kind == "multiclass":
        return softmax(logits, axis=1)
    return sigmoid(logits)


def caption_loss_and_grad(caption_logits, caption_ids):
    """Cross-entropy of logits (B, T, V) against targets caption_ids[:, 1:],
    averaged over non-PAD target positions."""
    targets = np.ascontiguousarray(caption_ids[:, 1:].reshape(-1))
    mask = (targets != PAD_ID).astype(np.uint8)
    b, t, v = caption_logits.shape
    flat = np.ascontiguousarray(caption_logits.reshape(b * t, v))
    loss_sum, count, dflat = backend.active().masked_softmax_xent(flat, targets, mask)
    if count == 0:
        return 0.0, np.zeros_like(caption_logits), 0.0
    return loss_sum / count, dflat.reshape(b, t, v), count


def combined_loss(head_scores, labels, caption_logits, caption_ids, alpha):
    """total = task + alpha * caption, parts reported separately.

    head_scores: dict name -> HeadScore (or raw logits); labels: dict
    name -> target array. caption_logits may be None when the decoder is
    ablated. Head kinds are inferred from target dtype/shape: int targets ->
    multiclass, 2-d float -> multilabel, else binary.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    task = 0.0
    per_head = {}
    for name, score in head_scores.items():
        logits = score.logits if isinstance(score, HeadScore) else np.asarray(score)
        if logits.ndim == 1:
            logits = logits[:, None]
        targets = np.asarray(labels[name])
        if np.issubdtype(targets.dtype, np.integer) and targets.ndim == 1 and logits.shape[1] > 1:
            kind = "multiclass"
        elif targets.ndim == 2:
            kind = "multilabel"
        else:
            kind = "binary"
        loss, _ = head_loss(kind, logits, targets)
        per_head[name] = loss
        task += loss
    caption = 0.0
    if caption_logits is not None and caption_ids is not None:
        caption, _, _ = caption_loss_and_grad(caption_logits, caption_ids)
    total = task + alpha * caption
    return total, {"task": task, "caption": caption, "per_head": per_head}


# ---------------------------------------------------------------------------
# the network


class FusionClassifier(Module):
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        dtype = config.np_dtype
        d = config.d_model
        rng = np.random.default_rng(config.seed)

        self.proj_img = Affine(config.d_img, d, rng, dtype)
        self.proj_txt = Affine(config.d_txt, d, rng, dtype)
        self.cls_token = Parameter(trunc_normal_init(rng, (d,), 0.02, dtype))
        self.pos_emb = Parameter(trunc_normal_init(rng, (config.max_positions, d), 0.02, dtype))
        self.seg_emb = Parameter(trunc_normal_init(rng, (len(SEGMENTS), d), 0.02, dtype))
        if not config.no_external:
            self.ext_emb = Embedding(int(sum(config.attribute_vocab_sizes)), d, rng, dtype)
        if not config.no_stage2:
            self.encoder = [
                EncoderLayer(d, config.n_heads, config.ff_dim, config.dropout, rng, dtype)
                for _ in range(config.n_layers)
            ]
        self.heads = {
            h.name: Affine(d, h.classes, rng, dtype) for h in config.heads
        }
        if not config.no_caption:
            dd = config.decoder_dim
            self.mem_proj = Affine(d, dd, rng, dtype)
            self.cap_emb = Embedding(config.caption_vocab_size, dd, rng, dtype)
            self.cap_pos = Parameter(trunc_normal_init(rng, (config.caption_max_len, dd), 0.02, dtype))
            self.decoder = [
                DecoderLayer(dd, config.decoder_heads, config.decoder_ff,
                             config.dropout, rng, dtype)
                for _ in range(config.decoder_layers)
            ]
            self.cap_out = Affine(dd, config.caption_vocab_size, rng, dtype)

    # -- forward ----------------------------------------------------------

    def forward_batch(self, batch: Batch, train: bool = False, rng=None):
        """Run the full network on a collated batch. Returns (output, cache);
        the cache feeds backward_batch and carries attention probabilities."""
        cfg = self.config
        dtype = cfg.np_dtype
        if train and cfg.dropout > 0 and rng is None:
            raise ValueError("training forward with dropout needs an rng")

        pi, _ = self.proj_img.forward(batch.img_patches)
        pg, _ = self.proj_img.forward(batch.img_global)
        ti, _ = self.proj_txt.forward(batch.txt_tokens)
        tg, _ = self.proj_txt.forward(batch.txt_global)

        if cfg.no_stage1:
            f_img, f_txt = pi, ti
        else:
            f_img = pi * tg[:, None, :]
            f_txt = ti * pg[:, None, :]

        b = batch.size
        parts = [np.broadcast_to(self.cls_token.data, (b, 1, cfg.d_model)), f_img, f_txt]
        masks = [np.ones((b, 1), dtype=np.uint8), batch.img_mask, batch.txt_mask]
        use_ext = not cfg.no_external and batch.ext_codes.shape[1] > 0
        if use_ext:
            ext_rows, _ = self.ext_emb.forward(batch.ext_codes)
            parts.append(ext_rows)
            masks.append(batch.ext_mask)
        base = np.concatenate(parts, axis=1)
        tmask = np.concatenate(masks, axis=1)
        s_len = base.shape[1]
        if s_len > cfg.max_positions:
            raise ShapeError(f"sequence length {s_len} exceeds max_positions "
                             f"{cfg.max_positions}")

        seg_cols = np.concatenate([
            np.full(1, SEG_CLS), np.full(f_img.shape[1], SEG_IMG),
            np.full(f_txt.shape[1], SEG_TXT),
            np.full(s_len - 1 - f_img.shape[1] - f_txt.shape[1], SEG_EXT),
        ]).astype(np.int64)
        mask_f = tmask.astype(dtype)[:, :, None]
        added = base + self.pos_emb.data[:s_len][None] + self.seg_emb.data[seg_cols][None]
        seq = added * mask_f
        keep0 = None
        if train and cfg.dropout > 0:
            seq, keep0 = dropout_forward(seq, cfg.dropout, rng)

        enc_caches = []
        if cfg.no_stage2:
            enc_out = seq
            denom = tmask.sum(axis=1).astype(dtype)[:, None]
            r_cls = seq.sum(axis=1) / denom
        else:
            mask3 = key_padding_mask(tmask)
            x = seq
            for layer in self.encoder:
                x, c = layer.forward(x, mask3, train=train, rng=rng)
                enc_caches.append(c)
            enc_out = x
            r_cls = enc_out[:, 0]

        ng = batch.img_mask.shape[1]
        r_img = enc_out[:, 1:1 + ng]

        head_logits = {}
        for spec in cfg.heads:
            logits, _ = self.heads[spec.name].forward(r_cls)
            head_logits[spec.name] = logits

        dec_cache = None
        caption_logits = None
        if not cfg.no_caption and batch.captions is not None and batch.captions.shape[1] > 1:
            caption_logits, dec_cache = self._decode(
                r_img, batch.img_mask, batch.captions[:, :-1], train, rng)

        cache = {
            "batch": batch, "pi": pi, "pg": pg, "ti": ti, "tg": tg,
            "f_img": f_img, "f_txt": f_txt, "use_ext": use_ext,
            "seg_cols": seg_cols, "mask_f": mask_f, "tmask": tmask,
            "keep0": keep0, "seq": seq, "enc_caches": enc_caches,
            "enc_out": enc_out, "r_cls": r_cls, "r_img": r_img,
            "head_logits": head_logits, "dec": dec_cache,
        }
        output = {
            "head_logits": head_logits,
            "caption_logits": caption_logits,
            "r_cls": r_cls,
            "r_img": r_img,
        }
        return output, cache

    def _decode(self, r_img, img_mask, dec_in, train, rng):
        """Teacher-forced decoder pass over caption prefix tokens."""
        cfg = self.config
        dtype = cfg.np_dtype
        t = dec_in.shape[1]
        if t > cfg.caption_max_len:
            raise ShapeError(f"caption prefix length {t} exceeds maximum "
                             f"{cfg.caption_max_len}")
        memory, _ = self.mem_proj.forward(r_img)
        dec_mask = (dec_in != PAD_ID).astype(np.uint8)
        emb, _ = self.cap_emb.forward(dec_in)
        dmask_f = dec_mask.astype(dtype)[:, :, None]
        added = emb + self.cap_pos.data[:t][None]
        x = added * dmask_f
        keep = None
        if train and cfg.dropout > 0:
            x, keep = dropout_forward(x, cfg.dropout, rng)
        self_mask = causal_padding_mask(dec_mask)
        x_mask = cross_mask(dec_mask, img_mask)
        layer_caches = []
        for layer in self.decoder:
            x, c = layer.forward(x, memory, self_mask, x_mask, train=train, rng=rng)
            layer_caches.append(c)
        logits, _ = self.cap_out.forward(x)
        cache = {
            "r_img": r_img, "memory": memory, "dec_in": dec_in,
            "dec_mask": dec_mask, "dmask_f": dmask_f, "keep": keep,
            "layer_caches": layer_caches, "dec_out": x,
        }
        return logits, cache

    # -- loss + backward ---------------------------------------------------

    def loss_and_grads(self, batch: Batch, train: bool = True, rng=None):
        """Forward, composite loss, and full backward. Accumulates into
        Parameter.grad (call zero_grad first) and returns the loss parts."""
        output, cache = self.forward_batch(batch, train=train, rng=rng)
        cfg = self.config

        task = 0.0
        per_head = {}
        d_rcls = np.zeros_like(cache["r_cls"])
        for spec in cfg.heads:
            logits = output["head_logits"][spec.name]
            loss, dlogits = head_loss(spec.kind, logits, batch.labels[spec.name])
            if dlogits.ndim == 1:
                dlogits = dlogits[:, None]
            per_head[spec.name] = loss
            task += loss
            d_rcls += self.heads[spec.name].backward(dlogits, cache["r_cls"])

        caption = 0.0
        d_rimg = np.zeros_like(cache["r_img"])
        if output["caption_logits"] is not None:
            caption, draw, count = caption_loss_and_grad(
                output["caption_logits"], batch.captions)
            if count > 0 and cfg.alpha > 0:
                scale = np.asarray(cfg.alpha / count, dtype=draw.dtype)
                d_rimg += self._decode_backward(draw * scale, cache["dec"])

        total = task + cfg.alpha * caption
        self._backward_trunk(d_rcls, d_rimg, cache)
        parts = {"total": total, "task": task, "caption": caption, "per_head": per_head}
        return output, cache, parts

    def _decode_backward(self, dlogits, dec):
        d_x = self.cap_out.backward(dlogits, dec["dec_out"])
        d_memory = np.zeros_like(dec["memory"])
        for layer, c in zip(reversed(self.decoder), reversed(dec["layer_caches"])):
            d_x, d_mem = layer.backward(d_x, c)
            d_memory += d_mem
        if dec["keep"] is not None:
            d_x = dropout_backward(d_x, dec["keep"])
        d_added = d_x * dec["dmask_f"]
        self.cap_pos.grad[:d_added.shape[1]] += d_added.sum(axis=0)
        self.cap_emb.backward(d_added, dec["dec_in"])
        return self.mem_proj.backward(d_memory, dec["r_img"])

    def _backward_trunk(self, d_rcls, d_rimg, cache):
        cfg = self.config
        batch: Batch = cache["batch"]
        d_enc_out = np.zeros_like(cache["enc_out"])
        ng = batch.img_mask.shape[1]
        d_enc_out[:, 1:1 + ng] += d_rimg

        if cfg.no_stage2:
            dtype = cfg.np_dtype
            denom = cache["tmask"].sum(axis=1).astype(dtype)[:, None, None]
            d_seq = d_enc_out + (d_rcls[:, None, :] / denom) * cache["mask_f"]
        else:
            d_enc_out[:, 0] += d_rcls
            d_x = d_enc_out
            for layer, c in zip(reversed(self.encoder), reversed(cache["enc_caches"])):
                d_x = layer.backward(d_x, c)
            d_seq = d_x

        if cache["keep0"] is not None:
            d_seq = dropout_backward(d_seq, cache["keep0"])
        d_added = d_seq * cache["mask_f"]

        s_len = d_added.shape[1]
        self.pos_emb.grad[:s_len] += d_added.sum(axis=0)
        seg_cols = cache["seg_cols"]
        for seg in range(len(SEGMENTS)):
            cols = seg_cols == seg
            if np.any(cols):
                self.seg_emb.grad[seg] += d_added[:, cols, :].sum(axis=(0, 1))

        d_base = d_added
        self.cls_token.grad += d_base[:, 0].sum(axis=0)
        n_img = cache["f_img"].shape[1]
        n_txt = cache["f_txt"].shape[1]
        d_fimg = d_base[:, 1:1 + n_img]
        d_ftxt = d_base[:, 1 + n_img:1 + n_img + n_txt]
        if cache["use_ext"]:
            d_ext = d_base[:, 1 + n_img + n_txt:]
            self.ext_emb.backward(d_ext, batch.ext_codes)

        if cfg.no_stage1:
            d_pi, d_ti = d_fimg, d_ftxt
            d_pg = np.zeros_like(cache["pg"])
            d_tg = np.zeros_like(cache["tg"])
        else:
            d_pi = d_fimg * cache["tg"][:, None, :]
            d_tg = (d_fimg * cache["pi"]).sum(axis=1)
            d_ti = d_ftxt * cache["pg"][:, None, :]
            d_pg = (d_ftxt * cache["ti"]).sum(axis=1)

        self.proj_img.backward(d_pi, batch.img_patches)
        self.proj_img.backward(d_pg, batch.img_global)
        self.proj_txt.backward(d_ti, batch.txt_tokens)
        self.proj_txt.backward(d_tg, batch.txt_global)

    # -- spec-level single-sample operations --------------------------------

    def project_modalities(self, sample: EmbeddedSample):
        """Project one sample's embeddings into the model dimension."""
        cfg = self.config
        if sample.image_patches.shape[1] != cfg.d_img:
            raise ShapeError(f"image dim {sample.image_patches.shape[1]} != {cfg.d_img}")
        if sample.text_tokens.shape[1] != cfg.d_txt:
            raise ShapeError(f"text dim {sample.text_tokens.shape[1]} != {cfg.d_txt}")
        dtype = cfg.np_dtype
        img_proj, _ = self.proj_img.forward(sample.image_patches.astype(dtype))
        img_global, _ = self.proj_img.forward(sample.image_global.astype(dtype)[None])
        txt_proj, _ = self.proj_txt.forward(sample.text_tokens.astype(dtype))
        txt_global, _ = self.proj_txt.forward(sample.text_global.astype(dtype)[None])
        return img_proj, img_global[0], txt_proj, txt_global[0]

    def embed_external(self, codes):
        """Embed flattened attribute codes; (n_e, d_model), possibly empty."""
        cfg = self.config
        if cfg.no_external:
            raise ConfigError("external embedding is ablated (no_external)")
        codes = np.asarray(codes, dtype=np.int64)
        if codes.size == 0:
            return np.zeros((0, cfg.d_model), dtype=cfg.np_dtype)
        if codes.size % ATTRIBUTES_PER_PERSON != 0:
            raise ShapeError("codes length must be a multiple of 3")
        offsets = attribute_offsets(cfg.attribute_vocab_sizes)
        for a in range(ATTRIBUTES_PER_PERSON):
            block = codes[a::ATTRIBUTES_PER_PERSON]
            if np.any(block < 0) or np.any(block >= cfg.attribute_vocab_sizes[a]):
                raise ShapeError(f"attribute code out of range in block {a}")
        rows, _ = self.ext_emb.forward(codes + np.tile(offsets, codes.size // 3))
        return rows

    def encode(self, f_img, f_txt, ext_rows=None) -> FusedSequence:
        """Stage-2 encoding of one sample's fused tokens; returns the
        post-encoder FusedSequence [CLS, image, text, external]."""
        cfg = self.config
        dtype = cfg.np_dtype
        ext_rows = np.zeros((0, cfg.d_model), dtype=dtype) if ext_rows is None else ext_rows
        n_g, n_x, n_e = f_img.shape[0], f_txt.shape[0], ext_rows.shape[0]
        s_len = 1 + n_g + n_x + n_e
        if s_len > cfg.max_positions:
            raise ShapeError(f"sequence length {s_len} exceeds max_positions "
                             f"{cfg.max_positions}")
        seq = np.concatenate([self.cls_token.data[None], f_img, f_txt, ext_rows], axis=0)
        seg_cols = np.concatenate([
            np.full(1, SEG_CLS), np.full(n_g, SEG_IMG),
            np.full(n_x, SEG_TXT), np.full(n_e, SEG_EXT)]).astype(np.int64)
        seq = seq + self.pos_emb.data[:s_len] + self.seg_emb.data[seg_cols]
        if cfg.no_stage2:
            out = seq
        else:
            mask3 = key_padding_mask(np.ones((1, s_len), dtype=np.uint8))
            x = seq[None].astype(dtype)
            for layer in self.encoder:
                x, _ = layer.forward(x, mask3)
            out = x[0]
        return FusedSequence(tokens=out, segment_ids=seg_cols,
                             pad_mask=np.ones(s_len, dtype=bool))

    def classify(self, r_cls) -> dict[str, HeadScore]:
        """Head scores for one encoded CLS state."""
        r = np.asarray(r_cls, dtype=self.config.np_dtype)[None]
        scores = {}
        for spec in self.config.heads:
            logits, _ = self.heads[spec.name].forward(r)
            scores[spec.name] = HeadScore(logits=logits[0],
                                          probs=head_probs(spec.kind, logits)[0])
        return scores

    def decode_caption(self, fused_image_features, target_prefix):
        """Teacher-forced caption logits for one sample: (len(prefix), vocab)."""
        cfg = self.config
        if cfg.no_caption:
            raise ConfigError("caption decoder is ablated (no_caption)")
        prefix = np.asarray(target_prefix, dtype=np.int64)
        if prefix.size == 0 or prefix[0] != BOS_ID:
            raise ValueError("caption prefix must start with BOS")
        if prefix.size > cfg.caption_max_len:
            raise ShapeError(f"caption prefix length {prefix.size} exceeds "
                             f"maximum {cfg.caption_max_len}")
        r_img = np.asarray(fused_image_features, dtype=cfg.np_dtype)[None]
        img_mask = np.ones((1, r_img.shape[1]), dtype=np.uint8)
        logits, _ = self._decode(r_img, img_mask, prefix[None], train=False, rng=None)
        return logits[0]

    def forward(self, sample: EmbeddedSample) -> ModelOutput:
        """Full inference on one sample."""
        batch = collate([sample], self.config)
        output, _ = self.forward_batch(batch, train=False)
        scores = {}
        for spec in self.config.heads:
            logits = output["head_logits"][spec.name]
            scores[spec.name] = HeadScore(logits=logits[0],
                                          probs=head_probs(spec.kind, logits)[0])
        cap = output["caption_logits"]
        return ModelOutput(
            head_scores=scores,
            caption_logits=None if cap is None else cap[0],
            fused_image_features=output["r_img"][0],
            r_cls=output["r_cls"][0],
        )

    def greedy_caption(self, sample: EmbeddedSample, max_len=None) -> list[int]:
        """Greedy-decode a caption for inspection; returns token ids with
        BOS/EOS framing."""
        cfg = self.config
        if cfg.no_caption:
            raise ConfigError("caption decoder is ablated (no_caption)")
        batch = collate([sample], self.config)
        output, _ = self.forward_batch(batch, train=False)
        r_img = output["r_img"]
        img_mask = np.ones((1, r_img.shape[1]), dtype=np.uint8)
        limit = min(max_len or cfg.caption_max_len, cfg.caption_max_len)
        ids = [BOS_ID]
        while len(ids) < limit:
            prefix = np.asarray(ids, dtype=np.int64)[None]
            logits, _ = self._decode(r_img, img_mask, prefix, train=False, rng=None)
            nxt = int(np.argmax(logits[0, -1]))
            ids.append(nxt)
            if nxt == EOS_ID:
                break
        return ids

    def count_parameters(self) -> int:
        """Exact trainable scalar count."""
        return self.n_params()

    def parameter_breakdown(self) -> dict[str, int]:
        """Scalar count per top-level submodule."""
        out: dict[str, int] = {}
        for name, p in self.named_parameters():
            top = name.split(".")[0]
            out[top] = out.get(top, 0) + p.size
        return out


# ---------------------------------------------------------------------------
# stage-1 fusion as a pure function (it has no parameters)


def fuse_stage1(img_proj, img_global_proj, txt_proj, txt_global_proj):
    """f_img[i] = img_proj[i] * txt_global_proj; f_txt[j] = txt_proj[j] *
    img_global_proj (element-wise)."""
    img_proj = np.asarray(img_proj)
    txt_proj = np.asarray(txt_proj)
    img_global_proj = np.asarray(img_global_proj)
    txt_global_proj = np.asarray(txt_global_proj)
    d = img_proj.shape[-1]
    for arr, name in ((img_global_proj, "img_global_proj"),
                      (txt_global_proj, "txt_global_proj")):
        if arr.shape[-1] != d:
            raise ShapeError(f"{name} dimension {arr.shape[-1]} != {d}")
    if txt_proj.shape[-1] != d:
        raise ShapeError(f"txt_proj dimension {txt_proj.shape[-1]} != {d}")
    f_img = img_proj * txt_global_proj[..., None, :]
    f_txt = txt_proj * img_global_proj[..., None, :]
    return f_img, f_txt


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: FusionClassifier, path) -> None:
    """Versioned checkpoint: magic line, JSON header (config + tensor table),
    then raw little-endian tensor bytes in table order."""
    names, params = zip(*model.named_parameters())
    header = {
        "config": asdict(model.config),
        "tensors": [
            {"name": n, "dtype": str(p.data.dtype), "shape": list(p.data.shape)}
            for n, p in zip(names, params)
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" %d\n" % CHECKPOINT_VERSION)
        fh.write(blob + b"\n")
        for p in params:
            fh.write(np.ascontiguousarray(p.data).astype(p.data.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> FusionClassifier:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if not magic.startswith(CHECKPOINT_MAGIC):
            raise ManifestError(f"not a checkpoint file: {path}")
        version = int(magic.split()[-1])
        if version != CHECKPOINT_VERSION:
            raise SchemaVersionError(version, CHECKPOINT_VERSION)
        header = json.loads(fh.readline())
        payload = fh.read()
    config = ModelConfig(**header["config"])
    model = FusionClassifier(config)
    have = dict(model.named_parameters())
    offset = 0
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        raw = payload[offset:offset + nbytes]
        if len(raw) != nbytes:
            raise ManifestError(f"checkpoint truncated at tensor {entry['name']!r}")
        offset += nbytes
        if entry["name"] not in have:
            raise ManifestError(f"unexpected tensor {entry['name']!r} in checkpoint")
        arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
        have[entry["name"]].data = np.ascontiguousarray(arr)
        have[entry["name"]].grad = np.zeros_like(have[entry["name"]].data)
    if offset != len(payload):
        raise ManifestError("checkpoint has trailing bytes")
    return model
