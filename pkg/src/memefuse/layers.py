"""Neural net building blocks with explicit backward passes.

Forward methods are pure: they return (output, cache) and leave the module
untouched, so concurrent inference is safe. backward(dout, cache) accumulates
into Parameter.grad and returns the input gradient; training therefore needs
exclusive ownership of the module, matching the package's concurrency rules.

Hot per-element loops (layernorm, masked softmax, scatter-add) go through
``backend``; dense matmuls use np.matmul directly.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

from . import backend

AttnCache = namedtuple("AttnCache", "q_in kv_in q k v probs ctx mask")


class Parameter:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.ascontiguousarray(data)
        self.grad = np.zeros_like(self.data)

    @property
    def size(self):
        return self.data.size


class Module:
    """Container of Parameters and sub-Modules, discovered by attribute walk."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            yield from _walk(key, value)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(key, value):
    if isinstance(value, Parameter):
        yield key, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=key + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{key}.{i}", item)
    elif isinstance(value, dict):
        for k, item in value.items():
            yield from _walk(f"{key}.{k}", item)


# ---------------------------------------------------------------------------
# initializers


def uniform_fan_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def trunc_normal_init(rng, shape, std, dtype):
    """Normal(0, std) with resampling outside 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


# ---------------------------------------------------------------------------
# layers


class Affine(Module):
    def __init__(self, d_in, d_out, rng, dtype):
        self.W = Parameter(uniform_fan_init(rng, (d_in, d_out), d_in, dtype))
        self.b = Parameter(uniform_fan_init(rng, (d_out,), d_in, dtype))

    def forward(self, x):
        return x @ self.W.data + self.b.data, x

    def backward(self, dy, x):
        d_in = self.W.data.shape[0]
        x2 = x.reshape(-1, d_in)
        dy2 = dy.reshape(-1, self.W.data.shape[1])
        self.W.grad += x2.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        return (dy2 @ self.W.data.T).reshape(x.shape)


class LayerNorm(Module):
    def __init__(self, dim, dtype, eps=1e-5):
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps
        self.dim = dim

    def forward(self, x):
        x2 = np.ascontiguousarray(x.reshape(-1, self.dim))
        y, mean, rstd = backend.active().layer_norm_forward(
            x2, self.gamma.data, self.beta.data, self.eps)
        return y.reshape(x.shape), (x2, mean, rstd)

    def backward(self, dy, cache):
        x2, mean, rstd = cache
        dy2 = np.ascontiguousarray(dy.reshape(-1, self.dim))
        dx, dgamma, dbeta = backend.active().layer_norm_backward(
            dy2, x2, self.gamma.data, mean, rstd)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx.reshape(dy.shape)


class Embedding(Module):
    def __init__(self, n_rows, dim, rng, dtype, std=0.02):
        self.table = Parameter(trunc_normal_init(rng, (n_rows, dim), std, dtype))

    def forward(self, ids):
        return self.table.data[ids], ids

    def backward(self, dy, ids):
        flat_ids = np.ascontiguousarray(ids.reshape(-1), dtype=np.int64)
        dy2 = np.ascontiguousarray(dy.reshape(flat_ids.shape[0], -1))
        backend.active().embedding_grad(flat_ids, dy2, self.table.grad)


def dropout_forward(x, p, rng):
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    keep /= (1.0 - p)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy * keep


class MultiHeadAttention(Module):
    """Softmax attention; self-attention when kv input is the query input."""

    def __init__(self, d_model, n_heads, rng, dtype, kv_dim=None):
        kv_dim = kv_dim or d_model
        self.q_proj = Affine(d_model, d_model, rng, dtype)
        self.k_proj = Affine(kv_dim, d_model, rng, dtype)
        self.v_proj = Affine(kv_dim, d_model, rng, dtype)
        self.o_proj = Affine(d_model, d_model, rng, dtype)
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.scale = 1.0 / np.sqrt(self.d_head)

    def _split(self, x):
        b, t, _ = x.shape
        return np.ascontiguousarray(
            x.reshape(b, t, self.n_heads, self.d_head).transpose(0, 2, 1, 3))

    def _merge(self, x):
        b, h, t, dh = x.shape
        return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, t, h * dh)

    def forward(self, q_in, kv_in, mask):
        """mask: uint8 (B, Tq, Tk), nonzero = attend. Returns (out, cache)."""
        qf, _ = self.q_proj.forward(q_in)
        kf, _ = self.k_proj.forward(kv_in)
        vf, _ = self.v_proj.forward(kv_in)
        q, k, v = self._split(qf), self._split(kf), self._split(vf)
        scores = np.ascontiguousarray(q @ k.transpose(0, 1, 3, 2)) * np.asarray(
            self.scale, dtype=q.dtype)
        probs = backend.active().masked_softmax(scores, mask)
        ctx = self._merge(probs @ v)
        out, _ = self.o_proj.forward(ctx)
        return out, AttnCache(q_in, kv_in, q, k, v, probs, ctx, mask)

    def backward(self, dout, cache):
        q_in, kv_in, q, k, v, probs, ctx, mask = cache
        dctx = self._split(self.o_proj.backward(dout, ctx))
        dprobs = np.ascontiguousarray(dctx @ v.transpose(0, 1, 3, 2))
        dv = probs.transpose(0, 1, 3, 2) @ dctx
        dscores = backend.active().softmax_grad(probs, dprobs)
        dscores *= np.asarray(self.scale, dtype=dscores.dtype)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dq_in = self.q_proj.backward(self._merge(dq), q_in)
        dkv = self.k_proj.backward(self._merge(dk), kv_in)
        dkv += self.v_proj.backward(self._merge(dv), kv_in)
        return dq_in, dkv


class FeedForward(Module):
    def __init__(self, d_model, d_hidden, rng, dtype):
        self.lin1 = Affine(d_model, d_hidden, rng, dtype)
        self.lin2 = Affine(d_hidden, d_model, rng, dtype)

    def forward(self, x):
        pre, _ = self.lin1.forward(x)
        hidden = np.maximum(pre, 0)
        out, _ = self.lin2.forward(hidden)
        return out, (x, pre, hidden)

    def backward(self, dy, cache):
        x, pre, hidden = cache
        dhidden = self.lin2.backward(dy, hidden)
        dpre = dhidden * (pre > 0)
        return self.lin1.backward(dpre, x)


class EncoderLayer(Module):
    """Post-norm block: LN(x + attn(x)), then LN(h + ffn(h))."""

    def __init__(self, d_model, n_heads, ff_dim, dropout, rng, dtype):
        self.attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln1 = LayerNorm(d_model, dtype)
        self.ffn = FeedForward(d_model, ff_dim, rng, dtype)
        self.ln2 = LayerNorm(d_model, dtype)
        self.dropout = dropout

    def forward(self, x, mask, train=False, rng=None):
        a, a_cache = self.attn.forward(x, x, mask)
        a, keep1 = _maybe_drop(a, self.dropout, train, rng)
        h, ln1_cache = self.ln1.forward(x + a)
        f, f_cache = self.ffn.forward(h)
        f, keep2 = _maybe_drop(f, self.dropout, train, rng)
        out, ln2_cache = self.ln2.forward(h + f)
        return out, (a_cache, keep1, ln1_cache, f_cache, keep2, ln2_cache)

    def backward(self, dout, cache):
        a_cache, keep1, ln1_cache, f_cache, keep2, ln2_cache = cache
        dh_plus_f = self.ln2.backward(dout, ln2_cache)
        df = dh_plus_f if keep2 is None else dropout_backward(dh_plus_f, keep2)
        dh = dh_plus_f + self.ffn.backward(df, f_cache)
        dx_plus_a = self.ln1.backward(dh, ln1_cache)
        da = dx_plus_a if keep1 is None else dropout_backward(dx_plus_a, keep1)
        dq, dkv = self.attn.backward(da, a_cache)
        return dx_plus_a + dq + dkv


class DecoderLayer(Module):
    """Post-norm decoder block: causal self-attention, cross-attention over
    the (projected) fused image tokens, then feed-forward."""

    def __init__(self, d_model, n_heads, ff_dim, dropout, rng, dtype):
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln1 = LayerNorm(d_model, dtype)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln2 = LayerNorm(d_model, dtype)
        self.ffn = FeedForward(d_model, ff_dim, rng, dtype)
        self.ln3 = LayerNorm(d_model, dtype)
        self.dropout = dropout

    def forward(self, x, memory, self_mask, cross_mask, train=False, rng=None):
        a, a_cache = self.self_attn.forward(x, x, self_mask)
        a, keep1 = _maybe_drop(a, self.dropout, train, rng)
        h1, ln1_cache = self.ln1.forward(x + a)
        c, c_cache = self.cross_attn.forward(h1, memory, cross_mask)
        c, keep2 = _maybe_drop(c, self.dropout, train, rng)
        h2, ln2_cache = self.ln2.forward(h1 + c)
        f, f_cache = self.ffn.forward(h2)
        f, keep3 = _maybe_drop(f, self.dropout, train, rng)
        out, ln3_cache = self.ln3.forward(h2 + f)
        cache = (a_cache, keep1, ln1_cache, c_cache, keep2, ln2_cache,
                 f_cache, keep3, ln3_cache)
        return out, cache

    def backward(self, dout, cache):
        (a_cache, keep1, ln1_cache, c_cache, keep2, ln2_cache,
         f_cache, keep3, ln3_cache) = cache
        dh2_plus_f = self.ln3.backward(dout, ln3_cache)
        df = dh2_plus_f if keep3 is None else dropout_backward(dh2_plus_f, keep3)
        dh2 = dh2_plus_f + self.ffn.backward(df, f_cache)
        dh1_plus_c = self.ln2.backward(dh2, ln2_cache)
        dc = dh1_plus_c if keep2 is None else dropout_backward(dh1_plus_c, keep2)
        dq_c, dmemory = self.cross_attn.backward(dc, c_cache)
        dh1 = dh1_plus_c + dq_c
        dx_plus_a = self.ln1.backward(dh1, ln1_cache)
        da = dx_plus_a if keep1 is None else dropout_backward(dx_plus_a, keep1)
        dq, dkv = self.self_attn.backward(da, a_cache)
        return dx_plus_a + dq + dkv, dmemory


def _maybe_drop(x, p, train, rng):
    if train and p > 0:
        return dropout_forward(x, p, rng)
    return x, None


# ---------------------------------------------------------------------------
# attention mask builders


def key_padding_mask(token_mask):
    """(B, S) keep-mask -> (B, S, S) attention mask (every query sees every
    unmasked key)."""
    b, s = token_mask.shape
    return np.ascontiguousarray(
        np.broadcast_to(token_mask[:, None, :], (b, s, s)).astype(np.uint8))


def causal_padding_mask(token_mask):
    """(B, T) keep-mask -> (B, T, T) causal mask intersected with key padding."""
    b, t = token_mask.shape
    causal = np.tril(np.ones((t, t), dtype=np.uint8))
    return np.ascontiguousarray(causal[None, :, :] * token_mask[:, None, :].astype(np.uint8))


def cross_mask(query_mask, memory_mask):
    """(B, Tq), (B, M) keep-masks -> (B, Tq, M) cross-attention mask."""
    return np.ascontiguousarray(
        (query_mask[:, :, None] * memory_mask[:, None, :]).astype(np.uint8))
