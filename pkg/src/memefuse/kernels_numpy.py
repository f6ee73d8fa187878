"""Pure NumPy kernels.

Reference implementations of the hot inner loops. ``kernels_numba`` provides
drop-in compiled versions of the same functions; ``backend`` picks one set at
runtime. Dense matmuls are not here on purpose -- callers go straight to
``np.matmul`` and its BLAS backend, which a jitted loop would not beat.

Conventions shared by both backends:
  * masks are uint8 arrays, nonzero = keep,
  * all float arrays are C-contiguous and share one dtype per call,
  * in-place kernels (adam_update, embedding_grad) return None.
"""

import numpy as np


def layer_norm_forward(x, gamma, beta, eps):
    """Normalize each row of x (N, D). Returns (y, mean, rstd)."""
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    var = np.mean(xc * xc, axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd[:, None] * gamma + beta
    return y.astype(x.dtype, copy=False), mean, rstd


def layer_norm_backward(dy, x, gamma, mean, rstd):
    """Backward of layer_norm_forward. Returns (dx, dgamma, dbeta)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx.astype(x.dtype, copy=False), dgamma, dbeta


def masked_softmax(scores, mask):
    """Row softmax over the last axis of scores (B, H, Tq, Tk).

    mask has shape (B, Tq, Tk); masked-out entries get probability exactly 0.
    A fully masked row yields all zeros instead of NaN.
    """
    keep = (mask != 0)[:, None, :, :]
    neg = np.array(-np.inf, dtype=scores.dtype)
    s = np.where(keep, scores, neg)
    smax = s.max(axis=-1, keepdims=True)
    smax = np.where(np.isfinite(smax), smax, 0)
    e = np.exp(s - smax)
    e = np.where(keep, e, 0)
    z = e.sum(axis=-1, keepdims=True)
    z = np.where(z > 0, z, 1)
    return (e / z).astype(scores.dtype, copy=False)


def softmax_grad(probs, dprobs):
    """Backward of a row softmax: dscore = p * (dp - sum(p * dp))."""
    dot = np.sum(probs * dprobs, axis=-1, keepdims=True)
    return (probs * (dprobs - dot)).astype(probs.dtype, copy=False)


def masked_softmax_xent(logits, targets, mask):
    """Per-row softmax cross-entropy with a row mask.

    logits (N, V), targets int64 (N,), mask uint8 (N,). Returns
    (loss_sum, count, dlogits) where dlogits is (softmax - onehot) for kept
    rows and zero elsewhere; the caller normalizes by count.
    """
    keep = mask != 0
    smax = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - smax)
    z = e.sum(axis=1, keepdims=True)
    p = e / z
    n = logits.shape[0]
    logp = (logits - smax)[np.arange(n), targets] - np.log(z[:, 0])
    loss_sum = float(-logp[keep].sum())
    dlogits = p.astype(logits.dtype, copy=False)
    dlogits[np.arange(n), targets] -= 1
    dlogits[~keep] = 0
    return loss_sum, float(keep.sum()), dlogits


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bias_c1, bias_c2):
    """One Adam step on flat views; updates param, m, v in place."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / bias_c1
    vhat = v / bias_c2
    param -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(param.dtype, copy=False)


def embedding_grad(ids, dout, grad):
    """Scatter-add rows of dout (N, D) into grad (V, D) at ids (N,)."""
    np.add.at(grad, ids, dout)
