"""Numba-compiled kernels, drop-in replacements for ``kernels_numpy``.

All kernels are serial loops: at desk-scale shapes a threaded kernel pays far
more in per-call fork/join than the arithmetic costs, and serial loops are
trivially deterministic.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def layer_norm_forward(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    mean = np.empty(n, dtype=x.dtype)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        s = x.dtype.type(0.0)
        for j in range(d):
            s += x[i, j]
        mu = s / d
        q = x.dtype.type(0.0)
        for j in range(d):
            c = x[i, j] - mu
            q += c * c
        r = 1.0 / np.sqrt(q / d + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * r * gamma[j] + beta[j]
    return y, mean, rstd


@njit(cache=True)
def layer_norm_backward(dy, x, gamma, mean, rstd):
    n, d = x.shape
    dx = np.empty_like(x)
    dgamma = np.zeros(d, dtype=x.dtype)
    dbeta = np.zeros(d, dtype=x.dtype)
    for i in range(n):
        m1 = x.dtype.type(0.0)
        m2 = x.dtype.type(0.0)
        for j in range(d):
            xh = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dgamma[j] += dy[i, j] * xh
            dbeta[j] += dy[i, j]
            m1 += dxh
            m2 += dxh * xh
        m1 /= d
        m2 /= d
        for j in range(d):
            xh = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dx[i, j] = (dxh - m1 - xh * m2) * rstd[i]
    return dx, dgamma, dbeta


@njit(cache=True)
def masked_softmax(scores, mask):
    b, h, tq, tk = scores.shape
    probs = np.empty_like(scores)
    for bi in range(b):
        for hi in range(h):
            for qi in range(tq):
                smax = -np.inf
                for ki in range(tk):
                    if mask[bi, qi, ki] != 0 and scores[bi, hi, qi, ki] > smax:
                        smax = scores[bi, hi, qi, ki]
                if smax == -np.inf:
                    for ki in range(tk):
                        probs[bi, hi, qi, ki] = 0.0
                    continue
                z = scores.dtype.type(0.0)
                for ki in range(tk):
                    if mask[bi, qi, ki] != 0:
                        e = np.exp(scores[bi, hi, qi, ki] - smax)
                        probs[bi, hi, qi, ki] = e
                        z += e
                    else:
                        probs[bi, hi, qi, ki] = 0.0
                for ki in range(tk):
                    probs[bi, hi, qi, ki] /= z
    return probs


@njit(cache=True)
def softmax_grad(probs, dprobs):
    b, h, tq, tk = probs.shape
    ds = np.empty_like(probs)
    for bi in range(b):
        for hi in range(h):
            for qi in range(tq):
                dot = probs.dtype.type(0.0)
                for ki in range(tk):
                    dot += probs[bi, hi, qi, ki] * dprobs[bi, hi, qi, ki]
                for ki in range(tk):
                    ds[bi, hi, qi, ki] = probs[bi, hi, qi, ki] * (dprobs[bi, hi, qi, ki] - dot)
    return ds


@njit(cache=True)
def masked_softmax_xent(logits, targets, mask):
    n, v = logits.shape
    dlogits = np.empty_like(logits)
    loss_sum = 0.0
    count = 0.0
    for i in range(n):
        smax = logits[i, 0]
        for j in range(1, v):
            if logits[i, j] > smax:
                smax = logits[i, j]
        z = logits.dtype.type(0.0)
        for j in range(v):
            e = np.exp(logits[i, j] - smax)
            dlogits[i, j] = e
            z += e
        if mask[i] != 0:
            loss_sum += -(float(logits[i, targets[i]]) - float(smax) - np.log(float(z)))
            count += 1.0
            for j in range(v):
                dlogits[i, j] /= z
            dlogits[i, targets[i]] -= 1.0
        else:
            for j in range(v):
                dlogits[i, j] = 0.0
    return loss_sum, count, dlogits


@njit(cache=True)
def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bias_c1, bias_c2):
    n = param.shape[0]
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        mhat = m[i] / bias_c1
        vhat = v[i] / bias_c2
        param[i] -= lr * mhat / (np.sqrt(vhat) + eps)


@njit(cache=True)
def embedding_grad(ids, dout, grad):
    n, d = dout.shape
    for i in range(n):
        row = ids[i]
        for j in range(d):
            grad[row, j] += dout[i, j]
