"""Benchmark the numba kernels against the pure NumPy fallback.

Run as `python -m memefuse.bench`. Shapes default to what one training step
of the desk-scale synthetic experiment actually sees; crank --scale up to
approximate the published model sizes. The first numba call per kernel is a
compile, so timings are taken after a warmup call.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import backend


def _timeit(fn, repeats):
    fn()  # warmup / compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(scale: int, dtype=np.float32):
    rng = np.random.default_rng(0)
    n, d = 512 * scale, 64 * scale
    b, h, t = 32, 4, 16 * scale
    v = 256 * scale

    x = rng.standard_normal((n, d)).astype(dtype)
    gamma = np.ones(d, dtype=dtype)
    beta = np.zeros(d, dtype=dtype)
    dy = rng.standard_normal((n, d)).astype(dtype)

    scores = rng.standard_normal((b, h, t, t)).astype(dtype)
    mask = (rng.random((b, t, t)) > 0.1).astype(np.uint8)
    probs_in = rng.random((b, h, t, t)).astype(dtype)
    dprobs = rng.standard_normal((b, h, t, t)).astype(dtype)

    logits = rng.standard_normal((n, v)).astype(dtype)
    targets = rng.integers(0, v, size=n).astype(np.int64)
    row_mask = (rng.random(n) > 0.2).astype(np.uint8)

    flat = rng.standard_normal(n * d).astype(dtype)
    grad = rng.standard_normal(n * d).astype(dtype)
    ids = rng.integers(0, 64, size=n).astype(np.int64)
    table_grad = np.zeros((64, d), dtype=dtype)

    def ln_fwd(k):
        return lambda: k.layer_norm_forward(x, gamma, beta, 1e-5)

    def ln_bwd(k):
        mean = x.mean(axis=1)
        rstd = 1.0 / np.sqrt(x.var(axis=1) + 1e-5)
        return lambda: k.layer_norm_backward(dy, x, gamma, mean.astype(dtype), rstd.astype(dtype))

    def sm(k):
        return lambda: k.masked_softmax(scores, mask)

    def sm_grad(k):
        return lambda: k.softmax_grad(probs_in, dprobs)

    def xent(k):
        return lambda: k.masked_softmax_xent(logits, targets, row_mask)

    def adam(k):
        p = flat.copy()
        m = np.zeros_like(p)
        vv = np.zeros_like(p)
        return lambda: k.adam_update(p, grad, m, vv, 1e-3, 0.9, 0.999, 1e-8, 0.9, 0.99)

    def emb(k):
        return lambda: k.embedding_grad(ids, x, table_grad)

    return [
        ("layer_norm_forward", ln_fwd),
        ("layer_norm_backward", ln_bwd),
        ("masked_softmax", sm),
        ("softmax_grad", sm_grad),
        ("masked_softmax_xent", xent),
        ("adam_update", adam),
        ("embedding_grad", emb),
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--scale", type=int, default=1)
    parser.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = parser.parse_args(argv)

    dtype = np.float32 if args.dtype == "float32" else np.float64
    cases = kernel_cases(args.scale, dtype)

    from . import kernels_numpy
    backends = [("numpy", kernels_numpy)]
    try:
        from . import kernels_numba
        backends.append(("numba", kernels_numba))
    except ImportError:
        print("numba not importable; benchmarking numpy only")

    print(f"{'kernel':22}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for name, make in cases:
        times = []
        for _, mod in backends:
            times.append(_timeit(make(mod), args.repeats))
        row = f"{name:22}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times)
        if len(times) == 2 and times[1] > 0:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)
    print(f"\nactive backend for this process: {backend.backend_name()} "
          f"(set MEMEFUSE_BACKEND to override)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
