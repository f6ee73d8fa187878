"""Shared test fixtures and independent oracles."""

import numpy as np

from memefuse import FusionClassifier, HeadSpec, ModelConfig, generate_synthetic
from memefuse.model import collate


def tiny_config(manifest, heads=(HeadSpec("hate", "binary"),), **overrides):
    base = dict(d_model=8, n_heads=2, ff_dim=16, n_layers=1,
                decoder_dim=8, decoder_heads=2, decoder_ff=8, decoder_layers=1,
                alpha=0.5, dropout=0.0, max_positions=64, seed=0, dtype="float64",
                heads=tuple(heads))
    base.update(overrides)
    return ModelConfig(**base).for_manifest(manifest)


def tiny_setup(n=8, d=6, n_g=2, n_x=2, data_seed=1, batch=3, **overrides):
    manifest = generate_synthetic(n, d, n_g=n_g, n_x=n_x, seed=data_seed)
    config = tiny_config(manifest, **overrides)
    model = FusionClassifier(config)
    return manifest, config, model, collate(manifest.samples[:batch], config)


def add_labels(manifest, name, values):
    for sample, value in zip(manifest.samples, values):
        sample.labels[name] = value


def group_rel_err(fd, grad, floor=1e-12):
    num = np.linalg.norm(fd - grad)
    den = max(np.linalg.norm(fd), np.linalg.norm(grad), floor)
    return num / den, num


def brute_force_auc(scores, labels):
    """O(n^2) pairwise AUC with half credit for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = ties = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def confusion_macro_f1(pred, truth, k):
    """Macro-F1 by explicit confusion-matrix accumulation."""
    conf = np.zeros((k, k), dtype=np.int64)
    for p, t in zip(pred, truth):
        conf[t, p] += 1
    f1s = []
    for c in range(k):
        tp = conf[c, c]
        fp = conf[:, c].sum() - tp
        fn = conf[c, :].sum() - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(f1s))
