"""Evaluation metrics: accuracy, ROC-AUC and macro-F1.

Definitions are the brute-force-checkable ones: AUC is the Mann-Whitney
statistic (ties get half credit) computed from average ranks, macro-F1 is the
unweighted mean of per-class F1 with absent classes contributing 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def roc_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 * P(tie), via tied ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d arrays")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: both classes must be present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0  # average 1-based rank
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_f1(pred, truth, k: int) -> float:
    """Unweighted mean of per-class F1 over classes 0..k-1."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have the same length")
    total = 0.0
    for c in range(k):
        tp = int(np.sum((pred == c) & (truth == c)))
        fp = int(np.sum((pred == c) & (truth != c)))
        fn = int(np.sum((pred != c) & (truth == c)))
        denom = 2 * tp + fp + fn
        total += (2 * tp / denom) if denom else 0.0
    return total / k


def binary_f1(pred, truth) -> float:
    """F1 of the positive class."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    denom = 2 * tp + fp + fn
    return (2 * tp / denom) if denom else 0.0


def multilabel_macro_f1(pred, truth) -> float:
    """Mean over label columns of the positive-class F1."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ValueError("pred and truth must be equal-shape 2-d arrays")
    return float(np.mean([binary_f1(pred[:, j], truth[:, j])
                          for j in range(pred.shape[1])]))


def accuracy(pred, truth) -> float:
    """Fraction of exact matches; rows must match entirely for 2-d input."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have the same shape")
    if pred.ndim == 2:
        return float(np.all(pred == truth, axis=1).mean())
    return float(np.mean(pred == truth))


@dataclass
class MetricsReport:
    """Per-task metrics plus provenance (seed, config digest, split)."""
    tasks: dict[str, dict[str, float]]
    n_samples: int
    provenance: dict[str, object] = field(default_factory=dict)

    def primary(self, task: str) -> float:
        """AUC when defined for the task, else macro-F1, else accuracy."""
        m = self.tasks[task]
        for key in ("auc", "macro_f1", "accuracy"):
            if key in m:
                return m[key]
        raise KeyError(f"no metrics recorded for task {task!r}")

    def render_table(self) -> str:
        cols = ["accuracy", "auc", "macro_f1"]
        widths = [max(len("task"), *(len(t) for t in self.tasks))]
        lines = []
        header = "task".ljust(widths[0]) + "".join(f"  {c:>9}" for c in cols)
        rule = "-" * len(header)
        lines += [header, rule]
        for task, m in self.tasks.items():
            row = task.ljust(widths[0])
            for c in cols:
                row += f"  {m[c]:>9.4f}" if c in m else f"  {'-':>9}"
            lines.append(row)
        lines.append(rule)
        lines.append(f"samples: {self.n_samples}")
        return "\n".join(lines)

    def to_kv_lines(self) -> list[str]:
        lines = [f"n_samples = {self.n_samples}"]
        for key, value in sorted(self.provenance.items()):
            lines.append(f"provenance.{key} = {value}")
        for task in self.tasks:
            for name, value in sorted(self.tasks[task].items()):
                lines.append(f"{task}.{name} = {value!r}")
        return lines

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.to_kv_lines()) + "\n")
