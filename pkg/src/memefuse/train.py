"""Training loop: Adam, seeded shuffling, the halfway lr drop, and history.

Determinism contract: everything stochastic (init, shuffling, dropout) flows
from the two config seeds, so identical configs + manifest give byte-identical
histories and checkpoints on one platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .config import ModelConfig, TrainConfig, config_digest
from .data import DatasetManifest
from .errors import DivergedError
from .metrics import MetricsReport, accuracy, macro_f1, multilabel_macro_f1, roc_auc
from .model import FusionClassifier, collate, combined_loss, head_probs


class Adam:
    """Adaptive-moment optimizer with the usual defaults; state per parameter."""

    def __init__(self, model: FusionClassifier, config: TrainConfig):
        self.params = [p for _, p in model.named_parameters()]
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.adam_eps
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        kern = backend.active().adam_update
        for p, m, v in zip(self.params, self.m, self.v):
            kern(p.data.reshape(-1), p.grad.reshape(-1), m.reshape(-1),
                 v.reshape(-1), lr, self.beta1, self.beta2, self.eps, c1, c2)


def _batches(n: int, batch_size: int, perm=None):
    order = perm if perm is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate(model: FusionClassifier, samples, batch_size: int = 64,
             provenance: dict | None = None):
    """Eval-mode pass over samples: averaged loss parts plus a MetricsReport."""
    cfg = model.config
    probs = {h.name: [] for h in cfg.heads}
    truths = {h.name: [] for h in cfg.heads}
    loss_sums = {"total": 0.0, "task": 0.0, "caption": 0.0}
    n = len(samples)
    for idx in _batches(n, batch_size):
        batch = collate([samples[i] for i in idx], cfg)
        output, _ = model.forward_batch(batch, train=False)
        total, parts = combined_loss(output["head_logits"], batch.labels,
                                     output["caption_logits"], batch.captions,
                                     cfg.alpha)
        w = batch.size
        loss_sums["total"] += total * w
        loss_sums["task"] += parts["task"] * w
        loss_sums["caption"] += parts["caption"] * w
        for spec in cfg.heads:
            probs[spec.name].append(head_probs(spec.kind, output["head_logits"][spec.name]))
            truths[spec.name].append(batch.labels[spec.name])
    loss_parts = {k: v / n for k, v in loss_sums.items()}

    tasks = {}
    for spec in cfg.heads:
        p = np.concatenate(probs[spec.name])
        t = np.concatenate(truths[spec.name])
        m: dict[str, float] = {}
        if spec.kind == "binary":
            pred = (p > 0.5).astype(np.int64)
            truth = t.astype(np.int64)
            m["accuracy"] = accuracy(pred, truth)
            m["macro_f1"] = macro_f1(pred, truth, 2)
            if len(np.unique(truth)) == 2:
                m["auc"] = roc_auc(p, truth)
        elif spec.kind == "multiclass":
            pred = p.argmax(axis=1)
            truth = t.astype(np.int64)
            m["accuracy"] = accuracy(pred, truth)
            m["macro_f1"] = macro_f1(pred, truth, spec.classes)
        else:
            pred = (p > 0.5).astype(np.int64)
            truth = t.astype(np.int64)
            m["accuracy"] = accuracy(pred, truth)
            m["macro_f1"] = multilabel_macro_f1(pred, truth)
        tasks[spec.name] = m
    report = MetricsReport(tasks=tasks, n_samples=n, provenance=provenance or {})
    return loss_parts, report


@dataclass
class TrainResult:
    model: FusionClassifier
    history: list[dict]
    best_epoch: int
    best_metric: float
    best_params: dict[str, np.ndarray]
    metric_name: str

    def best_model(self) -> FusionClassifier:
        clone = FusionClassifier(self.model.config)
        for name, p in clone.named_parameters():
            p.data = self.best_params[name].copy()
            p.grad = np.zeros_like(p.data)
        return clone


def primary_metric_name(config: ModelConfig) -> str:
    return "auc" if config.heads[0].kind == "binary" else "macro_f1"


def train(model_config: ModelConfig, train_config: TrainConfig,
          manifest: DatasetManifest) -> TrainResult:
    """Train on the manifest's train split, tracking the val split.

    The learning rate runs at lr for epochs 1..ceil(epochs/2) and at
    lr / lr_drop_factor afterwards. Shuffling is a seeded permutation per
    epoch; the last partial batch is kept.
    """
    model_config = model_config.for_manifest(manifest)
    model_config.validate()
    train_config.validate()
    train_samples = manifest.split("train")
    val_samples = manifest.split("val")
    if not train_samples:
        raise ValueError("train split is empty")
    if not val_samples:
        raise ValueError("val split is empty")

    model = FusionClassifier(model_config)
    opt = Adam(model, train_config)
    shuffle_rng = np.random.default_rng(train_config.seed)
    dropout_rng = np.random.default_rng((train_config.seed + 1) * 7919)

    metric_name = primary_metric_name(model_config)
    primary_head = model_config.heads[0].name
    digest = config_digest(model_config, train_config)
    provenance = {"seed": train_config.seed, "config": digest, "split": "val"}

    history: list[dict] = []
    best_metric = -math.inf
    best_epoch = 0
    best_params = {n: p.data.copy() for n, p in model.named_parameters()}

    n = len(train_samples)
    for epoch in range(1, train_config.epochs + 1):
        lr = train_config.lr_at(epoch)
        perm = shuffle_rng.permutation(n)
        sums = {"total": 0.0, "task": 0.0, "caption": 0.0}
        for idx in _batches(n, train_config.batch_size, perm):
            batch = collate([train_samples[i] for i in idx], model_config)
            model.zero_grad()
            _, _, parts = model.loss_and_grads(batch, train=True, rng=dropout_rng)
            for part in ("total", "task", "caption"):
                if not np.isfinite(parts[part]):
                    raise DivergedError(epoch, part)
                sums[part] += parts[part] * batch.size
            opt.step(lr)
        row = {"epoch": epoch, "lr": lr}
        for part in ("total", "task", "caption"):
            row[f"train.loss.{part}"] = sums[part] / n

        track_train = train_config.eval_train or train_config.stop_at_train_accuracy is not None
        if epoch % train_config.metrics_every == 0 or epoch == train_config.epochs:
            val_loss, val_report = evaluate(model, val_samples, provenance=provenance)
            for part, value in val_loss.items():
                row[f"val.loss.{part}"] = value
            for task, ms in val_report.tasks.items():
                for mname, value in ms.items():
                    row[f"val.{task}.{mname}"] = value
            metric = val_report.tasks[primary_head].get(
                metric_name, val_report.tasks[primary_head]["accuracy"])
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best_params = {nm: p.data.copy() for nm, p in model.named_parameters()}
            if track_train:
                _, train_report = evaluate(model, train_samples)
                for task, ms in train_report.tasks.items():
                    for mname, value in ms.items():
                        row[f"train.{task}.{mname}"] = value
        history.append(row)

        if train_config.stop_at_train_accuracy is not None:
            key = f"train.{primary_head}.accuracy"
            if key in row and row[key] >= train_config.stop_at_train_accuracy:
                break

    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       best_metric=best_metric, best_params=best_params,
                       metric_name=metric_name)


# ---------------------------------------------------------------------------
# history records: one line per epoch, tab-separated


def history_lines(history: list[dict]) -> list[str]:
    columns: list[str] = []
    for row in history:
        for key in row:
            if key not in columns:
                columns.append(key)
    lines = ["\t".join(columns)]
    for row in history:
        lines.append("\t".join(_fmt(row.get(c)) for c in columns))
    return lines


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_history(history: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(history_lines(history)) + "\n")


def read_history(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    columns = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        row = {}
        for col, cell in zip(columns, line.split("\t")):
            if cell == "":
                continue
            try:
                row[col] = int(cell)
            except ValueError:
                try:
                    row[col] = float(cell)
                except ValueError:
                    row[col] = cell
        rows.append(row)
    return rows
