"""Grid search and the component-removal ablation harness.

Grid points are cached by config digest so an interrupted sweep resumes where
it stopped; a failed point is recorded as failed rather than aborting the
sweep. The ablation trains the full model plus the four single-removal
variants under identical seeds and data and reports one row each.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .config import ModelConfig, TrainConfig, config_digest
from .data import DatasetManifest
from .model import save_checkpoint
from .train import train, write_history

ABLATION_ROWS = (
    ("full model", None),
    ("- external knowledge", "no_external"),
    ("- caption supervision", "no_caption"),
    ("- fusion stage 1", "no_stage1"),
    ("- fusion stage 2", "no_stage2"),
)


@dataclass
class GridResult:
    index: int
    digest: str
    status: str                  # ok | failed
    metric_name: str = ""
    metric: float = float("nan")
    best_epoch: int = 0
    error: str = ""

    def to_json(self) -> dict:
        return {"index": self.index, "digest": self.digest, "status": self.status,
                "metric_name": self.metric_name, "metric": self.metric,
                "best_epoch": self.best_epoch, "error": self.error}

    @classmethod
    def from_json(cls, d: dict) -> "GridResult":
        return cls(**d)


def _atomic_write_json(path, payload) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    os.replace(tmp, path)


def grid_search(points, manifest: DatasetManifest, out_dir,
                save_checkpoints: bool = False) -> list[GridResult]:
    """Train every (ModelConfig, TrainConfig) point and rank by the primary
    validation metric (AUC for a binary first head, macro-F1 otherwise)."""
    if not points:
        raise ValueError("grid is empty")
    os.makedirs(out_dir, exist_ok=True)
    results = []
    for index, (mc, tc) in enumerate(points):
        digest = config_digest(mc.for_manifest(manifest), tc)
        cache_path = os.path.join(out_dir, f"point-{digest}.json")
        if os.path.exists(cache_path):
            with open(cache_path) as fh:
                results.append(GridResult.from_json(json.load(fh)))
            continue
        try:
            mc.validate()
            tc.validate()
            result = train(mc, tc, manifest)
        except Exception as exc:
            gr = GridResult(index=index, digest=digest, status="failed", error=str(exc))
        else:
            gr = GridResult(index=index, digest=digest, status="ok",
                            metric_name=result.metric_name,
                            metric=result.best_metric,
                            best_epoch=result.best_epoch)
            write_history(result.history, os.path.join(out_dir, f"history-{digest}.tsv"))
            if save_checkpoints:
                save_checkpoint(result.best_model(),
                                os.path.join(out_dir, f"best-{digest}.ckpt"))
        _atomic_write_json(cache_path, gr.to_json())
        results.append(gr)
    return sorted(results, key=lambda r: (r.status != "ok", -_safe(r.metric)))


def _safe(x: float) -> float:
    return x if np.isfinite(x) else -np.inf


@dataclass
class AblationRow:
    label: str
    flag: str | None
    metric: float
    metric_name: str
    best_epoch: int
    n_parameters: int


@dataclass
class AblationTable:
    rows: list[AblationRow]
    seed: int

    def metric_for(self, label: str) -> float:
        for row in self.rows:
            if row.label == label:
                return row.metric
        raise KeyError(label)

    def render(self) -> str:
        name = self.rows[0].metric_name
        width = max(len(r.label) for r in self.rows)
        lines = [f"{'variant'.ljust(width)}  {name:>9}", "-" * (width + 12)]
        for row in self.rows:
            lines.append(f"{row.label.ljust(width)}  {row.metric:>9.4f}")
        return "\n".join(lines)

    def to_kv_lines(self) -> list[str]:
        lines = [f"seed = {self.seed}"]
        for row in self.rows:
            key = row.label.replace(" ", "_")
            lines.append(f"{key}.{row.metric_name} = {row.metric!r}")
            lines.append(f"{key}.n_parameters = {row.n_parameters}")
        return lines


def ablate(model_config: ModelConfig, train_config: TrainConfig,
           manifest: DatasetManifest, out_dir=None) -> AblationTable:
    """Train the full model and the four single-removal variants under the
    same seeds and data; rows come out in the fixed removal order."""
    for flag in ("no_external", "no_caption", "no_stage1", "no_stage2"):
        if flag in model_config.ablations:
            raise ValueError("ablate() needs a fully enabled base config")
    rows = []
    for label, flag in ABLATION_ROWS:
        mc = model_config if flag is None else model_config.with_ablation(flag)
        result = train(mc, train_config, manifest)
        rows.append(AblationRow(
            label=label, flag=flag, metric=result.best_metric,
            metric_name=result.metric_name, best_epoch=result.best_epoch,
            n_parameters=result.model.count_parameters(),
        ))
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            tag = flag or "full"
            write_history(result.history, os.path.join(out_dir, f"history-{tag}.tsv"))
    table = AblationTable(rows=rows, seed=train_config.seed)
    if out_dir is not None:
        with open(os.path.join(out_dir, "ablation.kv"), "w") as fh:
            fh.write("\n".join(table.to_kv_lines()) + "\n")
        with open(os.path.join(out_dir, "ablation.txt"), "w") as fh:
            fh.write(table.render() + "\n")
    return table


def with_seed(model_config: ModelConfig, train_config: TrainConfig,
              seed: int) -> tuple[ModelConfig, TrainConfig]:
    return replace(model_config, seed=seed), replace(train_config, seed=seed)
