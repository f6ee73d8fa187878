"""Command-line interface.

Subcommands: synth, train, eval, ablate, grid, report, inspect. Global flags:
--config (key = value file), --out (output directory), --seed (overrides both
config seeds), --force (allow overwriting existing outputs). Log verbosity
comes from the MEMEFUSE_LOG env var (debug/info/warning/error).

Exit codes: 0 ok, 2 usage error, 3 invalid config, 4 missing file,
5 refused overwrite, 6 bad manifest/data, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import backend
from .config import (ModelConfig, TrainConfig, configs_from_sections,
                     format_config, published_grid, read_config_file)
from .errors import ConfigError, ManifestError, MemefuseError, OutputExistsError
from .experiments import ablate, grid_search, with_seed
from .manifest import read_manifest, write_manifest
from .model import load_checkpoint, save_checkpoint
from .synthetic import generate_synthetic
from .train import evaluate, train, write_history

log = logging.getLogger("memefuse")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_EXISTS = 5
EXIT_DATA = 6


def _setup_logging():
    level = os.environ.get("MEMEFUSE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fresh(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise OutputExistsError(f"{path} exists; pass --force to overwrite")
    return path


def _load_configs(args) -> tuple[ModelConfig, TrainConfig]:
    sections = {}
    if args.config:
        sections = read_config_file(args.config)
    return configs_from_sections(sections, seed=args.seed)


def _echo_config(out: Path, model_config, train_config, extra=None) -> None:
    (out / "config.txt").write_text(format_config(model_config, train_config, extra))


def cmd_synth(args) -> int:
    out = _out_dir(args)
    sections = read_config_file(args.config).get("data", {}) if args.config else {}
    n = args.n if args.n is not None else int(sections.get("n", 512))
    d = args.d if args.d is not None else int(sections.get("d", 16))
    n_g = args.n_g if args.n_g is not None else int(sections.get("n_g", 4))
    n_x = args.n_x if args.n_x is not None else int(sections.get("n_x", 4))
    seed = args.seed if args.seed is not None else int(sections.get("seed", 0))
    path = _fresh(out / "data.manifest", args.force)
    manifest = generate_synthetic(n=n, d=d, n_g=n_g, n_x=n_x, seed=seed)
    write_manifest(manifest, path)
    log.info("wrote %d samples to %s", len(manifest.samples), path)
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    out = _out_dir(args)
    model_config, train_config = _load_configs(args)
    manifest = read_manifest(args.manifest)
    final_path = _fresh(out / "final.ckpt", args.force)
    best_path = out / "best.ckpt"
    result = train(model_config, train_config, manifest)
    save_checkpoint(result.model, final_path)
    save_checkpoint(result.best_model(), best_path)
    write_history(result.history, out / "history.tsv")
    _echo_config(out, result.model.config, train_config)
    print(f"best {result.metric_name} {result.best_metric:.4f} at epoch "
          f"{result.best_epoch}; checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    samples = manifest.split(args.split)
    if not samples:
        raise ManifestError(f"split {args.split!r} is empty")
    path = _fresh(out / f"metrics-{args.split}.kv", args.force)
    _, report = evaluate(model, samples,
                         provenance={"split": args.split,
                                     "checkpoint": str(args.checkpoint),
                                     "backend": backend.backend_name()})
    report.write(path)
    (out / f"metrics-{args.split}.txt").write_text(report.render_table() + "\n")
    print(report.render_table())
    return EXIT_OK


def cmd_ablate(args) -> int:
    out = _out_dir(args)
    model_config, train_config = _load_configs(args)
    manifest = read_manifest(args.manifest)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [train_config.seed]
    _fresh(out / "ablation_summary.txt", args.force)
    tables = []
    for seed in seeds:
        mc, tc = with_seed(model_config, train_config, seed)
        tables.append(ablate(mc, tc, manifest, out_dir=out / f"seed-{seed}"))
    summary = _ablation_summary(tables)
    (out / "ablation_summary.txt").write_text(summary + "\n")
    _echo_config(out, model_config, train_config)
    print(summary)
    return EXIT_OK


def _ablation_summary(tables) -> str:
    labels = [row.label for row in tables[0].rows]
    width = max(len(lbl) for lbl in labels)
    header = "variant".ljust(width) + "".join(f"  seed {t.seed:>4}" for t in tables)
    lines = [header, "-" * len(header)]
    for label in labels:
        cells = "".join(f"  {t.metric_for(label):>9.4f}" for t in tables)
        lines.append(label.ljust(width) + cells)
    return "\n".join(lines)


def cmd_grid(args) -> int:
    out = _out_dir(args)
    model_config, train_config = _load_configs(args)
    points = published_grid(model_config, train_config)
    if args.limit is not None:
        points = points[:args.limit]
    results = grid_search(points, read_manifest(args.manifest), out / "grid",
                          save_checkpoints=args.save_checkpoints)
    lines = [f"{'rank':>4}  {'digest':16}  {'status':6}  {'metric':>9}  best_epoch"]
    for rank, r in enumerate(results, start=1):
        metric = f"{r.metric:.4f}" if np.isfinite(r.metric) else "-"
        lines.append(f"{rank:>4}  {r.digest:16}  {r.status:6}  {metric:>9}  {r.best_epoch}")
    table = "\n".join(lines)
    (out / "grid_ranking.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    if not out.exists():
        raise FileNotFoundError(f"output directory not found: {out}")
    chunks = []
    for kv in sorted(out.glob("metrics-*.kv")):
        chunks.append(f"== metrics: {kv.name}")
        chunks.append((out / (kv.stem + ".txt")).read_text().rstrip()
                      if (out / (kv.stem + ".txt")).exists() else kv.read_text().rstrip())
    summary = out / "ablation_summary.txt"
    if summary.exists():
        chunks.append("== ablation")
        chunks.append(summary.read_text().rstrip())
    ranking = out / "grid_ranking.txt"
    if ranking.exists():
        chunks.append("== grid ranking")
        chunks.append(ranking.read_text().rstrip())
    if not chunks:
        chunks.append(f"nothing to report in {out}")
    report = "\n".join(chunks)
    (out / "report.txt").write_text(report + "\n")
    print(report)
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = load_checkpoint(args.checkpoint)
    lines = [f"parameters: {model.count_parameters()}"]
    for name, count in sorted(model.parameter_breakdown().items()):
        lines.append(f"  {name:12} {count}")
    if args.manifest and args.ids:
        manifest = read_manifest(args.manifest)
        by_id = {s.id: s for s in manifest.samples}
        vocab = manifest.caption_vocab
        for sid in args.ids.split(","):
            if sid not in by_id:
                raise ManifestError(f"sample id {sid!r} not in manifest")
            sample = by_id[sid]
            if model.config.no_caption:
                lines.append(f"{sid}: caption decoder ablated")
                continue
            decoded = model.greedy_caption(sample)
            lines.append(f"{sid}: caption '{vocab.decode(decoded)}' "
                         f"(target '{vocab.decode(list(sample.caption_ids))}')")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memefuse",
        description="dual-stage multimodal fusion classifier for image memes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False, checkpoint=False):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")
        if manifest:
            p.add_argument("--manifest", required=True, help="manifest path")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint path")

    p = sub.add_parser("synth", help="write a planted-rule synthetic manifest")
    common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--n-g", dest="n_g", type=int, default=None)
    p.add_argument("--n-x", dest="n_x", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and write checkpoints + history")
    common(p, manifest=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p, manifest=True, checkpoint=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train full + single-removal variants")
    common(p, manifest=True)
    p.add_argument("--seeds", default=None, help="comma list, e.g. 0,1,2")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grid", help="run the 64-point tuning grid")
    common(p, manifest=True)
    p.add_argument("--limit", type=int, default=None,
                   help="train only the first N points")
    p.add_argument("--save-checkpoints", action="store_true")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="render tables from an output directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("inspect", help="parameter counts and decoded captions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--ids", default=None, help="comma list of sample ids")
    p.set_defaults(func=cmd_inspect)
    return parser


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except OutputExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXISTS
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (MemefuseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
