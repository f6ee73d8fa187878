"""Model and training configuration.

Configs are plain dataclasses that can be round-tripped through the
``key = value`` config file format (see docs/config_schema.md). Defaults are
desk scale so the synthetic experiments run in seconds on one CPU core;
``published_grid()`` enumerates the full 64-point hyperparameter grid the
architecture was tuned on (lr x epochs x alpha x model dim x encoder shape x
decoder shape, two choices each).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from .data import DEFAULT_ATTRIBUTE_SIZES
from .errors import ConfigError

HEAD_KINDS = ("binary", "multiclass", "multilabel")
ABLATION_FLAGS = ("no_external", "no_caption", "no_stage1", "no_stage2")
SEGMENTS = ("cls", "img", "txt", "ext")


@dataclass(frozen=True)
class HeadSpec:
    name: str
    kind: str         # binary | multiclass | multilabel
    classes: int = 1  # output units; 1 for binary

    def validate(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigError(f"head {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "binary" and self.classes != 1:
            raise ConfigError(f"head {self.name!r}: binary heads have 1 unit")
        if self.kind != "binary" and self.classes < 2:
            raise ConfigError(f"head {self.name!r}: {self.kind} needs >= 2 classes")

    def spec_str(self) -> str:
        return self.name + ":" + self.kind + ("" if self.kind == "binary" else f":{self.classes}")

    @classmethod
    def parse(cls, text: str) -> "HeadSpec":
        parts = text.strip().split(":")
        if len(parts) == 2:
            return cls(parts[0], parts[1])
        if len(parts) == 3:
            return cls(parts[0], parts[1], int(parts[2]))
        raise ConfigError(f"cannot parse head spec {text!r} (want name:kind[:classes])")


def parse_heads(text: str) -> tuple[HeadSpec, ...]:
    return tuple(HeadSpec.parse(part) for part in text.split(",") if part.strip())


@dataclass
class ModelConfig:
    d_model: int = 64
    d_img: int = 16
    d_txt: int = 16
    n_heads: int = 4
    ff_dim: int = 128
    n_layers: int = 1
    decoder_dim: int = 32
    decoder_heads: int = 4
    decoder_ff: int = 32
    decoder_layers: int = 1
    alpha: float = 0.2
    heads: tuple[HeadSpec, ...] = (HeadSpec("hate", "binary"),)
    ablations: tuple[str, ...] = ()
    dropout: float = 0.1
    max_positions: int = 128
    seed: int = 0
    dtype: str = "float32"
    # data-dependent sizes, normally filled in from a manifest header
    attribute_vocab_sizes: tuple[int, int, int] = DEFAULT_ATTRIBUTE_SIZES
    caption_vocab_size: int = 12
    caption_max_len: int = 5

    def __post_init__(self):
        self.heads = tuple(HeadSpec(**h) if isinstance(h, dict) else h for h in self.heads)
        self.ablations = tuple(self.ablations)
        self.attribute_vocab_sizes = tuple(self.attribute_vocab_sizes)
        if self.no_caption:
            self.alpha = 0.0

    @property
    def no_external(self) -> bool:
        return "no_external" in self.ablations

    @property
    def no_caption(self) -> bool:
        return "no_caption" in self.ablations

    @property
    def no_stage1(self) -> bool:
        return "no_stage1" in self.ablations

    @property
    def no_stage2(self) -> bool:
        return "no_stage2" in self.ablations

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def validate(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.decoder_dim % self.decoder_heads != 0:
            raise ConfigError(f"decoder_dim {self.decoder_dim} not divisible by "
                              f"decoder_heads {self.decoder_heads}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.no_caption and self.alpha != 0:
            raise ConfigError("alpha must be 0 when no_caption is set")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not self.heads:
            raise ConfigError("at least one classification head is required")
        for flag in self.ablations:
            if flag not in ABLATION_FLAGS:
                raise ConfigError(f"unknown ablation flag {flag!r}")
        for head in self.heads:
            head.validate()

    def for_manifest(self, manifest) -> "ModelConfig":
        """Copy with the data-dependent sizes taken from a manifest."""
        return replace(
            self,
            d_img=manifest.d_img,
            d_txt=manifest.d_txt,
            attribute_vocab_sizes=tuple(manifest.attribute_vocab_sizes),
            caption_vocab_size=len(manifest.caption_vocab),
            caption_max_len=manifest.caption_vocab.max_len,
        )

    def with_ablation(self, flag: str) -> "ModelConfig":
        if flag not in ABLATION_FLAGS:
            raise ConfigError(f"unknown ablation flag {flag!r}")
        return replace(self, ablations=tuple(sorted(set(self.ablations) | {flag})))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 16
    batch_size: int = 32
    lr_drop_factor: float = 10.0
    lr_drop_at: int | None = None   # default: ceil(epochs / 2)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    metrics_every: int = 1          # evaluate val metrics every k epochs
    eval_train: bool = False        # also track train-split metrics
    stop_at_train_accuracy: float | None = None

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_drop_factor <= 0:
            raise ConfigError("lr_drop_factor must be > 0")
        if self.metrics_every < 1:
            raise ConfigError("metrics_every must be >= 1")

    def drop_epoch(self) -> int:
        """Last epoch (1-indexed) that still runs at the initial lr."""
        return self.lr_drop_at if self.lr_drop_at is not None else math.ceil(self.epochs / 2)

    def lr_at(self, epoch: int) -> float:
        return self.lr if epoch <= self.drop_epoch() else self.lr / self.lr_drop_factor


def config_digest(model_config: ModelConfig, train_config: TrainConfig) -> str:
    blob = json.dumps({"model": asdict(model_config), "train": asdict(train_config)},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def published_grid(base_model: ModelConfig | None = None,
                   base_train: TrainConfig | None = None) -> list[tuple[ModelConfig, TrainConfig]]:
    """The 64-point tuning grid: two choices each for lr, epochs, alpha,
    model dimension, encoder shape and decoder shape."""
    base_model = base_model or ModelConfig()
    base_train = base_train or TrainConfig()
    points = []
    for lr in (1e-4, 1e-5):
        for epochs in (16, 32):
            for alpha in (0.2, 0.8):
                for d_model in (512, 1024):
                    for n_heads, ff_dim, n_layers in ((4, 512, 1), (16, 2048, 3)):
                        for dec in ((64, 4, 64, 1), (256, 16, 256, 3)):
                            mc = replace(
                                base_model, d_model=d_model, n_heads=n_heads,
                                ff_dim=ff_dim, n_layers=n_layers, alpha=alpha,
                                decoder_dim=dec[0], decoder_heads=dec[1],
                                decoder_ff=dec[2], decoder_layers=dec[3],
                            )
                            tc = replace(base_train, lr=lr, epochs=epochs)
                            points.append((mc, tc))
    return points


# ---------------------------------------------------------------------------
# key = value config files


def _parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def read_config_file(path) -> dict[str, dict[str, object]]:
    """Parse `section.key = value` lines into nested dicts."""
    sections: dict[str, dict[str, object]] = {}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'section.key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"{path}:{lineno}: key {key!r} must be section.key")
        section, _, name = key.partition(".")
        sections.setdefault(section, {})[name] = _parse_scalar(value)
    return sections


_MODEL_TUPLE_KEYS = {"ablations", "attribute_vocab_sizes"}


def _coerce_model_kwargs(raw: dict[str, object]) -> dict[str, object]:
    known = set(ModelConfig.__dataclass_fields__)
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown model config key {key!r}")
        if key == "heads":
            value = parse_heads(str(value))
        elif key in _MODEL_TUPLE_KEYS:
            if value is None:
                value = ()
            else:
                parts = [p.strip() for p in str(value).split(",") if p.strip()]
                value = tuple(int(p) if p.lstrip("-").isdigit() else p for p in parts)
        kwargs[key] = value
    return kwargs


def configs_from_sections(sections: dict[str, dict[str, object]],
                          seed: int | None = None) -> tuple[ModelConfig, TrainConfig]:
    model_raw = dict(sections.get("model", {}))
    train_raw = dict(sections.get("train", {}))
    unknown_train = set(train_raw) - set(TrainConfig.__dataclass_fields__)
    if unknown_train:
        raise ConfigError(f"unknown train config keys {sorted(unknown_train)}")
    try:
        model = ModelConfig(**_coerce_model_kwargs(model_raw))
        train = TrainConfig(**train_raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if seed is not None:
        model = replace(model, seed=seed)
        train = replace(train, seed=seed)
    model.validate()
    train.validate()
    return model, train


def format_config(model: ModelConfig, train: TrainConfig,
                  extra: dict[str, dict[str, object]] | None = None) -> str:
    """Render configs back into the config file syntax."""
    lines = []
    def emit(section, mapping):
        for key, value in mapping.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{key} = {value}")
    model_map = asdict(model)
    model_map["heads"] = ",".join(h.spec_str() for h in model.heads)
    emit("model", model_map)
    emit("train", asdict(train))
    for section, mapping in (extra or {}).items():
        emit(section, mapping)
    return "\n".join(lines) + "\n"
