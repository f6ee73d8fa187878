"""memefuse: dual-stage multimodal fusion classifier for image memes.

Consumes precomputed per-modality embeddings (see the manifest format),
fuses them in two stages (element-wise multiplication, then a Transformer
encoder), and trains classification heads with auxiliary caption supervision.
"""

from .config import HeadSpec, ModelConfig, TrainConfig, published_grid
from .data import DatasetManifest, EmbeddedSample
from .manifest import read_manifest, write_manifest
from .metrics import MetricsReport, accuracy, macro_f1, roc_auc
from .model import (FusionClassifier, FusedSequence, ModelOutput, collate,
                    combined_loss, fuse_stage1, load_checkpoint, save_checkpoint)
from .synthetic import generate_synthetic, planted_label
from .textproc import Vocabulary, build_caption_vocab, build_vocab, normalize_text
from .train import TrainResult, evaluate, train
from .experiments import ablate, grid_search

__version__ = "0.1.0"

__all__ = [
    "HeadSpec", "ModelConfig", "TrainConfig", "published_grid",
    "DatasetManifest", "EmbeddedSample", "read_manifest", "write_manifest",
    "MetricsReport", "accuracy", "macro_f1", "roc_auc",
    "FusionClassifier", "FusedSequence", "ModelOutput", "collate",
    "combined_loss", "fuse_stage1", "load_checkpoint", "save_checkpoint",
    "generate_synthetic", "planted_label",
    "Vocabulary", "build_caption_vocab", "build_vocab", "normalize_text",
    "TrainResult", "evaluate", "train", "ablate", "grid_search",
    "__version__",
]
