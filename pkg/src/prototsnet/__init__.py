"""Prototype-based interpretable classification of multivariate time series.

The model learns prototypical subsequences in a latent space built by a
masked grouped-convolution encoder, classifies by similarity to those
prototypes, and reports per-feature importance derived from the mixing-layer
weights. Training runs the staged schedule (autoencoder pretraining, warm
epochs, then cycles of joint epochs, prototype projection, and last-layer
epochs) on a small built-in reverse-mode autodiff engine.
"""

from .autodiff import Tensor, finite_diff_check
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    SyntheticSpec,
    TimeSeriesDataset,
    generate_synthetic,
    kfold_splits,
    parse_ts,
    write_ts,
    znormalize,
)
from .evaluation import (
    GridSpec,
    RankTable,
    average_ranks,
    friedman_nemenyi,
    grid_search_cv,
    read_accuracy_csv,
    run_ablation,
)
from .explain import build_prototype_cards, explain_instance, export_report
from .masks import MaskSet, apply_masks, generate_masks
from .model import Decoder, EncoderConfig, ProtoTSNet, receptive_window
from .training import (
    History,
    LossBreakdown,
    TrainConfig,
    fit,
    loss_clst,
    loss_sep,
    lr_schedule,
    project_prototypes,
    stage_loss,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "finite_diff_check",
    "MaskSet",
    "generate_masks",
    "apply_masks",
    "EncoderConfig",
    "ProtoTSNet",
    "Decoder",
    "receptive_window",
    "TimeSeriesDataset",
    "SyntheticSpec",
    "generate_synthetic",
    "parse_ts",
    "write_ts",
    "znormalize",
    "kfold_splits",
    "TrainConfig",
    "LossBreakdown",
    "History",
    "fit",
    "stage_loss",
    "loss_clst",
    "loss_sep",
    "lr_schedule",
    "project_prototypes",
    "save_checkpoint",
    "load_checkpoint",
    "build_prototype_cards",
    "explain_instance",
    "export_report",
    "GridSpec",
    "RankTable",
    "grid_search_cv",
    "run_ablation",
    "average_ranks",
    "friedman_nemenyi",
    "read_accuracy_csv",
]
