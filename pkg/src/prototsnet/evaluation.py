"""Method-comparison machinery: grid-search cross-validation, the four
encoder/pretraining ablation variants, rank aggregation over accuracy tables,
and the Friedman test with Nemenyi critical differences."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sstats

from .data import TimeSeriesDataset, kfold_splits
from .model import EncoderConfig, ProtoTSNet
from .training import History, TrainConfig, fit

__all__ = [
    "GridSpec",
    "GridSearchResult",
    "RankTable",
    "FriedmanResult",
    "AblationOutcome",
    "ABLATION_VARIANTS",
    "grid_search_cv",
    "run_ablation",
    "average_ranks",
    "friedman_nemenyi",
    "read_accuracy_csv",
    "RUNS_CSV_HEADER",
]

RUNS_CSV_HEADER = ("dataset", "r", "L", "fold", "seed", "val_acc", "test_acc", "wall_s")


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grid: reception values x prototype-length fractions."""

    receptions: tuple[float, ...] = (0.25, 0.5, 0.75, 0.9)
    proto_fractions: tuple[float, ...] = (0.01, 0.1, 0.25, 0.5, 1.0)
    folds: int = 5
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not self.receptions or not self.proto_fractions or not self.seeds:
            raise ValueError("grid lists must be non-empty")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


@dataclass
class GridSearchResult:
    best_reception: float
    best_proto_fraction: float
    best_accuracy: float
    # one row per cell: (reception, proto_fraction, mean_val_acc, per-run accs)
    table: list[tuple[float, float, float, list[float]]]


def _derived_seed(base: int, *indices: int) -> int:
    ss = np.random.SeedSequence([base, *indices])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _append_runs_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    new_file = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RUNS_CSV_HEADER)
        if new_file:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _train_eval(
    train: TimeSeriesDataset,
    eval_ds: TimeSeriesDataset,
    *,
    reception: float,
    proto_fraction: float,
    protos_per_class: int,
    encoder: EncoderConfig,
    config: TrainConfig,
    grouped: bool = True,
    seed: int = 0,
) -> tuple[float, ProtoTSNet, History]:
    model = ProtoTSNet(
        train.num_features, train.num_classes, train.series_length,
        reception=reception, proto_len_fraction=proto_fraction,
        protos_per_class=protos_per_class, encoder=encoder,
        grouped=grouped, seed=seed,
    )
    history = fit(model, train.x, train.labels, replace(config, seed=seed))
    model.class_names = list(train.class_names)
    return model.accuracy(eval_ds.x, eval_ds.labels), model, history


def grid_search_cv(
    dataset: TimeSeriesDataset,
    grid: GridSpec,
    config: TrainConfig,
    *,
    encoder: Optional[EncoderConfig] = None,
    protos_per_class: int = 10,
    runs_csv=None,
) -> GridSearchResult:
    """Mean validation accuracy per (reception, length) cell over stratified
    CV folds (times seeds); best cell by accuracy, ties toward the smaller
    reception then the smaller length.

    Operates only on the dataset it is given — hold the test split back.
    Per-run RNG streams derive from (config.seed, cell, fold, seed index), so
    results do not depend on execution order.
    """
    encoder = encoder or EncoderConfig()
    splits = kfold_splits(dataset.n_series, dataset.labels, grid.folds, config.seed)
    table = []
    cells = [(r, L) for r in grid.receptions for L in grid.proto_fractions]
    for cell_idx, (reception, fraction) in enumerate(cells):
        accs: list[float] = []
        csv_rows = []
        for seed_idx, seed in enumerate(grid.seeds):
            for fold_idx, (tr_idx, val_idx) in enumerate(splits):
                run_seed = _derived_seed(config.seed, cell_idx, fold_idx, seed_idx, seed)
                started = time.perf_counter()
                acc, _, _ = _train_eval(
                    dataset.subset(tr_idx), dataset.subset(val_idx),
                    reception=reception, proto_fraction=fraction,
                    protos_per_class=protos_per_class, encoder=encoder,
                    config=config, seed=run_seed,
                )
                accs.append(acc)
                csv_rows.append({
                    "dataset": dataset.name, "r": reception, "L": fraction,
                    "fold": fold_idx, "seed": run_seed, "val_acc": f"{acc:.6f}",
                    "test_acc": "", "wall_s": f"{time.perf_counter() - started:.3f}",
                })
        if runs_csv is not None:
            _append_runs_csv(runs_csv, csv_rows)
        table.append((reception, fraction, float(np.mean(accs)), accs))

    best = max(table, key=lambda row: (row[2], -row[0], -row[1]))
    return GridSearchResult(
        best_reception=best[0], best_proto_fraction=best[1],
        best_accuracy=best[2], table=table,
    )


# ---------------------------------------------------------------------------
# ablation variants
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = ("GE/P", "GE/NP", "RE/P", "RE/NP")


@dataclass
class AblationOutcome:
    variant: str
    accuracy: float
    model: ProtoTSNet
    history: History


def run_ablation(
    train: TimeSeriesDataset,
    test: TimeSeriesDataset,
    variant: str,
    config: TrainConfig,
    *,
    reception: float = 0.5,
    proto_fraction: float = 0.2,
    protos_per_class: int = 10,
    encoder: Optional[EncoderConfig] = None,
    seed: int = 0,
) -> AblationOutcome:
    """Train one variant and report its test accuracy.

    GE keeps the grouped encoder with random masks at the given reception;
    RE is the regular encoder (one convolution group, all-ones masks). P
    pretrains the encoder; NP skips pretraining entirely.
    """
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"variant must be one of {ABLATION_VARIANTS}, got {variant!r}")
    grouped = variant.startswith("GE")
    pretrain = variant.endswith("/P")
    cfg = config if pretrain else replace(config, pretrain_epochs=0)
    acc, model, history = _train_eval(
        train, test,
        reception=reception if grouped else 1.0,
        proto_fraction=proto_fraction, protos_per_class=protos_per_class,
        encoder=encoder or EncoderConfig(), config=cfg, grouped=grouped, seed=seed,
    )
    return AblationOutcome(variant=variant, accuracy=acc, model=model, history=history)


# ---------------------------------------------------------------------------
# rank aggregation
# ---------------------------------------------------------------------------

@dataclass
class RankTable:
    """Accuracy matrix [datasets x methods] with NaN marking missing entries."""

    methods: list[str]
    datasets: list[str]
    accuracy: np.ndarray
    ranks: Optional[np.ndarray] = None       # per-dataset ranks, same shape
    avg_rank: Optional[np.ndarray] = None    # per method
    wins_ties: Optional[np.ndarray] = None   # per method

    def __post_init__(self):
        self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
        if self.accuracy.shape != (len(self.datasets), len(self.methods)):
            raise ValueError(
                f"accuracy shape {self.accuracy.shape} != ({len(self.datasets)}, {len(self.methods)})"
            )


def average_ranks(table: RankTable) -> RankTable:
    """Rank methods per dataset (1 = best accuracy) and average.

    Ties share the mean of the positions they occupy; all missing entries on
    a dataset share the mean of the lowest positions (two N/A among 8 methods
    both get 7.5). wins_ties counts datasets where the method attains the
    possibly-shared best accuracy.
    """
    n_ds, k = table.accuracy.shape
    if k < 2 or n_ds < 1:
        raise ValueError("need at least 2 methods and 1 dataset")
    ranks = np.zeros_like(table.accuracy)
    wins = np.zeros(k, dtype=np.int64)
    for i in range(n_ds):
        row = table.accuracy[i]
        present = ~np.isnan(row)
        n_present = int(present.sum())
        if n_present == 0:
            raise ValueError(f"dataset {table.datasets[i]!r} has no entries")
        ranks[i, present] = sstats.rankdata(-row[present], method="average")
        if n_present < k:
            ranks[i, ~present] = (n_present + 1 + k) / 2.0
        best = np.nanmax(row)
        wins[present & (row == best)] += 1
    return RankTable(
        methods=list(table.methods), datasets=list(table.datasets),
        accuracy=table.accuracy.copy(), ranks=ranks,
        avg_rank=ranks.mean(axis=0), wins_ties=wins,
    )


def read_accuracy_csv(path) -> RankTable:
    """Load a comparison table: first column dataset, one column per method,
    empty cell = missing."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 3:
            raise ValueError("accuracy CSV needs a dataset column and >= 2 methods")
        methods = [h.strip() for h in header[1:]]
        datasets, rows = [], []
        for line in reader:
            if not line or not any(cell.strip() for cell in line):
                continue
            datasets.append(line[0].strip())
            rows.append([float(c) if c.strip() else np.nan for c in line[1:]])
    return RankTable(methods=methods, datasets=datasets, accuracy=np.asarray(rows))


# ---------------------------------------------------------------------------
# Friedman / Nemenyi
# ---------------------------------------------------------------------------

# Critical values of the studentized range statistic divided by sqrt(2),
# two-tailed Nemenyi test, k = 2..10 methods.
_Q_ALPHA = {
    0.05: (1.959964, 2.343701, 2.569032, 2.727774, 2.849705,
           2.948319, 3.030879, 3.101730, 3.163684),
    0.10: (1.644854, 2.052293, 2.291341, 2.459516, 2.588521,
           2.692732, 2.779884, 2.855362, 2.921373),
}


@dataclass
class FriedmanResult:
    chi2: float
    f_stat: float
    p_value: float
    critical_difference: float
    avg_rank: np.ndarray
    methods: list[str]
    significant: list[tuple[str, str]]  # avg-rank gap exceeds the CD


def friedman_nemenyi(table: RankTable, alpha: float = 0.05) -> FriedmanResult:
    """Friedman chi-square with the Iman-Davenport F correction, plus Nemenyi
    critical-difference flagging of method pairs.

    chi2 = 12N/(k(k+1)) * (sum_j R_j^2 - k(k+1)^2/4);
    F = (N-1) chi2 / (N(k-1) - chi2); CD = q_alpha sqrt(k(k+1)/(6N)).
    """
    if alpha not in _Q_ALPHA:
        raise ValueError(f"alpha must be one of {sorted(_Q_ALPHA)}, got {alpha}")
    k = len(table.methods)
    n = len(table.datasets)
    if k < 3:
        raise ValueError("Friedman test needs at least 3 methods")
    if k > len(_Q_ALPHA[alpha]) + 1:
        raise ValueError(f"critical values embedded only for k <= {len(_Q_ALPHA[alpha]) + 1}")
    if n < 2:
        raise ValueError("need at least 2 datasets")

    ranked = table if table.avg_rank is not None else average_ranks(table)
    r = ranked.avg_rank
    chi2 = 12.0 * n / (k * (k + 1)) * (float((r ** 2).sum()) - k * (k + 1) ** 2 / 4.0)
    denom = n * (k - 1) - chi2
    f_stat = float("inf") if denom <= 0 else (n - 1) * chi2 / denom
    p_value = float(sstats.f.sf(f_stat, k - 1, (k - 1) * (n - 1))) if np.isfinite(f_stat) else 0.0

    q = _Q_ALPHA[alpha][k - 2]
    cd = q * np.sqrt(k * (k + 1) / (6.0 * n))
    significant = [
        (table.methods[i], table.methods[j])
        for i in range(k) for j in range(i + 1, k)
        if abs(r[i] - r[j]) > cd
    ]
    return FriedmanResult(
        chi2=chi2, f_stat=f_stat, p_value=p_value, critical_difference=float(cd),
        avg_rank=r.copy(), methods=list(table.methods), significant=significant,
    )
