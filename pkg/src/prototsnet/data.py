"""Dataset tooling: the sktime-style ``.ts`` text format (read/write), the
synthetic benchmark generator, z-normalization, and stratified k-fold splits.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "TimeSeriesDataset",
    "SyntheticSpec",
    "parse_ts",
    "write_ts",
    "generate_synthetic",
    "znormalize",
    "kfold_splits",
    "export_csv",
    "uea_layout_hint",
]


@dataclass
class TimeSeriesDataset:
    """n labeled multivariate series of common shape [d, T]."""

    x: np.ndarray                  # [n, d, T] float64
    labels: np.ndarray             # [n] int, in [0, num_classes)
    class_names: list[str]
    name: str = ""
    source_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.x.ndim != 3:
            raise ValueError(f"x must be [n, d, T], got shape {self.x.shape}")
        if self.labels.shape != (self.x.shape[0],):
            raise ValueError("labels length must match number of series")
        if len(self.class_names) == 0:
            raise ValueError("class_names must be non-empty")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("labels out of range for class_names")

    @property
    def n_series(self) -> int:
        return self.x.shape[0]

    @property
    def num_features(self) -> int:
        return self.x.shape[1]

    @property
    def series_length(self) -> int:
        return self.x.shape[2]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices) -> "TimeSeriesDataset":
        idx = np.asarray(indices)
        return TimeSeriesDataset(
            x=self.x[idx], labels=self.labels[idx],
            class_names=list(self.class_names), name=self.name,
            source_meta=dict(self.source_meta),
        )


# ---------------------------------------------------------------------------
# .ts format
# ---------------------------------------------------------------------------

_BOOL_KEYS = {"timestamps", "missing", "univariate", "equallength"}
_INT_KEYS = {"serieslength", "dimension", "dimensions"}


def _parse_bool(token: str, key: str) -> bool:
    token = token.lower()
    if token not in ("true", "false"):
        raise ValueError(f"@{key} expects true/false, got {token!r}")
    return token == "true"


def parse_ts(path) -> TimeSeriesDataset:
    """Load a ``.ts`` classification file.

    Grammar: ``#`` comment lines; ``@``-prefixed header directives
    (case-insensitive keys) ending with ``@data``; then one record per line,
    dimensions separated by ``:``, values comma-separated, class label last.
    Missing values (``?``) become 0.0 and unequal lengths are right-padded
    with 0.0; both are flagged in ``source_meta``.
    """
    path = Path(path)
    header: dict = {}
    class_list: list[str] | None = None
    records: list[list[list[float]]] = []
    record_labels: list[str] = []
    in_data = False
    saw_missing = False

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not in_data and line.startswith("@"):
                parts = line[1:].split()
                key = parts[0].lower()
                args = parts[1:]
                if key == "data":
                    if class_list is None:
                        raise ValueError(f"{path}:{lineno}: @classLabel with a label list is required")
                    in_data = True
                    continue
                if key == "classlabel":
                    if not args:
                        raise ValueError(f"{path}:{lineno}: @classLabel needs arguments")
                    if not _parse_bool(args[0], key):
                        raise ValueError(f"{path}:{lineno}: @classLabel false: no labels to classify")
                    if len(args) < 2:
                        raise ValueError(f"{path}:{lineno}: @classLabel true needs the label list")
                    class_list = args[1:]
                elif key == "problemname":
                    header["problemname"] = args[0] if args else ""
                elif key in _BOOL_KEYS:
                    header[key] = _parse_bool(args[0], key) if args else None
                    if key == "timestamps" and header[key]:
                        raise ValueError(f"{path}:{lineno}: timestamped records are not supported")
                elif key in _INT_KEYS:
                    header["dimension" if key == "dimensions" else key] = int(args[0])
                else:
                    header[key] = " ".join(args)
                continue
            if not in_data:
                raise ValueError(f"{path}:{lineno}: data before @data directive")

            chunks = line.split(":")
            if len(chunks) < 2:
                raise ValueError(f"{path}:{lineno}: record needs at least one dimension and a label")
            label = chunks[-1].strip()
            dims = []
            for chunk in chunks[:-1]:
                vals = []
                for tok in chunk.split(","):
                    tok = tok.strip()
                    if tok == "?":
                        saw_missing = True
                        vals.append(0.0)
                    else:
                        try:
                            vals.append(float(tok))
                        except ValueError:
                            raise ValueError(f"{path}:{lineno}: bad value {tok!r}") from None
                dims.append(vals)
            records.append(dims)
            record_labels.append(label)

    if not in_data:
        raise ValueError(f"{path}: missing @data directive")
    if not records:
        raise ValueError(f"{path}: empty data section")

    d = len(records[0])
    declared_d = header.get("dimension")
    if header.get("univariate") is True:
        declared_d = 1
    if declared_d is not None and declared_d != d:
        raise ValueError(f"{path}: header declares {declared_d} dimensions, records have {d}")
    for i, rec in enumerate(records):
        if len(rec) != d:
            raise ValueError(f"{path}: record {i} has {len(rec)} dimensions, expected {d}")

    lengths = {len(v) for rec in records for v in rec}
    t_len = max(lengths)
    padded = len(lengths) > 1
    declared_t = header.get("serieslength")
    if declared_t is not None and declared_t != t_len:
        logger.info("%s: declared seriesLength %d, observed %d", path, declared_t, t_len)

    label_to_idx = {name: i for i, name in enumerate(class_list)}
    if len(label_to_idx) != len(class_list):
        raise ValueError(f"{path}: duplicate class labels in @classLabel")
    labels = np.empty(len(records), dtype=np.int64)
    for i, lab in enumerate(record_labels):
        if lab not in label_to_idx:
            raise ValueError(f"{path}: unknown class label {lab!r}")
        labels[i] = label_to_idx[lab]

    x = np.zeros((len(records), d, t_len))
    for i, rec in enumerate(records):
        for j, vals in enumerate(rec):
            x[i, j, :len(vals)] = vals

    meta = dict(header)
    meta["padded"] = padded
    meta["missing_replaced"] = saw_missing
    return TimeSeriesDataset(
        x=x, labels=labels, class_names=list(class_list),
        name=header.get("problemname", path.stem), source_meta=meta,
    )


def write_ts(dataset: TimeSeriesDataset, path) -> None:
    """Emit a ``.ts`` file that parse_ts accepts; floats use 9 significant digits."""
    for name in dataset.class_names:
        if not isinstance(name, str) or not name or any(c.isspace() for c in name):
            raise ValueError(f"class name {name!r} must be a non-empty token")
    name = dataset.name or "dataset"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"@problemName {name}\n")
        fh.write("@timeStamps false\n")
        fh.write("@missing false\n")
        fh.write(f"@univariate {'true' if dataset.num_features == 1 else 'false'}\n")
        fh.write(f"@dimension {dataset.num_features}\n")
        fh.write("@equalLength true\n")
        fh.write(f"@seriesLength {dataset.series_length}\n")
        fh.write(f"@classLabel true {' '.join(dataset.class_names)}\n")
        fh.write("@data\n")
        for i in range(dataset.n_series):
            dims = [",".join(f"{v:.9g}" for v in dataset.x[i, j]) for j in range(dataset.num_features)]
            fh.write(":".join(dims) + ":" + dataset.class_names[dataset.labels[i]] + "\n")


def export_csv(dataset: TimeSeriesDataset, path) -> None:
    """Long-form CSV dump with header series,feature,t,value,label."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("series,feature,t,value,label\n")
        for i in range(dataset.n_series):
            lab = dataset.labels[i]
            for j in range(dataset.num_features):
                for t, v in enumerate(dataset.x[i, j]):
                    fh.write(f"{i},{j},{t},{v:.9g},{lab}\n")


def uea_layout_hint() -> str:
    """Expected on-disk layout for user-supplied archive datasets."""
    return (
        "Expected dataset layout (files are user-supplied, never downloaded):\n"
        "  <root>/<Name>/<Name>_TRAIN.ts\n"
        "  <root>/<Name>/<Name>_TEST.ts\n"
        "Point --dataset at the individual .ts file you want to load."
    )


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Four-class, three-feature benchmark; only features 0 and 1 carry class
    information, and only inside the first 40 time steps."""

    n_per_class: int = 10
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


SYNTHETIC_LENGTH = 100
SYNTHETIC_FEATURES = 3
SYNTHETIC_PATTERN_END = 40  # class-defining patterns occupy steps [0, 39]
_CLASS_NAMES = ("saw_rect", "rect_saw", "saw_saw", "rect_rect")


def _saw(t: np.ndarray) -> np.ndarray:
    return (t % 10) / 9.0


def _rect(t: np.ndarray) -> np.ndarray:
    return ((t % 10) < 5).astype(np.float64)


def generate_synthetic(spec: SyntheticSpec) -> TimeSeriesDataset:
    """Deterministic synthetic dataset: per class, saw/rect patterns on
    features 0 and 1 over the first 40 steps; everything else is uniform
    noise; white noise of ``noise_std`` is added on top of it all."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 0x5F17])))
    t_pat = np.arange(SYNTHETIC_PATTERN_END)
    patterns = {
        0: (_saw(t_pat), _rect(t_pat)),
        1: (_rect(t_pat), _saw(t_pat)),
        2: (_saw(t_pat), _saw(t_pat)),
        3: (_rect(t_pat), _rect(t_pat)),
    }
    n = 4 * spec.n_per_class
    x = rng.uniform(0.0, 1.0, size=(n, SYNTHETIC_FEATURES, SYNTHETIC_LENGTH))
    labels = np.arange(4).repeat(spec.n_per_class)
    for i, lab in enumerate(labels):
        f0, f1 = patterns[int(lab)]
        x[i, 0, :SYNTHETIC_PATTERN_END] = f0
        x[i, 1, :SYNTHETIC_PATTERN_END] = f1
    x += rng.normal(0.0, spec.noise_std, size=x.shape)
    return TimeSeriesDataset(
        x=x, labels=labels, class_names=list(_CLASS_NAMES), name="synthetic",
        source_meta={"generator": {"n_per_class": spec.n_per_class,
                                   "noise_std": spec.noise_std, "seed": spec.seed}},
    )


# ---------------------------------------------------------------------------
# preprocessing and splits
# ---------------------------------------------------------------------------

def znormalize(
    dataset: TimeSeriesDataset, stats: tuple[np.ndarray, np.ndarray] | None = None
) -> tuple[TimeSeriesDataset, tuple[np.ndarray, np.ndarray]]:
    """Per-feature z-normalization; pass training stats to transform test data.

    Zero-std (constant) features get mean 0 / std 1, i.e. they pass through
    unchanged.
    """
    if stats is None:
        mean = dataset.x.mean(axis=(0, 2))
        std = dataset.x.std(axis=(0, 2))
        degenerate = std == 0
        std = np.where(degenerate, 1.0, std)
        mean = np.where(degenerate, 0.0, mean)
    else:
        mean, std = np.asarray(stats[0], dtype=np.float64), np.asarray(stats[1], dtype=np.float64)
    x = (dataset.x - mean[None, :, None]) / std[None, :, None]
    out = TimeSeriesDataset(
        x=x, labels=dataset.labels.copy(), class_names=list(dataset.class_names),
        name=dataset.name, source_meta={**dataset.source_meta, "znormalized": True},
    )
    return out, (mean, std)


def kfold_splits(
    n: int, labels: np.ndarray, k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold partition of range(n); deterministic under seed.

    Falls back to a plain (non-stratified) partition with a warning when some
    class has fewer than k members. Validation folds are disjoint and cover
    all indices exactly once.
    """
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError("labels must have length n")
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xF01D])))
    folds: list[list[int]] = [[] for _ in range(k)]
    counts = np.bincount(labels) if labels.size else np.array([])
    if (counts[counts > 0] < k).any():
        warnings.warn(f"some class has fewer than {k} members; using non-stratified folds")
        order = rng.permutation(n)
        for pos, idx in enumerate(order):
            folds[pos % k].append(int(idx))
    else:
        for cls in np.unique(labels):
            members = rng.permutation(np.flatnonzero(labels == cls))
            for pos, idx in enumerate(members):
                folds[pos % k].append(int(idx))

    splits = []
    everything = np.arange(n)
    for i in range(k):
        val = np.sort(np.asarray(folds[i], dtype=np.int64))
        train = np.setdiff1d(everything, val)
        splits.append((train, val))
    return splits
