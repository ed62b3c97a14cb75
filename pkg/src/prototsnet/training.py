"""Training: stage losses, the cyclic warm/joint/push/last schedule, prototype
projection, and the cyclic learning-rate scheduler."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Tensor
from .model import Decoder, ForwardPass, ProtoTSNet

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "LossBreakdown",
    "HistoryRow",
    "History",
    "SGD",
    "loss_clst",
    "loss_sep",
    "loss_l1_conv",
    "loss_l1_last",
    "stage_loss",
    "project_prototypes",
    "lr_schedule",
    "fit",
]

STAGES = ("warm", "joint", "last")


@dataclass(frozen=True)
class TrainConfig:
    """Schedule and optimizer settings for the staged training run."""

    pretrain_epochs: int = 50
    warm_epochs: int = 10
    joint_epochs: int = 80      # per cycle, between prototype pushes
    last_epochs: int = 7        # per cycle
    cycles: int = 4
    lambda_clst: float = 0.8
    lambda_sep: float = 0.08
    lambda_conv: float = 1e-3
    lambda_last: float = 1e-4
    base_lr: float = 0.02
    lr_cycle_len: int = 80
    lr_decay: float = 0.85
    lr_floor: float = 0.1
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("pretrain_epochs", "warm_epochs", "joint_epochs", "last_epochs", "cycles"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("lambda_clst", "lambda_sep", "lambda_conv", "lambda_last"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.base_lr <= 0 or self.lr_floor <= 0 or self.lr_decay <= 0:
            raise ValueError("learning-rate settings must be positive")
        if self.lr_cycle_len < 1:
            raise ValueError("lr_cycle_len must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def main_epochs(self) -> int:
        return self.warm_epochs + self.cycles * (self.joint_epochs + self.last_epochs)


@dataclass
class LossBreakdown:
    """Component values of one loss evaluation; total is the stage-weighted sum."""

    total: float
    ce: float
    clst: float
    sep: float
    l1_conv: float
    l1_last: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())


@dataclass
class HistoryRow:
    phase: str
    stage: str
    epoch: int
    total: float
    ce: float
    clst: float
    sep: float
    l1_conv: float
    l1_last: float
    train_acc: float
    lr: float


class History(list):
    """Per-epoch records with CSV export matching the documented schema."""

    COLUMNS = ("phase", "stage", "epoch", "total", "ce", "clst", "sep",
               "l1_conv", "l1_last", "train_acc", "lr")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self:
                d = asdict(row)
                writer.writerow([repr(d[c]) if isinstance(d[c], float) else d[c]
                                 for c in self.COLUMNS])

    def rows_for(self, phase: str) -> list[HistoryRow]:
        return [r for r in self if r.phase == phase]


class SGD:
    """Plain SGD with heavy-ball momentum over an explicit parameter list."""

    def __init__(self, params: Iterable[Tensor], momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - lr * v


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _class_masks(labels: np.ndarray, proto_classes: np.ndarray, own: bool) -> np.ndarray:
    eq = proto_classes[None, :] == np.asarray(labels)[:, None]
    return eq if own else ~eq


def _clst_from_dist(dist: Tensor, labels: np.ndarray, proto_classes: np.ndarray) -> Tensor:
    mask = _class_masks(labels, proto_classes, own=True)
    if not mask.any(axis=1).all():
        raise ValueError("some batch label has no prototype of its class")
    values, _ = ad.masked_min(dist, mask)
    return ad.mean_all(values)


def _sep_from_dist(dist: Tensor, labels: np.ndarray, proto_classes: np.ndarray) -> Tensor:
    mask = _class_masks(labels, proto_classes, own=False)
    if not mask.any(axis=1).all():
        raise ValueError("separation needs prototypes of at least two classes")
    values, _ = ad.masked_min(dist, mask)
    return -ad.mean_all(values)


def loss_clst(latents: Tensor, labels: np.ndarray, model: ProtoTSNet) -> Tensor:
    """Mean over the batch of the min squared distance from any latent window
    to any prototype of the item's own class. Non-negative."""
    dist = ad.sliding_sq_l2(latents, model.prototypes)
    return _clst_from_dist(dist, labels, model.proto_classes)


def loss_sep(latents: Tensor, labels: np.ndarray, model: ProtoTSNet) -> Tensor:
    """Negated mean of the min squared distance to other-class prototypes."""
    dist = ad.sliding_sq_l2(latents, model.prototypes)
    return _sep_from_dist(dist, labels, model.proto_classes)


def loss_l1_conv(model: ProtoTSNet) -> Tensor:
    """L1 norm of the mixing weights (bias excluded)."""
    return ad.abs_sum(model.mix_weight)


def loss_l1_last(model: ProtoTSNet) -> Tensor:
    """Magnitude of the negative classifier weights (negative evidence)."""
    return ad.neg_part_sum(model.classifier_weight)


def stage_loss(
    stage: str,
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    model: ProtoTSNet,
    config: TrainConfig,
    forward: Optional[ForwardPass] = None,
) -> tuple[Tensor, LossBreakdown]:
    """Total loss for one batch under the given stage's composition.

    warm/joint: ce + lambda_clst*clst + lambda_sep*sep + lambda_conv*l1_conv;
    last: ce + lambda_last*l1_last. All components are recorded either way.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    fwd = forward if forward is not None else model.forward_graph(batch_x)
    ce = ad.softmax_cross_entropy(fwd.logits, batch_y)
    clst = _clst_from_dist(fwd.sq_dist, batch_y, model.proto_classes)
    sep = _sep_from_dist(fwd.sq_dist, batch_y, model.proto_classes)
    l1_conv = loss_l1_conv(model)
    l1_last = loss_l1_last(model)

    if stage == "last":
        total = ce + config.lambda_last * l1_last
    else:
        total = ce + config.lambda_clst * clst + config.lambda_sep * sep \
            + config.lambda_conv * l1_conv

    breakdown = LossBreakdown(
        total=total.item(), ce=ce.item(), clst=clst.item(), sep=sep.item(),
        l1_conv=l1_conv.item(), l1_last=l1_last.item(),
    )
    if not breakdown.is_finite():
        raise FloatingPointError(
            f"non-finite loss (training diverged; try a smaller base_lr): {breakdown}"
        )
    return total, breakdown


# ---------------------------------------------------------------------------
# prototype projection
# ---------------------------------------------------------------------------

def project_prototypes(model: ProtoTSNet, train_x: np.ndarray, train_labels: np.ndarray) -> ProtoTSNet:
    """Snap each prototype to its nearest latent window among same-class series.

    Ties break toward the smallest (series index, offset). Fills
    ``model.proto_sources`` and returns the model.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    labels = np.asarray(train_labels)
    if train_x.shape[0] == 0:
        raise ValueError("cannot project onto an empty training set")
    latents = model.encode_batch(train_x)  # [n, l, T]
    win = sliding_window_view(latents, model.latent_length, axis=-1)  # [n, l, S, L]
    sources = np.zeros((model.num_prototypes, 2), dtype=np.int64)
    for j in range(model.num_prototypes):
        allowed = np.flatnonzero(labels == model.proto_classes[j])
        if allowed.size == 0:
            raise ValueError(f"no training series of class {model.proto_classes[j]} for prototype {j}")
        diff = win[allowed] - model.prototypes.data[j][None, :, None, :]
        dist = np.einsum("ncsl,ncsl->ns", diff, diff, optimize=True)
        flat = dist.argmin()  # first occurrence: smallest (series, offset)
        si, offset = allowed[flat // dist.shape[1]], flat % dist.shape[1]
        model.prototypes.data[j] = latents[si, :, offset:offset + model.latent_length]
        sources[j] = (si, offset)
    model.proto_sources = sources
    return model


# ---------------------------------------------------------------------------
# learning-rate schedule
# ---------------------------------------------------------------------------

def lr_schedule(step: int, config: TrainConfig) -> float:
    """Triangular cycle from base_lr*lr_floor up to a peak and back, the peak
    shrinking by lr_decay each completed cycle. Strictly positive."""
    if step < 0:
        raise ValueError("step must be >= 0")
    cycle, pos = divmod(step, config.lr_cycle_len)
    frac = pos / config.lr_cycle_len
    tri = 1.0 - abs(2.0 * frac - 1.0)
    floor = config.base_lr * config.lr_floor
    peak = config.base_lr * config.lr_decay ** cycle
    return floor + max(0.0, peak - floor) * tri


# ---------------------------------------------------------------------------
# the staged fit loop
# ---------------------------------------------------------------------------

def _set_trainable(model: ProtoTSNet, active: list[Tensor]) -> None:
    ids = {id(t) for t in active}
    for group in model.parameter_groups().values():
        for p in group:
            p.requires_grad = id(p) in ids


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def fit(
    model: ProtoTSNet,
    train_x: np.ndarray,
    train_labels: np.ndarray,
    config: TrainConfig,
    *,
    history_path=None,
    checkpoint_dir=None,
) -> History:
    """Run the full schedule: autoencoder pretraining, warm epochs, then
    cycles of joint epochs -> prototype projection -> last-layer epochs.

    The returned model always has projected prototypes when at least one
    cycle ran, so explanations are valid. ``checkpoint_dir`` gets a
    checkpoint at every projection boundary; ``history_path`` gets the
    per-epoch CSV.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    labels = np.asarray(train_labels, dtype=np.int64)
    n = train_x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    present = np.unique(labels)
    missing = sorted(set(range(model.num_classes)) - set(present.tolist()))
    if missing:
        raise ValueError(f"training set has no series of classes {missing}")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 0xBA7C4])))
    history = History()
    groups = model.parameter_groups()
    epoch_index = 0

    def record(phase, stage, breakdown: LossBreakdown, lr: float):
        nonlocal epoch_index
        acc = model.accuracy(train_x, labels)
        history.append(HistoryRow(
            phase=phase, stage=stage, epoch=epoch_index,
            total=breakdown.total, ce=breakdown.ce, clst=breakdown.clst,
            sep=breakdown.sep, l1_conv=breakdown.l1_conv, l1_last=breakdown.l1_last,
            train_acc=acc, lr=lr,
        ))
        epoch_index += 1

    def mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
        k = len(parts)
        return LossBreakdown(*(sum(getattr(p, f) for p in parts) / k
                               for f in ("total", "ce", "clst", "sep", "l1_conv", "l1_last")))

    # Phase 1: autoencoder pretraining; the decoder is dropped afterwards.
    if config.pretrain_epochs > 0:
        decoder = Decoder(model)
        pre_params = groups["encoder"] + groups["mixing"] + decoder.parameters()
        _set_trainable(model, groups["encoder"] + groups["mixing"])
        for p in decoder.parameters():
            p.requires_grad = True
        opt = SGD(pre_params, config.momentum)
        for _ in range(config.pretrain_epochs):
            totals = []
            for idx in _batches(n, config.batch_size, rng):
                opt.zero_grad()
                z = model.encode_graph(train_x[idx])
                recon = decoder.decode_graph(z)
                loss = ad.mse(recon, Tensor(train_x[idx]))
                loss.backward()
                opt.step(config.base_lr)
                totals.append(loss.item())
            mse_epoch = float(np.mean(totals))
            record("pretrain", "pretrain",
                   LossBreakdown(mse_epoch, 0.0, 0.0, 0.0, 0.0, 0.0), config.base_lr)
        del decoder

    # Phase 2: staged prototype training.
    def run_stage(stage: str, epochs: int, params: list[Tensor], lr_for_epoch):
        if epochs == 0:
            return
        _set_trainable(model, params)
        opt = SGD(params, config.momentum)
        for e in range(epochs):
            lr = lr_for_epoch(e)
            parts = []
            hits = 0
            for idx in _batches(n, config.batch_size, rng):
                opt.zero_grad()
                fwd = model.forward_graph(train_x[idx])
                total, breakdown = stage_loss(stage, train_x[idx], labels[idx], model, config, forward=fwd)
                hits += int((fwd.logits.data.argmax(axis=1) == labels[idx]).sum())
                total.backward()
                opt.step(lr)
                parts.append(breakdown)
            # accuracy from the epoch's own predictions, pre-update per batch
            nonlocal_acc[0] = hits / n
            record_stage(stage, mean_breakdown(parts), lr)

    nonlocal_acc = [0.0]

    def record_stage(stage, breakdown, lr):
        nonlocal epoch_index
        history.append(HistoryRow(
            phase="main", stage=stage, epoch=epoch_index,
            total=breakdown.total, ce=breakdown.ce, clst=breakdown.clst,
            sep=breakdown.sep, l1_conv=breakdown.l1_conv, l1_last=breakdown.l1_last,
            train_acc=nonlocal_acc[0], lr=lr,
        ))
        epoch_index += 1

    warm_params = groups["prototypes"] + groups["mixing"]
    joint_params = groups["prototypes"] + groups["mixing"] + groups["encoder"]
    last_params = groups["classifier"]

    run_stage("warm", config.warm_epochs, warm_params, lambda e: config.base_lr)

    joint_step = 0
    for cycle in range(config.cycles):
        base = joint_step
        run_stage("joint", config.joint_epochs, joint_params,
                  lambda e, base=base: lr_schedule(base + e, config))
        joint_step += config.joint_epochs

        project_prototypes(model, train_x, labels)
        if checkpoint_dir is not None:
            from .checkpoint import save_checkpoint
            os.makedirs(checkpoint_dir, exist_ok=True)
            save_checkpoint(model, os.path.join(checkpoint_dir, f"push_{cycle}.ckpt"))

        run_stage("last", config.last_epochs, last_params, lambda e: config.base_lr)

    _set_trainable(model, joint_params + last_params)  # leave everything trainable
    if history_path is not None:
        history.write_csv(history_path)
    return history
