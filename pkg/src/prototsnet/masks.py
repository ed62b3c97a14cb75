"""Binary feature masks routing feature subsets into encoder groups."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

__all__ = ["MaskSet", "generate_masks", "apply_masks", "apply_masks_batch"]


@dataclass(frozen=True)
class MaskSet:
    """l binary masks over d input features, each keeping floor(reception*d).

    Regeneration from (num_features, num_groups, reception, seed) is
    bit-identical; instances are immutable and freely shareable.
    """

    delta: np.ndarray  # [num_groups, num_features], values 0/1
    reception: float
    seed: int
    num_features: int = field(init=False)
    num_groups: int = field(init=False)

    def __post_init__(self):
        delta = np.ascontiguousarray(self.delta, dtype=np.uint8)
        if delta.ndim != 2:
            raise ValueError("mask matrix must be 2-D [groups, features]")
        if not np.isin(delta, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        if not 0.0 < self.reception <= 1.0:
            raise ValueError(f"reception must lie in (0, 1], got {self.reception}")
        keep = math.floor(self.reception * delta.shape[1])
        if keep < 1:
            raise ValueError(
                f"reception {self.reception} keeps floor(r*d)={keep} features; too small for d={delta.shape[1]}"
            )
        if (delta.sum(axis=1) != keep).any():
            raise ValueError(f"every mask row must keep exactly {keep} features")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "num_features", delta.shape[1])
        object.__setattr__(self, "num_groups", delta.shape[0])

    @property
    def features_per_group(self) -> int:
        return math.floor(self.reception * self.num_features)

    def orphan_features(self) -> np.ndarray:
        """Indices of features kept by no group (importance will be exactly 0)."""
        return np.flatnonzero(self.delta.sum(axis=0) == 0)


def generate_masks(num_features: int, num_groups: int, reception: float, seed: int) -> MaskSet:
    """Draw l independent uniform-random floor(r*d)-subsets of the d features.

    Pure function of its arguments. Duplicate rows are allowed; duplicates
    and orphaned features are reported through the module logger.
    """
    if num_features < 1 or num_groups < 1:
        raise ValueError("num_features and num_groups must be positive")
    if not 0.0 < reception <= 1.0:
        raise ValueError(f"reception must lie in (0, 1], got {reception}")
    keep = math.floor(reception * num_features)
    if keep < 1:
        raise ValueError(
            f"reception {reception} keeps floor(r*d)=0 of {num_features} features"
        )

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, num_features, num_groups])))
    delta = np.zeros((num_groups, num_features), dtype=np.uint8)
    for i in range(num_groups):
        delta[i, rng.choice(num_features, size=keep, replace=False)] = 1
    masks = MaskSet(delta=delta, reception=reception, seed=seed)

    unique_rows = len({row.tobytes() for row in delta})
    if unique_rows < num_groups:
        logger.info("mask set has %d duplicate rows of %d", num_groups - unique_rows, num_groups)
    orphans = masks.orphan_features()
    if orphans.size:
        logger.warning("features %s appear in no mask; their importance is fixed at 0", orphans.tolist())
    return masks


def apply_masks(x: np.ndarray, masks: MaskSet) -> np.ndarray:
    """Stack the l masked variants of one series, group-major: [d, T] -> [l*d, T].

    Output row i*d + m is delta[i, m] * x[m, :], so a grouped convolution with
    groups = l sees variant i in group i only.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != masks.num_features:
        raise ValueError(f"expected series [d={masks.num_features}, T], got {x.shape}")
    variants = masks.delta[:, :, None] * x[None, :, :]
    return variants.reshape(masks.num_groups * masks.num_features, x.shape[1])


def apply_masks_batch(x: np.ndarray, masks: MaskSet) -> np.ndarray:
    """Batch form of apply_masks: [n, d, T] -> [n, l*d, T]."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1] != masks.num_features:
        raise ValueError(f"expected batch [n, d={masks.num_features}, T], got {x.shape}")
    n, d, t_len = x.shape
    variants = masks.delta[None, :, :, None] * x[:, None, :, :]
    return variants.reshape(n, masks.num_groups * d, t_len)
