"""The prototype network: masked grouped encoder, 1x1 mixing layer,
prototype similarity layer, dense classifier, and the feature-importance
readout. A mirrored decoder used only for autoencoder pretraining lives
here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .masks import MaskSet, apply_masks_batch, generate_masks

__all__ = [
    "EncoderConfig",
    "ProtoTSNet",
    "Decoder",
    "ForwardPass",
    "receptive_window",
    "latent_length_for",
]


@dataclass(frozen=True)
class EncoderConfig:
    """Structure of the grouped convolutional encoder.

    Every layer is stride-1 with symmetric zero padding, so the latent
    temporal axis aligns index-for-index with the input axis. The last layer
    emits exactly one channel per group (the single latent feature).
    """

    num_groups: int = 32
    layer_kernels: tuple[int, ...] = (7, 5, 3)
    layer_channels_per_group: tuple[int, ...] = (4, 4, 1)
    activation: str = "relu"

    def __post_init__(self):
        if self.num_groups < 1:
            raise ValueError("num_groups must be positive")
        if len(self.layer_kernels) != len(self.layer_channels_per_group):
            raise ValueError("layer_kernels and layer_channels_per_group must have equal length")
        if not self.layer_kernels:
            raise ValueError("encoder needs at least one layer")
        if any(k < 1 or k % 2 == 0 for k in self.layer_kernels):
            raise ValueError(f"kernel sizes must be odd and positive, got {self.layer_kernels}")
        if any(c < 1 for c in self.layer_channels_per_group):
            raise ValueError("channel counts must be positive")
        if self.layer_channels_per_group[-1] != 1:
            raise ValueError("last layer must emit exactly 1 channel per group")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation tag {self.activation!r}")

    @property
    def receptive_radius(self) -> int:
        """Half-width of the input window influencing one latent time step."""
        return sum((k - 1) // 2 for k in self.layer_kernels)


def receptive_window(start: int, end: int, radius: int, series_length: int) -> tuple[int, int]:
    """Map an inclusive latent index range to the input segment that feeds it.

    Affine, monotone, clamped to [0, series_length).
    """
    if not 0 <= start <= end < series_length:
        raise ValueError(f"invalid latent range [{start}, {end}] for length {series_length}")
    return max(0, start - radius), min(series_length - 1, end + radius)


def latent_length_for(fraction: float, series_length: int) -> int:
    """Prototype length in latent steps: max(1, round-half-up(fraction * T))."""
    if fraction <= 0:
        raise ValueError("prototype length fraction must be positive")
    return max(1, int(math.floor(fraction * series_length + 0.5)))


@dataclass
class ForwardPass:
    """One batch pushed through the network, with graph nodes kept for training."""

    latent: Tensor            # [B, l, T]
    sq_dist: Tensor           # [B, m, S]
    sim: Tensor               # [B, m]
    best_offset: np.ndarray   # [B, m] winning latent offsets
    logits: Tensor            # [B, C]


class ProtoTSNet:
    """Prototype-based classifier for multivariate series of fixed length.

    Parameters are float64 tensors; the network is immutable during
    inference and mutated only by the training loop.
    """

    def __init__(
        self,
        num_features: int,
        num_classes: int,
        series_length: int,
        *,
        reception: float = 0.5,
        proto_len_fraction: float = 0.2,
        protos_per_class: int = 10,
        encoder: EncoderConfig | None = None,
        epsilon: float = 1e-4,
        grouped: bool = True,
        seed: int = 0,
    ):
        if num_features < 1 or num_classes < 2 or series_length < 1:
            raise ValueError("need num_features >= 1, num_classes >= 2, series_length >= 1")
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if protos_per_class < 1:
            raise ValueError("protos_per_class must be positive")
        self.encoder = encoder or EncoderConfig()
        self.num_features = num_features
        self.num_classes = num_classes
        self.series_length = series_length
        self.proto_len_fraction = float(proto_len_fraction)
        self.protos_per_class = protos_per_class
        self.epsilon = float(epsilon)
        self.grouped = bool(grouped)
        self.seed = int(seed)
        # the regular-encoder variant is all-ones masks plus a single group
        self.reception = float(reception) if grouped else 1.0
        self.conv_groups = self.encoder.num_groups if grouped else 1

        self.latent_length = latent_length_for(self.proto_len_fraction, series_length)
        if self.latent_length > series_length:
            raise ValueError("prototype length exceeds series length")

        self.masks: MaskSet = generate_masks(
            num_features, self.encoder.num_groups, self.reception, self.seed
        )

        m = protos_per_class * num_classes
        self.num_prototypes = m
        self.proto_classes = np.arange(num_classes).repeat(protos_per_class)

        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, 0x70726F74])))
        self.conv_weights: list[Tensor] = []
        self.conv_biases: list[Tensor] = []
        for c_in_total, c_out_total, k in self._layer_shapes():
            fan_in = (c_in_total // self.conv_groups) * k
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(c_out_total, c_in_total // self.conv_groups, k))
            self.conv_weights.append(Tensor(w, requires_grad=True))
            self.conv_biases.append(Tensor(np.zeros(c_out_total), requires_grad=True))

        l = self.encoder.num_groups
        bound = 1.0 / math.sqrt(l)
        self.mix_weight = Tensor(rng.uniform(-bound, bound, size=(l, l)), requires_grad=True)
        self.mix_bias = Tensor(np.zeros(l), requires_grad=True)

        self.prototypes = Tensor(
            rng.uniform(0.0, 1.0, size=(m, l, self.latent_length)), requires_grad=True
        )

        w_last = np.full((num_classes, m), -0.5)
        w_last[self.proto_classes, np.arange(m)] = 1.0
        self.classifier_weight = Tensor(w_last, requires_grad=True)

        # (series index, latent offset) per prototype, filled by projection
        self.proto_sources: Optional[np.ndarray] = None

    # -- structure -------------------------------------------------------
    def _layer_shapes(self) -> list[tuple[int, int, int]]:
        """(C_in_total, C_out_total, kernel) per encoder layer."""
        l = self.encoder.num_groups
        shapes = []
        prev = self.num_features
        for k, cpg in zip(self.encoder.layer_kernels, self.encoder.layer_channels_per_group):
            shapes.append((prev * l, cpg * l, k))
            prev = cpg
        return shapes

    @property
    def receptive_radius(self) -> int:
        return self.encoder.receptive_radius

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases)):
            params[f"encoder.{i}.weight"] = w
            params[f"encoder.{i}.bias"] = b
        params["mixing.weight"] = self.mix_weight
        params["mixing.bias"] = self.mix_bias
        params["prototypes"] = self.prototypes
        params["classifier.weight"] = self.classifier_weight
        return params

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        encoder = self.conv_weights + self.conv_biases
        return {
            "encoder": encoder,
            "mixing": [self.mix_weight, self.mix_bias],
            "prototypes": [self.prototypes],
            "classifier": [self.classifier_weight],
        }

    # -- graph-building forward ------------------------------------------
    def encode_graph(self, batch: np.ndarray) -> Tensor:
        """Masked grouped encoder then 1x1 mixing: [B, d, T] -> latent [B, l, T]."""
        h: Tensor = Tensor(apply_masks_batch(batch, self.masks))
        last = len(self.conv_weights) - 1
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases)):
            h = ad.grouped_conv1d(h, w, b, self.conv_groups)
            if i < last:
                h = ad.relu(h)
        return ad.pointwise_mix(h, self.mix_weight, self.mix_bias)

    def forward_graph(self, batch: np.ndarray) -> ForwardPass:
        z = self.encode_graph(batch)
        dist = ad.sliding_sq_l2(z, self.prototypes)
        sim_map = ad.log_ratio(dist, self.epsilon)
        sim, best = ad.max_over_time(sim_map)
        logits = ad.linear(sim, self.classifier_weight)
        return ForwardPass(latent=z, sq_dist=dist, sim=sim, best_offset=best, logits=logits)

    # -- inference API -----------------------------------------------------
    def encode(self, x: np.ndarray) -> np.ndarray:
        """Latent representation of one series: [d, T] -> [l, T]."""
        x = self._check_series(x)
        return self.encode_graph(x[None]).data[0]

    def encode_batch(self, x: np.ndarray) -> np.ndarray:
        return self.encode_graph(np.asarray(x, dtype=np.float64)).data

    def similarity(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-prototype similarity of one latent series.

        Returns (sim [m], best_offset [m], best_sqdist [m]); the winning offset
        both maximizes the log-ratio similarity and minimizes squared distance.
        """
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] != self.encoder.num_groups:
            raise ValueError(f"expected latent [l={self.encoder.num_groups}, T], got {z.shape}")
        dist = ad.sliding_sq_l2(Tensor(z[None]), self.prototypes)
        sim_map = ad.log_ratio(dist, self.epsilon)
        sim, best = ad.max_over_time(sim_map)
        best_sqdist = np.take_along_axis(dist.data, best[:, :, None], axis=2)[0, :, 0]
        return sim.data[0], best[0], best_sqdist

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Classify one series: returns (logits [C], sim [m], best_offset [m])."""
        x = self._check_series(x)
        fwd = self.forward_graph(x[None])
        return fwd.logits.data[0], fwd.sim.data[0], fwd.best_offset[0]

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        return self.forward_graph(np.asarray(x, dtype=np.float64)).logits.data.argmax(axis=1)

    def accuracy(self, x: np.ndarray, labels: np.ndarray) -> float:
        return float((self.predict_batch(x) == np.asarray(labels)).mean())

    def feature_importance(self) -> np.ndarray:
        """Per-feature global importance from masks and mixing weights.

        For input feature m: sum over latent outputs j of |sum over groups i
        of delta[i, m] * w[i -> j]|. Non-negative; exactly 0 for features no
        group receives.
        """
        pathway = self.mix_weight.data @ self.masks.delta.astype(self.mix_weight.dtype)
        return np.abs(pathway).sum(axis=0)

    def prototype_input_segment(self, latent_offset: int) -> tuple[int, int]:
        """Input segment feeding the prototype window at a latent offset."""
        return receptive_window(
            latent_offset,
            latent_offset + self.latent_length - 1,
            self.receptive_radius,
            self.series_length,
        )

    def _check_series(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.num_features, self.series_length):
            raise ValueError(
                f"expected series [{self.num_features}, {self.series_length}], got {x.shape}"
            )
        return x


class Decoder:
    """Mirror of the encoder used only for autoencoder pretraining.

    Grouped convolutions with reversed kernels/channels reconstruct each
    group's view of the input; the group blocks are then averaged to a
    single [d, T] reconstruction. Discarded after pretraining.
    """

    def __init__(self, model: ProtoTSNet, seed: int = 1):
        enc = model.encoder
        self.model = model
        l = enc.num_groups
        groups = model.conv_groups
        kernels = tuple(reversed(enc.layer_kernels))
        in_chain = (1,) + tuple(reversed(enc.layer_channels_per_group[:-1]))
        out_chain = tuple(reversed(enc.layer_channels_per_group[:-1])) + (model.num_features,)

        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([model.seed, seed, 0xDEC])))
        self.conv_weights: list[Tensor] = []
        self.conv_biases: list[Tensor] = []
        for k, cin, cout in zip(kernels, in_chain, out_chain):
            c_in_total, c_out_total = cin * l, cout * l
            fan_in = (c_in_total // groups) * k
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(c_out_total, c_in_total // groups, k))
            self.conv_weights.append(Tensor(w, requires_grad=True))
            self.conv_biases.append(Tensor(np.zeros(c_out_total), requires_grad=True))

    def parameters(self) -> list[Tensor]:
        return self.conv_weights + self.conv_biases

    def decode_graph(self, z: Tensor) -> Tensor:
        h = z
        last = len(self.conv_weights) - 1
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases)):
            h = ad.grouped_conv1d(h, w, b, self.model.conv_groups)
            if i < last:
                h = ad.relu(h)
        return ad.average_group_blocks(h, self.model.encoder.num_groups)

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Reconstruct one series from its latent: [l, T] -> [d, T]."""
        z = np.asarray(z, dtype=np.float64)
        return self.decode_graph(Tensor(z[None])).data[0]
