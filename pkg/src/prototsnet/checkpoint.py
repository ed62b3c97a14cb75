"""Single-file model checkpoints: JSON manifest + raw little-endian arrays.

Layout: 4-byte magic ``PTSC``, uint32 format version, uint64 manifest byte
length, the UTF-8 JSON manifest, then the array blob. Each parameter array is
float32 little-endian; the manifest references arrays by name with byte
offsets relative to the blob start. Round trips are bit-exact on the blob.
"""

from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

from .masks import MaskSet
from .model import EncoderConfig, ProtoTSNet

__all__ = ["save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

MAGIC = b"PTSC"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "uint8": "u1"}


def _array_entries(model: ProtoTSNet) -> dict[str, np.ndarray]:
    arrays = {name: t.data.astype("<f4") for name, t in model.parameters().items()}
    arrays["masks.bits"] = np.packbits(model.masks.delta.reshape(-1))
    return arrays


def save_checkpoint(model: ProtoTSNet, path, *, extra: Optional[dict] = None) -> None:
    """Write the model (parameters, masks, structure) to a single archive.

    ``extra`` rides along in the manifest under "extra" (e.g. normalization
    stats); it must be JSON-serializable.
    """
    arrays = _array_entries(model)
    blob = bytearray()
    index = {}
    for name in sorted(arrays):
        arr = arrays[name]
        raw = arr.tobytes()
        index[name] = {
            "offset": len(blob),
            "nbytes": len(raw),
            "shape": list(arr.shape),
            "dtype": "uint8" if arr.dtype == np.uint8 else "float32",
        }
        blob.extend(raw)

    manifest = {
        "format_version": FORMAT_VERSION,
        "model": {
            "num_features": model.num_features,
            "num_classes": model.num_classes,
            "series_length": model.series_length,
            "reception": model.reception,
            "proto_len_fraction": model.proto_len_fraction,
            "protos_per_class": model.protos_per_class,
            "epsilon": model.epsilon,
            "grouped": model.grouped,
            "seed": model.seed,
            "latent_length": model.latent_length,
        },
        "encoder": {
            "num_groups": model.encoder.num_groups,
            "layer_kernels": list(model.encoder.layer_kernels),
            "layer_channels_per_group": list(model.encoder.layer_channels_per_group),
            "activation": model.encoder.activation,
        },
        "masks": {
            "num_features": model.masks.num_features,
            "num_groups": model.masks.num_groups,
            "reception": model.masks.reception,
            "seed": model.masks.seed,
            "bits_array": "masks.bits",
        },
        "proto_classes": model.proto_classes.tolist(),
        "proto_sources": None if model.proto_sources is None else model.proto_sources.tolist(),
        "arrays": index,
        "extra": extra or {},
    }
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(bytes(blob))


def read_manifest(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(mlen).decode("utf-8"))


def load_checkpoint(path) -> tuple[ProtoTSNet, dict]:
    """Rebuild a model from an archive. Returns (model, extra)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (mlen,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + mlen].decode("utf-8"))
    blob = data[16 + mlen:]

    def pull(name: str) -> np.ndarray:
        meta = manifest["arrays"][name]
        raw = blob[meta["offset"]:meta["offset"] + meta["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[meta["dtype"]])
        return arr.reshape(meta["shape"])

    mcfg = manifest["model"]
    encoder = EncoderConfig(
        num_groups=manifest["encoder"]["num_groups"],
        layer_kernels=tuple(manifest["encoder"]["layer_kernels"]),
        layer_channels_per_group=tuple(manifest["encoder"]["layer_channels_per_group"]),
        activation=manifest["encoder"]["activation"],
    )
    model = ProtoTSNet(
        mcfg["num_features"],
        mcfg["num_classes"],
        mcfg["series_length"],
        reception=mcfg["reception"],
        proto_len_fraction=mcfg["proto_len_fraction"],
        protos_per_class=mcfg["protos_per_class"],
        encoder=encoder,
        epsilon=mcfg["epsilon"],
        grouped=mcfg["grouped"],
        seed=mcfg["seed"],
    )
    if model.latent_length != mcfg["latent_length"]:
        raise ValueError("checkpoint latent length disagrees with rebuilt model")

    mmeta = manifest["masks"]
    bits = np.unpackbits(pull(mmeta["bits_array"]).reshape(-1))
    delta = bits[: mmeta["num_groups"] * mmeta["num_features"]].reshape(
        mmeta["num_groups"], mmeta["num_features"]
    )
    model.masks = MaskSet(delta=delta, reception=mmeta["reception"], seed=mmeta["seed"])

    for name, tensor in model.parameters().items():
        stored = pull(name).astype(np.float64)
        if stored.shape != tensor.data.shape:
            raise ValueError(f"array {name}: stored shape {stored.shape} != {tensor.data.shape}")
        tensor.data = stored

    model.proto_classes = np.asarray(manifest["proto_classes"], dtype=np.int64)
    if manifest["proto_sources"] is not None:
        model.proto_sources = np.asarray(manifest["proto_sources"], dtype=np.int64)
    return model, manifest.get("extra", {})
