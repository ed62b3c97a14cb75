import numpy as np
import pytest

from prototsnet.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from prototsnet.data import SyntheticSpec, generate_synthetic
from prototsnet.model import EncoderConfig, ProtoTSNet
from prototsnet.training import TrainConfig, fit


def make_model(seed=0, grouped=True):
    enc = EncoderConfig(num_groups=4, layer_kernels=(3, 3), layer_channels_per_group=(2, 1))
    return ProtoTSNet(3, 2, 15, reception=0.67, proto_len_fraction=0.3,
                      protos_per_class=2, encoder=enc, grouped=grouped, seed=seed)


class TestCheckpointRoundTrip:
    def test_arrays_bit_exact(self, tmp_path):
        model = make_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        for name, tensor in model.parameters().items():
            stored = tensor.data.astype("<f4")
            np.testing.assert_array_equal(
                loaded.parameters()[name].data.astype("<f4"), stored, err_msg=name)

    def test_save_load_save_bytes_identical(self, tmp_path):
        model = make_model(seed=3)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        loaded, _ = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_masks_restored_exactly(self, tmp_path):
        model = make_model(seed=5)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.masks.delta, model.masks.delta)
        assert loaded.masks.reception == model.masks.reception
        assert loaded.masks.seed == model.masks.seed

    def test_structure_restored(self, tmp_path):
        model = make_model(grouped=False)
        path = tmp_path / "re.ckpt"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        assert loaded.grouped is False and loaded.conv_groups == 1
        assert loaded.latent_length == model.latent_length
        assert loaded.encoder == model.encoder
        np.testing.assert_array_equal(loaded.proto_classes, model.proto_classes)

    def test_proto_sources_round_trip(self, tmp_path):
        model = make_model()
        ds = generate_synthetic(SyntheticSpec(n_per_class=2, seed=0))
        x, y = ds.x[:, :, :15], np.clip(ds.labels, 0, 1)
        fit(model, x, y, TrainConfig(pretrain_epochs=0, warm_epochs=1, joint_epochs=1,
                                     last_epochs=1, cycles=1, batch_size=4, seed=0))
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.proto_sources, model.proto_sources)

    def test_predictions_survive_reload_at_f32(self, tmp_path):
        model = make_model(seed=7)
        rng = np.random.default_rng(0)
        xb = rng.normal(size=(6, 3, 15))
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        logits_a = model.forward_graph(xb).logits.data
        logits_b = loaded.forward_graph(xb).logits.data
        np.testing.assert_allclose(logits_a, logits_b, atol=1e-4)

    def test_extra_payload(self, tmp_path):
        model = make_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path, extra={"normalize": {"mean": [0.0], "std": [1.0]}})
        _, extra = load_checkpoint(path)
        assert extra["normalize"]["std"] == [1.0]

    def test_manifest_readable(self, tmp_path):
        model = make_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        manifest = read_manifest(path)
        assert manifest["format_version"] == 1
        assert "prototypes" in manifest["arrays"]
        assert all(meta["dtype"] in ("float32", "uint8") for meta in manifest["arrays"].values())

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)
