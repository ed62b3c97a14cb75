import math

import numpy as np
import pytest

from prototsnet import autodiff as ad
from prototsnet.autodiff import Tensor
from prototsnet.masks import MaskSet
from prototsnet.model import Decoder, EncoderConfig, ProtoTSNet, latent_length_for, receptive_window

from oracles import importance_naive


SMALL_ENC = EncoderConfig(num_groups=4, layer_kernels=(3, 3), layer_channels_per_group=(2, 1))


def small_model(**kw):
    defaults = dict(reception=0.67, proto_len_fraction=0.25, protos_per_class=1,
                    encoder=SMALL_ENC, seed=0)
    defaults.update(kw)
    return ProtoTSNet(3, 2, 12, **defaults)


def _raw_maskset(delta: np.ndarray) -> MaskSet:
    # bypass the equal-row-sum invariant for hand-built matrices
    masks = MaskSet.__new__(MaskSet)
    object.__setattr__(masks, "delta", delta.astype(np.uint8))
    object.__setattr__(masks, "reception", 1.0)
    object.__setattr__(masks, "seed", 0)
    object.__setattr__(masks, "num_groups", delta.shape[0])
    object.__setattr__(masks, "num_features", delta.shape[1])
    return masks


class TestEncoderConfig:
    def test_receptive_radius(self):
        assert EncoderConfig(layer_kernels=(7, 5, 3), layer_channels_per_group=(4, 4, 1)).receptive_radius == 6
        assert EncoderConfig(layer_kernels=(1,), layer_channels_per_group=(1,)).receptive_radius == 0

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            EncoderConfig(layer_kernels=(4, 3), layer_channels_per_group=(2, 1))

    def test_last_layer_must_be_single_channel(self):
        with pytest.raises(ValueError):
            EncoderConfig(layer_kernels=(3, 3), layer_channels_per_group=(2, 2))


class TestReceptiveWindow:
    def test_zero_radius_is_identity(self):
        assert receptive_window(3, 7, 0, 10) == (3, 7)

    def test_radius_six(self):
        # kernels [7,5,3] -> radius 6; latent [10, 20] -> input [4, 26]
        assert receptive_window(10, 20, 6, 100) == (4, 26)

    def test_clamps_at_boundaries(self):
        assert receptive_window(0, 4, 6, 100) == (0, 10)
        assert receptive_window(95, 99, 6, 100) == (89, 99)

    def test_invalid_range(self):
        with pytest.raises(ValueError):
            receptive_window(5, 3, 2, 10)
        with pytest.raises(ValueError):
            receptive_window(0, 10, 2, 10)


def test_latent_length_rounding():
    assert latent_length_for(0.2, 100) == 20
    assert latent_length_for(0.01, 30) == 1   # clamps up to 1
    assert latent_length_for(0.25, 45) == 11  # 11.25 rounds down
    assert latent_length_for(0.5, 45) == 23   # 22.5 rounds half-up


class TestEncode:
    def test_latent_shape_preserves_length(self):
        for t_len in (12, 20, 33):
            model = ProtoTSNet(5, 2, t_len, reception=0.6, proto_len_fraction=0.2,
                               protos_per_class=1, encoder=SMALL_ENC, seed=0)
            z = model.encode(np.random.default_rng(0).normal(size=(5, t_len)))
            assert z.shape == (SMALL_ENC.num_groups, t_len)

    def test_zero_input_zero_biases_gives_zero_latent(self):
        model = small_model()
        z = model.encode(np.zeros((3, 12)))
        np.testing.assert_array_equal(z, np.zeros_like(z))

    def test_orphan_feature_does_not_move_latent(self):
        model = small_model()
        # force masks where feature 2 is orphaned (rows keep 2 of 3 features)
        delta = np.array([[1, 1, 0]] * 4, dtype=np.uint8)
        model.masks = MaskSet(delta=delta, reception=0.67, seed=0)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 12))
        x2 = x.copy()
        x2[2] += rng.normal(size=12)
        np.testing.assert_array_equal(model.encode(x), model.encode(x2))

    def test_masked_feature_isolated_per_group(self):
        model = small_model()
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 12))
        pre_mix = _group_outputs(model, x)
        for feat in range(3):
            x2 = x.copy()
            x2[feat] += rng.normal(size=12)
            post = _group_outputs(model, x2)
            for g in range(4):
                changed = not np.array_equal(pre_mix[g], post[g])
                assert changed == bool(model.masks.delta[g, feat])


def _group_outputs(model, x):
    """Encoder group outputs before mixing."""
    from prototsnet.masks import apply_masks_batch
    h = Tensor(apply_masks_batch(x[None], model.masks))
    last = len(model.conv_weights) - 1
    for i, (w, b) in enumerate(zip(model.conv_weights, model.conv_biases)):
        h = ad.grouped_conv1d(h, w, b, model.conv_groups)
        if i < last:
            h = ad.relu(h)
    return h.data[0]


class TestSimilarity:
    def test_zero_distance_hits_upper_bound(self):
        model = small_model(epsilon=1e-4)
        z = model.encode(np.random.default_rng(3).normal(size=(3, 12)))
        # plant prototype 0 exactly on a latent window
        model.prototypes.data[0] = z[:, 2:2 + model.latent_length]
        sim, best, sqdist = model.similarity(z)
        assert sim[0] == pytest.approx(math.log(1.0 / 1e-4), abs=1e-9)
        assert best[0] == 2 and sqdist[0] == 0.0

    def test_unit_distance_value(self):
        # d == 1 everywhere -> log(2 / (1 + eps))
        values = ad.log_ratio(Tensor(np.ones((1, 1, 5))), 1e-4)
        assert values.data[0, 0, 0] == pytest.approx(0.693047, abs=1e-6)

    def test_asymptote_to_zero(self):
        values = ad.log_ratio(Tensor(np.full((1, 1, 1), 1e12)), 1e-4)
        assert values.data[0, 0, 0] == pytest.approx(0.0, abs=1e-9)

    def test_bounds_hold_on_random_inputs(self):
        model = small_model()
        rng = np.random.default_rng(4)
        cap = math.log(1.0 / model.epsilon)
        for _ in range(10):
            sim, _, _ = model.similarity(rng.normal(size=(4, 12)))
            assert (sim > 0).all() and (sim <= cap + 1e-12).all()

    def test_argmax_equals_argmin_distance(self):
        model = small_model()
        rng = np.random.default_rng(5)
        for _ in range(10):
            z = rng.normal(size=(4, 12))
            _, best, _ = model.similarity(z)
            dist = ad.sliding_sq_l2(Tensor(z[None]), model.prototypes).data[0]
            np.testing.assert_array_equal(best, dist.argmin(axis=1))


class TestForward:
    def test_one_hot_head_selects_similarity(self):
        model = small_model()
        model.classifier_weight.data = np.array([[1.0, 0.0], [0.0, 1.0]])
        x = np.random.default_rng(6).normal(size=(3, 12))
        logits, sim, _ = model.forward(x)
        np.testing.assert_allclose(logits, sim, atol=1e-12)

    def test_batch_equals_per_instance(self):
        model = small_model()
        rng = np.random.default_rng(7)
        xb = rng.normal(size=(4, 3, 12))
        batch_logits = model.forward_graph(xb).logits.data
        for i in range(4):
            logits, _, _ = model.forward(xb[i])
            np.testing.assert_allclose(batch_logits[i], logits, atol=1e-12)

    def test_shape_validation(self):
        model = small_model()
        with pytest.raises(ValueError):
            model.forward(np.zeros((2, 12)))


class TestFeatureImportance:
    def test_zero_weights_zero_importance(self):
        model = small_model()
        model.mix_weight.data = np.zeros_like(model.mix_weight.data)
        np.testing.assert_array_equal(model.feature_importance(), np.zeros(3))

    def test_single_path_absolute_value(self):
        enc = EncoderConfig(num_groups=1, layer_kernels=(3,), layer_channels_per_group=(1,))
        model = ProtoTSNet(1, 2, 8, reception=1.0, proto_len_fraction=0.5,
                           protos_per_class=1, encoder=enc, seed=0)
        model.mix_weight.data = np.array([[-2.0]])
        np.testing.assert_allclose(model.feature_importance(), [2.0])

    def test_hand_computed_double_sum(self):
        # delta=[[1,0],[1,1]], w(i->j)=[[1,-1],[-1,2]] -> I = [1, 3]
        enc = EncoderConfig(num_groups=2, layer_kernels=(3,), layer_channels_per_group=(1,))
        model = ProtoTSNet(2, 2, 8, reception=0.5, proto_len_fraction=0.5,
                           protos_per_class=1, encoder=enc, seed=0)
        model.masks = _raw_maskset(np.array([[1, 0], [1, 1]]))
        w_ij = np.array([[1.0, -1.0], [-1.0, 2.0]])  # rows: encoder output i
        model.mix_weight.data = w_ij.T  # library stores [output j, input i]
        np.testing.assert_allclose(model.feature_importance(), [1.0, 3.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_double_sum(self, seed):
        model = small_model(seed=seed)
        expected = importance_naive(model.masks.delta, model.mix_weight.data.T)
        np.testing.assert_allclose(model.feature_importance(), expected, atol=1e-12)

    def test_scale_covariance(self):
        model = small_model()
        base = model.feature_importance()
        model.mix_weight.data = model.mix_weight.data * 3.0
        np.testing.assert_allclose(model.feature_importance(), 3.0 * base, rtol=1e-12)

    def test_orphan_feature_importance_exactly_zero(self):
        model = small_model()
        model.masks = MaskSet(delta=np.array([[1, 1, 0]] * 4, dtype=np.uint8),
                              reception=0.67, seed=0)
        imp = model.feature_importance()
        assert imp[2] == 0.0 and (imp >= 0).all()


class TestDecoder:
    def test_shape_round_trip(self):
        model = small_model()
        decoder = Decoder(model)
        x = np.random.default_rng(8).normal(size=(3, 12))
        recon = decoder.decode(model.encode(x))
        assert recon.shape == x.shape

    def test_zero_latent_zero_params_zero_output(self):
        model = small_model()
        decoder = Decoder(model)
        for w in decoder.conv_weights:
            w.data = np.zeros_like(w.data)
        recon = decoder.decode(np.zeros((4, 12)))
        np.testing.assert_array_equal(recon, np.zeros((3, 12)))

    def test_regular_encoder_variant_shapes(self):
        model = ProtoTSNet(3, 2, 12, reception=0.5, proto_len_fraction=0.25,
                           protos_per_class=1, encoder=SMALL_ENC, grouped=False, seed=0)
        assert model.reception == 1.0 and (model.masks.delta == 1).all()
        z = model.encode(np.random.default_rng(9).normal(size=(3, 12)))
        assert z.shape == (4, 12)
        recon = Decoder(model).decode(z)
        assert recon.shape == (3, 12)


class TestWholeLossGradient:
    def test_end_to_end_finite_difference(self):
        # composite loss wrt a parameter tensor via data grafting
        from prototsnet.training import TrainConfig, stage_loss
        model = small_model()
        rng = np.random.default_rng(10)
        xb = rng.normal(size=(2, 3, 12))
        yb = np.array([0, 1])
        cfg = TrainConfig()

        def loss_wrt(param):
            def f(probe):
                saved_data, saved_rg = param.data, param.requires_grad
                param.data, param.requires_grad = probe.data, probe.requires_grad
                param.grad = None
                try:
                    total, _ = stage_loss("joint", xb, yb, model, cfg)
                    if probe.requires_grad:
                        total.backward()
                        probe.grad = param.grad
                    return Tensor(total.data)
                finally:
                    param.data, param.requires_grad = saved_data, saved_rg
            return f

        for name, param in model.parameters().items():
            err = ad.finite_diff_check(loss_wrt(param), param, step=1e-5)
            assert err < 1e-3, f"{name}: {err}"
