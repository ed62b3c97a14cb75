import logging

import numpy as np
import pytest

from prototsnet.masks import MaskSet, apply_masks, apply_masks_batch, generate_masks


class TestGenerateMasks:
    def test_half_reception_counts(self):
        # d=10 features, l=4 groups, r=0.5: each mask keeps exactly 5
        masks = generate_masks(10, 4, 0.5, seed=7)
        assert masks.delta.shape == (4, 10)
        np.testing.assert_array_equal(masks.delta.sum(axis=1), [5, 5, 5, 5])

    def test_single_keep(self):
        masks = generate_masks(2, 1, 0.5, seed=0)
        assert masks.delta.sum() == 1

    def test_full_reception_all_ones(self):
        masks = generate_masks(5, 3, 1.0, seed=1)
        assert (masks.delta == 1).all()

    def test_binary_values_only(self):
        masks = generate_masks(9, 6, 0.4, seed=3)
        assert set(np.unique(masks.delta)) <= {0, 1}

    def test_deterministic_regeneration(self):
        a = generate_masks(12, 8, 0.3, seed=42)
        b = generate_masks(12, 8, 0.3, seed=42)
        assert a.delta.tobytes() == b.delta.tobytes()

    def test_seed_changes_masks(self):
        a = generate_masks(12, 8, 0.3, seed=1)
        b = generate_masks(12, 8, 0.3, seed=2)
        assert a.delta.tobytes() != b.delta.tobytes()

    @pytest.mark.parametrize("seed", range(8))
    def test_row_sums_across_seeds(self, seed):
        d, l, r = 7, 5, 0.6
        masks = generate_masks(d, l, r, seed)
        assert (masks.delta.sum(axis=1) == int(r * d)).all()

    def test_reception_too_small(self):
        with pytest.raises(ValueError):
            generate_masks(3, 2, 0.2, seed=0)  # floor(0.6) == 0

    @pytest.mark.parametrize("r", [0.0, -0.5, 1.5])
    def test_reception_out_of_range(self, r):
        with pytest.raises(ValueError):
            generate_masks(10, 2, r, seed=0)

    def test_orphan_warning_logged(self, caplog):
        # hunt a seed where some feature lands in no mask
        for seed in range(200):
            delta = generate_masks(6, 2, 0.34, seed).delta
            if (delta.sum(axis=0) == 0).any():
                with caplog.at_level(logging.WARNING, logger="prototsnet.masks"):
                    generate_masks(6, 2, 0.34, seed)
                assert any("no mask" in rec.message for rec in caplog.records)
                return
        pytest.fail("no orphan-producing seed found")


class TestMaskSetValidation:
    def test_row_sum_enforced(self):
        with pytest.raises(ValueError):
            MaskSet(delta=np.array([[1, 1, 0], [1, 0, 0]]), reception=0.67, seed=0)

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            MaskSet(delta=np.array([[2, 0]]), reception=0.5, seed=0)

    def test_immutable(self):
        masks = generate_masks(4, 2, 0.5, seed=0)
        with pytest.raises(ValueError):
            masks.delta[0, 0] = 0


class TestApplyMasks:
    def test_all_ones_stacks_copies(self):
        x = np.random.default_rng(0).normal(size=(3, 5))
        masks = generate_masks(3, 4, 1.0, seed=0)
        out = apply_masks(x, masks)
        assert out.shape == (12, 5)
        for i in range(4):
            np.testing.assert_array_equal(out[i * 3:(i + 1) * 3], x)

    def test_zero_row_annihilates_variant(self):
        # an all-zero row is only constructible directly in tests
        masks = self._raw_maskset(np.array([[1, 1], [0, 0]]))
        x = np.ones((2, 3))
        out = apply_masks(x, masks)
        assert (out[2:] == 0).all() and (out[:2] == 1).all()

    @staticmethod
    def _raw_maskset(delta: np.ndarray) -> MaskSet:
        # bypass row-sum validation for hand-built test matrices
        masks = MaskSet.__new__(MaskSet)
        object.__setattr__(masks, "delta", delta.astype(np.uint8))
        object.__setattr__(masks, "reception", 1.0)
        object.__setattr__(masks, "seed", 0)
        object.__setattr__(masks, "num_groups", delta.shape[0])
        object.__setattr__(masks, "num_features", delta.shape[1])
        return masks

    def test_hand_enumeration(self):
        # delta [[1,0,1],[0,1,0]] on rows [a; b; c] -> [a; 0; c; 0; b; 0]
        a, b, c = np.arange(4.0), np.arange(4.0) + 10, np.arange(4.0) + 20
        x = np.stack([a, b, c])
        masks = self._raw_maskset(np.array([[1, 0, 1], [0, 1, 0]]))
        out = apply_masks(x, masks)
        np.testing.assert_array_equal(out[0], a)
        assert (out[1] == 0).all()
        np.testing.assert_array_equal(out[2], c)
        assert (out[3] == 0).all()
        np.testing.assert_array_equal(out[4], b)
        assert (out[5] == 0).all()

    def test_dimension_mismatch(self):
        masks = generate_masks(3, 2, 0.67, seed=0)
        with pytest.raises(ValueError):
            apply_masks(np.ones((4, 5)), masks)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 4, 6))
        masks = generate_masks(4, 3, 0.5, seed=5)
        batched = apply_masks_batch(x, masks)
        for i in range(3):
            np.testing.assert_array_equal(batched[i], apply_masks(x[i], masks))
