"""Variant assembly: shapes, widths, stage access, determinism, equivariance."""

import numpy as np
import pytest

from aesgraph import tensor as T
from aesgraph.aspp import AsppConfig
from aesgraph.encoder import ConfigError, EncoderConfig
from aesgraph.model import Model, ModelConfig, VARIANTS
from aesgraph.tensor import Tensor

rng = np.random.default_rng(2)

SLIM = dict(
    encoder=EncoderConfig(stem_channels=8, dense_blocks=((1, 4),) * 4),
    aspp=AsppConfig(rates=(2, 4), branch_channels=8),
)


def make(variant, task="classify", seed=0):
    return Model(ModelConfig(variant=variant, task=task, **SLIM), seed)


class TestVariants:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_forward_probabilities(self, variant):
        model = make(variant)
        imgs = Tensor(rng.uniform(size=(2, 3, 64, 64)))
        region, y, probs = model.class_probs(imgs, "train")
        assert probs.shape == (2, 2)
        assert np.max(np.abs(probs.data.sum(axis=1) - 1.0)) < 1e-6
        if variant == "FC_CNN":
            assert region is None
        else:
            assert region.shape == (2, 2, 8, 8)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_regression_path(self, variant):
        model = make(variant, task="regress")
        imgs = Tensor(rng.uniform(size=(2, 3, 64, 64)))
        scores = model.regress(imgs, "eval")
        assert scores.shape == (2,)
        assert np.all(scores.data >= 0.0) and np.all(scores.data <= 1.0)

    def test_feature_widths(self):
        enc_d = SLIM["encoder"].out_channels
        assert make("FCN").feature_channels == enc_d
        assert make("FCN_G").feature_channels == enc_d
        assert make("FCN_A").feature_channels == enc_d + 2 * 8
        assert make("FCN_A_G").feature_channels == enc_d + 2 * 8
        assert make("FCN_C_C").feature_channels == enc_d + 2 * 8

    def test_depth_control_matches_replaced_conv_count(self):
        """FCN_C_C swaps context+graph for the same number of 3x3 convs."""
        cfg = ModelConfig(variant="FCN_C_C", **SLIM)
        model = Model(cfg, 0)
        assert len(model.cascade.branches) == len(cfg.aspp.rates)
        assert all(b.conv.dilation == 1 for b in model.cascade.branches)
        assert len(model.cascade_post) == cfg.graph_blocks
        post_w = model.cascade_post[0].conv.weight
        assert post_w.shape == (model.feature_channels, model.feature_channels, 3, 3)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(variant="FCN_X").validate()


class TestStages:
    def test_stage_shapes(self):
        model = make("FCN_A_G")
        imgs = Tensor(rng.uniform(size=(1, 3, 64, 64)))
        d = SLIM["encoder"].out_channels
        assert model.features(imgs, "eval", stage="fcn").shape == (1, d, 8, 8)
        assert model.features(imgs, "eval", stage="aspp").shape == (1, d + 16, 8, 8)
        assert model.features(imgs, "eval", stage="graph").shape == (1, d + 16, 8, 8)

    def test_missing_stage_rejected(self):
        imgs = Tensor(rng.uniform(size=(1, 3, 64, 64)))
        with pytest.raises(ConfigError):
            make("FCN").features(imgs, "eval", stage="aspp")
        with pytest.raises(ConfigError):
            make("FCN_A").features(imgs, "eval", stage="graph")


class TestDeterminism:
    def test_same_seed_identical_params(self):
        a, b = make("FCN_A_G", seed=5), make("FCN_A_G", seed=5)
        pa, pb = a.named_params(), b.named_params()
        assert pa.keys() == pb.keys()
        for k in pa:
            assert np.array_equal(pa[k].data, pb[k].data)

    def test_forward_bit_identical(self):
        model = make("FCN_A_G")
        imgs = Tensor(rng.uniform(size=(2, 3, 64, 64)))
        first = model.class_probs(imgs, "eval")[2].data
        second = model.class_probs(imgs, "eval")[2].data
        assert np.array_equal(first, second)


class TestFlipEquivariance:
    def test_graph_stage_commutes_with_mirroring(self):
        """Horizontal mirroring permutes the region nodes, so the graph stage
        commutes with it bit-exactly; a mirror-duplicated feature map thus
        yields a mirror-symmetric stage output."""
        from aesgraph.graph import RegionGraphReasoner
        reasoner = RegionGraphReasoner(5, np.random.default_rng(3))
        fmap = Tensor(rng.uniform(size=(1, 5, 4, 6)))
        mirrored = Tensor(fmap.data[:, :, :, ::-1].copy())
        with T.no_grad():
            base = reasoner.forward(fmap).data
            flipped = reasoner.forward(mirrored).data
        assert np.array_equal(flipped, base[:, :, :, ::-1])
