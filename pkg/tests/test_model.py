import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirrams.data import CONTINUOUS, LABEL, Column, Schema, TabularDataset, make_synthetic
from mirrams.model import PRESETS, MirramsModel, ModelConfig, Prediction, preset_batch_size
from mirrams.objective import loss_l1
from mirrams.tensor import backward

TINY = dict(d=8, depth=1, heads=2, ff_mult=2, mlp_hidden=16)


def mixed(n=12, seed=0):
    return make_synthetic(n=n, p_cont=3, p_cat=2, seed=seed)


def tiny_model(ds, seed=0, **kw):
    return MirramsModel(ModelConfig.for_dataset(ds, **(TINY | kw)), seed=seed)


def single_feature(x):
    cols = (Column("x", CONTINUOUS), Column("y", LABEL, ("0", "1")))
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    return TabularDataset(Schema(cols), x, np.zeros((len(x), 0), dtype=int), np.ones_like(x, dtype=bool))


class TestEmbedding:
    def test_p2_has_three_positions(self):
        ds = make_synthetic(n=5, p_cont=2, seed=0)
        assert tiny_model(ds).embed(ds).shape == (5, 3, 8)

    def test_cls_at_position_zero(self):
        ds = mixed()
        m = tiny_model(ds)
        e = m.embed(ds).data
        np.testing.assert_array_equal(e[:, 0, :], np.broadcast_to(m.params["cls"].data, (ds.n, 8)))

    def test_hand_evaluated_mlp(self):
        ds = single_feature([0.5])
        m = MirramsModel(ModelConfig(n_cont=1, d=8, depth=1, heads=2), seed=3)
        P = {k: v.data for k, v in m.params.items()}
        assert P["cont.w1"].shape == (1, 100)
        hidden = np.maximum(0.5 * P["cont.w1"][0] + P["cont.b1"][0], 0.0)
        expected = hidden @ P["cont.w2"][0] + P["cont.b2"][0]
        np.testing.assert_allclose(m.embed(ds).data[0, 1], expected, rtol=1e-13, atol=1e-15)

    def test_masked_position_is_missing_token(self):
        ds = mixed()
        m = tiny_model(ds)
        mask = np.ones((ds.n, ds.p), dtype=bool)
        mask[2, 4] = mask[5, 0] = False
        e = m.embed(ds, mask).data
        np.testing.assert_array_equal(e[2, 5], m.params["missing"].data[4])
        np.testing.assert_array_equal(e[5, 1], m.params["missing"].data[0])

    def test_out_of_vocabulary(self):
        ds = mixed()
        ds.x_cat[0, 0] = 99
        with pytest.raises(IndexError):
            tiny_model(ds).embed(ds)

    def test_mask_shape_checked(self):
        ds = mixed()
        with pytest.raises(ValueError):
            tiny_model(ds).embed(ds, np.ones((ds.n, ds.p + 1), dtype=bool))


class TestPrediction:
    def test_all_zero_mask_ignores_values(self):
        a, b = mixed(seed=0), mixed(seed=1)
        m = tiny_model(a)
        zero = np.zeros((a.n, a.p), dtype=bool)
        np.testing.assert_array_equal(m.predict(a, zero).probs, m.predict(b, zero).probs)

    def test_rows_on_simplex(self):
        ds = mixed(n=40)
        probs = tiny_model(ds).predict(ds).probs
        assert (probs >= 0).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_binary_confidence_at_least_half(self):
        ds = mixed(n=40)
        assert (tiny_model(ds, seed=5).predict(ds).confidence >= 0.5).all()

    def test_argmax_ties_lowest_index(self):
        pred = Prediction(np.array([[0.5, 0.5], [0.2, 0.8]]))
        np.testing.assert_array_equal(pred.labels, [0, 1])

    def test_row_permutation(self):
        ds = mixed(n=10)
        m = tiny_model(ds)
        order = np.array([1, 0, *range(2, 10)])
        np.testing.assert_array_equal(m.predict(ds.subset(order)).probs, m.predict(ds).probs[order])

    def test_batching_does_not_change_scores(self):
        ds = mixed(n=30)
        m = tiny_model(ds)
        np.testing.assert_allclose(m.predict(ds, batch_size=7).probs, m.predict(ds).probs, rtol=1e-13)

    def test_multiclass_head(self):
        ds = mixed()
        m = MirramsModel(ModelConfig(n_cont=3, cat_vocab=(3, 3), n_classes=3, **TINY))
        assert m.predict(ds).probs.shape == (ds.n, 3)

    @given(st.integers(0, 2**31 - 1))
    def test_missing_value_isolation(self, seed):
        rng = np.random.default_rng(seed)
        ds = mixed()
        m = tiny_model(ds)
        mask = rng.random((ds.n, ds.p)) > 0.4
        other = ds.subset(np.arange(ds.n))
        other.x_cont[~mask[:, :3]] = rng.standard_normal((~mask[:, :3]).sum()) * 100
        other.x_cat[~mask[:, 3:]] = rng.integers(0, 3, (~mask[:, 3:]).sum())
        np.testing.assert_array_equal(m.predict(ds, mask).probs, m.predict(other, mask).probs)


class TestMissingTokenGradient:
    def test_gradient_iff_masked(self):
        ds = mixed(n=8)
        m = tiny_model(ds)
        mask = np.ones((ds.n, ds.p), dtype=bool)
        mask[3, 1] = False
        mask[:, 4] = False
        grads = backward(loss_l1(m, ds, mask), m.params)
        g = grads["missing"]
        assert np.abs(g[1]).sum() > 0 and np.abs(g[4]).sum() > 0
        for j in (0, 2, 3):
            assert not g[j].any()


class TestCheckpoint:
    def test_bit_exact_reload(self, tmp_path):
        ds = mixed()
        m = tiny_model(ds, seed=7)
        m.save(tmp_path / "m.npz")
        back = MirramsModel.load(tmp_path / "m.npz")
        assert back.config == m.config
        np.testing.assert_array_equal(back.predict(ds).probs, m.predict(ds).probs)

    def test_rejects_foreign_file(self, tmp_path):
        np.savez(tmp_path / "x.npz", __header__=np.array('{"format": "other"}'))
        with pytest.raises(ValueError):
            MirramsModel.load(tmp_path / "x.npz")

    def test_copy_is_independent(self):
        ds = mixed()
        m = tiny_model(ds)
        c = m.copy()
        c.params["cls"].data += 1.0
        assert not np.array_equal(c.params["cls"].data, m.params["cls"].data)

    def test_load_state_shape_checked(self):
        m = tiny_model(mixed())
        with pytest.raises(ValueError):
            m.load_state({"cls": np.zeros(3)})


class TestConfig:
    def test_heads_must_divide_d(self):
        with pytest.raises(ValueError):
            ModelConfig(n_cont=2, d=10, heads=4)

    def test_depth_positive(self):
        with pytest.raises(ValueError):
            ModelConfig(n_cont=2, depth=0)

    def test_default_preset(self):
        ds = mixed()
        cfg = ModelConfig.for_dataset(ds)
        assert (cfg.d, cfg.depth, cfg.heads) == (32, 6, 8)

    def test_wide_preset_above_100_features(self):
        ds = make_synthetic(n=4, p_cont=101, seed=0)
        cfg = ModelConfig.for_dataset(ds)
        assert cfg.d == 4
        assert preset_batch_size(None, 101) == 64
        assert preset_batch_size(None, 100) == 256

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_build(self, name):
        ds = mixed(n=3)
        m = MirramsModel(ModelConfig.for_dataset(ds, name))
        assert m.predict(ds).probs.shape == (3, 2)
