import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirrams.tensor import (
    Adam,
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    broadcast_to,
    concat,
    cross_entropy,
    dropout,
    gather,
    layer_norm,
    log_softmax,
    softmax,
    where,
)

from gradcheck import check_op

TOL = 1e-4


class TestForwardExamples:
    def test_identity_matmul(self):
        a = np.random.default_rng(0).standard_normal((3, 5))
        out = Tensor(np.eye(3)) @ Tensor(a)
        np.testing.assert_array_equal(out.data, a)

    def test_softmax_of_zeros_is_uniform(self):
        np.testing.assert_allclose(softmax(Tensor(np.zeros(3))).data, np.full(3, 1 / 3), atol=1e-15)

    def test_layer_norm_by_hand(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]))
        out = layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / np.sqrt(2.0 / 3.0 + 1e-5)
        np.testing.assert_allclose(out, expected, rtol=1e-12)
        assert abs(out.mean()) < 1e-12

    def test_max_returns_first_argmax(self):
        vals, idx = Tensor(np.array([[1.0, 3.0, 3.0], [5.0, 0.0, 1.0]])).max(axis=-1)
        np.testing.assert_array_equal(vals.data, [3.0, 5.0])
        np.testing.assert_array_equal(idx, [1, 0])

    def test_gather_rows(self):
        table = Tensor(np.arange(12.0).reshape(4, 3))
        np.testing.assert_array_equal(gather(table, np.array([2, 0, 2])).data[:, 0], [6.0, 0.0, 6.0])

    def test_mean_over_rows(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 6.0]]))
        np.testing.assert_array_equal(x.mean(axis=0).data, [2.0, 4.0])

    def test_cross_entropy_uniform_binary(self):
        loss = cross_entropy(Tensor(np.zeros((5, 2))), np.array([0, 1, 1, 0, 1]))
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-15)

    def test_gelu_at_known_points(self):
        x = Tensor(np.array([0.0, 1.0, -1.0]))
        np.testing.assert_allclose(x.gelu().data, [0.0, 0.8413447460685429, -0.15865525393145707], rtol=1e-12)


class TestShapeAndFiniteErrors:
    def test_matmul_shape_error_names_op_and_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_add_shape_error(self):
        with pytest.raises(ShapeError, match="add"):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))

    def test_concat_shape_error(self):
        with pytest.raises(ShapeError, match="concat"):
            concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=-1)

    def test_non_finite_output_names_op(self):
        with pytest.raises(NonFiniteError, match="exp"):
            Tensor(np.array([1000.0])).exp()

    def test_log_of_non_positive(self):
        with pytest.raises(NonFiniteError, match="log"):
            Tensor(np.array([0.0, 1.0])).log()

    def test_gather_out_of_range(self):
        with pytest.raises(IndexError):
            gather(Tensor(np.zeros((3, 2))), np.array([3]))

    def test_cross_entropy_bad_target(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((2, 2))), np.array([0, 2]))

    def test_layer_norm_shape_error(self):
        with pytest.raises(ShapeError, match="layer_norm"):
            layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


class TestNumericalStability:
    def test_log_softmax_large_logits(self):
        z = Tensor(np.array([[1000.0, -1000.0, 0.0], [-1000.0, -1000.0, -1000.0]]))
        out = log_softmax(z).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out[1], np.log(np.full(3, 1 / 3)))

    def test_cross_entropy_large_logits(self):
        loss = cross_entropy(Tensor(np.array([[1000.0, -1000.0]])), np.array([1]))
        assert loss.item() == pytest.approx(2000.0)

    @given(st.integers(0, 10_000))
    def test_softmax_rows_sum_to_one(self, seed):
        z = np.random.default_rng(seed).uniform(-1e3, 1e3, (4, 5))
        np.testing.assert_allclose(softmax(Tensor(z)).data.sum(axis=-1), 1.0, atol=1e-12)


# Every differentiable op, checked against central differences on small tensors.
OPS = {
    "add": (lambda a, b: a + b, [(3, 4), (3, 4)], False),
    "add_broadcast": (lambda a, b: a + b, [(3, 4), (4,)], False),
    "sub": (lambda a, b: a - b, [(2, 3), (2, 3)], False),
    "mul": (lambda a, b: a * b, [(3, 4), (3, 4)], False),
    "mul_broadcast": (lambda a, b: a * b, [(2, 3, 4), (3, 1)], False),
    "scale": (lambda a: a * 2.5, [(3, 3)], False),
    "neg": (lambda a: -a, [(2, 2)], False),
    "div_scalar": (lambda a: a / 4.0, [(2, 2)], False),
    "matmul": (lambda a, b: a @ b, [(3, 4), (4, 2)], False),
    "matmul_batched": (lambda a, b: a @ b, [(2, 3, 4), (4, 2)], False),
    "reshape": (lambda a: a.reshape(4, 3), [(3, 4)], False),
    "transpose": (lambda a: a.transpose(1, 0, 2), [(2, 3, 2)], False),
    "getitem_slice": (lambda a: a[:, 1:3], [(3, 4)], False),
    "getitem_fancy": (lambda a: a[np.array([0, 2, 0])], [(3, 4)], False),
    "sum": (lambda a: a.sum(axis=0), [(3, 4)], False),
    "sum_all": (lambda a: a.sum(), [(3, 4)], False),
    "mean": (lambda a: a.mean(axis=1), [(3, 4)], False),
    "max": (lambda a: a.max(axis=-1)[0], [(3, 4)], False),
    "relu": (lambda a: a.relu(), [(4, 4)], False),
    "gelu": (lambda a: a.gelu(), [(4, 4)], False),
    "log": (lambda a: a.log(), [(3, 3)], True),
    "exp": (lambda a: a.exp(), [(3, 3)], False),
    "concat": (lambda a, b: concat([a, b], axis=-1), [(2, 3), (2, 2)], False),
    "concat_axis1": (lambda a, b: concat([a, b], axis=1), [(2, 1, 3), (2, 2, 3)], False),
    "gather": (lambda t: gather(t, np.array([1, 0, 1, 3])), [(4, 3)], False),
    "where": (lambda a, b: where(np.array([[True, False, True]]), a, b), [(2, 3), (3,)], False),
    "broadcast_to": (lambda a: broadcast_to(a, (3, 2, 4)), [(1, 1, 4)], False),
    "layer_norm": (lambda x, s, b: layer_norm(x, s, b), [(3, 4), (4,), (4,)], False),
    "softmax": (lambda a: softmax(a), [(3, 4)], False),
    "log_softmax": (lambda a: log_softmax(a), [(3, 4)], False),
    "cross_entropy": (lambda a: cross_entropy(a, np.array([0, 2, 1])), [(3, 3)], False),
    "cross_entropy_weighted": (
        lambda a: cross_entropy(a, np.array([1, 0, 1, 1]), weights=np.array([1.0, 0.0, 1.0, 0.5])),
        [(4, 2)], False),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradient_matches_finite_differences(name):
    build, shapes, positive = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for err in check_op(build, shapes, rng, positive=positive):
        assert err < TOL, f"{name}: relative error {err:.2e}"


def test_dropout_gradient_with_fixed_draw():
    def build(a):
        return dropout(a, 0.3, np.random.default_rng(5))

    for err in check_op(build, [(4, 4)], np.random.default_rng(1)):
        assert err < TOL


class TestDropout:
    def test_identity_without_rng(self):
        x = Tensor(np.ones((3, 3)))
        assert dropout(x, 0.5, None) is x

    def test_inverted_scaling_preserves_mean(self):
        x = Tensor(np.ones((400, 500)))
        out = dropout(x, 0.2, np.random.default_rng(0)).data
        assert set(np.unique(out)) <= {0.0, 1.25}
        assert out.mean() == pytest.approx(1.0, abs=0.01)


class TestBackward:
    def test_sum_gives_ones(self):
        w = Tensor(np.random.default_rng(0).standard_normal((3, 2)), requires_grad=True)
        g = backward(w.sum(), {"w": w})
        np.testing.assert_array_equal(g["w"], np.ones((3, 2)))

    def test_unreached_parameter_gets_zero_gradient(self):
        w = Tensor(np.ones(3), requires_grad=True)
        v = Tensor(np.ones((2, 2)), requires_grad=True)
        g = backward((w * 2.0).sum(), {"w": w, "v": v})
        np.testing.assert_array_equal(g["v"], np.zeros((2, 2)))

    def test_non_scalar_loss(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(w * 2.0, {"w": w})

    def test_cross_entropy_2x2_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        errs = check_op(lambda z: cross_entropy(z, np.array([1, 0])), [(2, 2)], rng)
        assert errs[0] < TOL

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = x * x
        g = backward((y + y).sum(), {"x": x})
        np.testing.assert_allclose(g["x"], 4 * x.data)

    def test_nan_gradient_names_node(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True, name="x")
        y = x * 2.0
        y._backward = lambda g: x._accumulate(np.full(2, np.nan))
        with pytest.raises(NonFiniteError, match="x"):
            backward(y.sum(), {"x": x})

    def test_backward_is_deterministic(self):
        def run():
            rng = np.random.default_rng(9)
            w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
            x = Tensor(rng.standard_normal((5, 4)))
            loss = cross_entropy(layer_norm(x @ w, Tensor(np.ones(3)), Tensor(np.zeros(3))), np.array([0, 1, 2, 0, 1]))
            return backward(loss, {"w": w})["w"]

        np.testing.assert_array_equal(run(), run())

    def test_each_node_visited_once(self):
        calls = []
        x = Tensor(np.ones(2), requires_grad=True)
        y = x * 3.0
        inner = y._backward
        y._backward = lambda g: (calls.append(1), inner(g))
        backward((y + y * 2.0).sum(), {"x": x})
        assert len(calls) == 1


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        opt = Adam(lr=0.1)
        opt.step(p, {"w": np.zeros(2)})
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])

    def test_first_step_by_hand(self):
        p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
        opt = Adam(lr=0.1)
        opt.step(p, {"w": np.array([1.0])})
        # m_hat = 1, v_hat = 1 after bias correction.
        assert p["w"].data[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-15)
        assert opt.t == 1

    def test_identical_params_stay_identical(self):
        rng = np.random.default_rng(0)
        p = {"a": Tensor(np.ones(3), requires_grad=True), "b": Tensor(np.ones(3), requires_grad=True)}
        opt = Adam(lr=0.01)
        for _ in range(10):
            g = rng.standard_normal(3)
            opt.step(p, {"a": g, "b": g.copy()})
        np.testing.assert_array_equal(p["a"].data, p["b"].data)

    def test_shape_mismatch(self):
        p = {"w": Tensor(np.ones(3), requires_grad=True)}
        with pytest.raises(ShapeError):
            Adam().step(p, {"w": np.ones(4)})

    def test_step_counter_increases(self):
        p = {"w": Tensor(np.ones(1), requires_grad=True)}
        opt = Adam()
        for k in range(1, 4):
            opt.step(p, {"w": np.ones(1)})
            assert opt.t == k

    def test_lr_must_be_positive(self):
        with pytest.raises(ValueError):
            Adam(lr=0.0)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_random_small_matmul_gradients(n, k, seed):
    rng = np.random.default_rng(seed)
    for err in check_op(lambda a, b: a @ b, [(n, k), (k, 3)], rng):
        assert err < TOL


@given(st.integers(1, 4), st.integers(2, 4), st.integers(0, 2**31 - 1))
def test_random_small_layer_norm_gradients(n, d, seed):
    rng = np.random.default_rng(seed)
    for err in check_op(lambda x, s, b: layer_norm(x, s, b), [(n, d), (d,), (d,)], rng):
        assert err < TOL
