"""Unit tests for the tensor graph: frozen oracle values, backward rules
against the finite-difference checker, and the stability properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnalign import numerics as nm
from fnalign.errors import DegenerateInputError, DimensionError, NumericError


def rand(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


class TestAffine:
    def test_basis_vector_selection(self):
        y = nm.affine(nm.param([1.0, 0.0]), nm.param([[2.0, 3.0]]), nm.param([0.5]))
        assert y.value.tolist() == [2.5]

    def test_zero_input_returns_bias(self):
        W, b = rand((3, 4), 1), rand(3, 2)
        y = nm.affine(nm.param(np.zeros(4)), nm.param(W), nm.param(b))
        assert np.array_equal(y.value, b)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(7)
        W, x, b = rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=3)
        expected = [sum(W[i, j] * x[j] for j in range(4)) + b[i] for i in range(3)]
        y = nm.affine(nm.param(x), nm.param(W), nm.param(b))
        assert np.allclose(y.value, expected, atol=1e-12, rtol=0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4,\)"):
            nm.affine(nm.param(np.zeros(4)), nm.param(np.zeros((2, 3))), nm.param(np.zeros(2)))

    def test_backward_rules(self):
        rng = np.random.default_rng(3)
        x, W, b = nm.param(rng.normal(size=4)), nm.param(rng.normal(size=(3, 4))), nm.param(rng.normal(size=3))
        u = rng.normal(size=3)  # loss = u . (Wx + b)
        loss = nm.dot(nm.constant(u), nm.affine(x, W, b))
        nm.backward(loss)
        assert np.allclose(x.grad, W.value.T @ u)
        assert np.allclose(W.grad, np.outer(u, x.value))
        assert np.allclose(b.grad, u)


class TestSoftmax:
    def test_symmetry(self):
        y = nm.softmax(nm.param([0.0, 0.0, 0.0]))
        assert np.allclose(y.value, 1.0 / 3.0, atol=1e-15)

    def test_analytic_two_point(self):
        y = nm.softmax(nm.param([math.log(2.0), 0.0]))
        assert np.allclose(y.value, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)

    def test_direct_formula_oracle(self):
        # frozen from exp(v_i) / sum_j exp(v_j) at v = [1, 2, 3]
        y = nm.softmax(nm.param([1.0, 2.0, 3.0]))
        frozen = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219]
        assert np.allclose(y.value, frozen, atol=1e-15, rtol=0)

    def test_empty_input_rejected(self):
        with pytest.raises(DimensionError):
            nm.softmax(nm.param(np.zeros(0)))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(min_value=-100.0, max_value=100.0), min_size=1, max_size=12))
    def test_sums_to_one_and_nonnegative(self, values):
        y = nm.softmax(nm.param(values)).value
        assert abs(float(y.sum()) - 1.0) <= 1e-12
        assert (y >= 0.0).all()

    def test_deterministic(self):
        v = rand(9, 11)
        a = nm.softmax(nm.param(v)).value
        b = nm.softmax(nm.param(v)).value
        assert np.array_equal(a, b)


class TestSigmoid:
    def test_symmetry_point(self):
        assert nm.sigmoid(nm.param(0.0)).item() == 0.5

    def test_saturation(self):
        assert abs(nm.sigmoid(nm.param(50.0)).item() - 1.0) <= 1e-12
        assert np.isfinite(nm.sigmoid(nm.param(-1000.0)).item())

    def test_direct_formula(self):
        assert abs(nm.sigmoid(nm.param(1.5)).item() - 0.8175744761936437) <= 1e-15


class TestCosine:
    def test_identity(self):
        v = rand(5, 0)
        assert abs(nm.cosine(nm.param(v), nm.param(v.copy())).item() - 1.0) <= 1e-12

    def test_orthogonal(self):
        assert nm.cosine(nm.param([1.0, 0.0]), nm.param([0.0, 1.0])).item() == 0.0

    def test_term_by_term_oracle(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=6), rng.normal(size=6)
        num = sum(float(a[i]) * float(b[i]) for i in range(6))
        na = math.sqrt(sum(float(x) * float(x) for x in a))
        nb = math.sqrt(sum(float(x) * float(x) for x in b))
        got = nm.cosine(nm.param(a), nm.param(b)).item()
        assert abs(got - num / (na * nb)) <= 1e-12
        assert -1.0 <= got <= 1.0

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateInputError):
            nm.cosine(nm.param(np.zeros(3)), nm.param(np.ones(3)))


class TestFiniteDifferenceCheck:
    def test_quadratic(self):
        theta = nm.param(rand(6, 2))

        def loss_fn(p):
            t = p["theta"]
            return nm.scale(nm.dot(t, t), 0.5)

        err = nm.finite_difference_check(loss_fn, {"theta": theta}, eps=1e-5, sample_count=60)
        assert err < 1e-7
        assert np.allclose(theta.grad, theta.value)

    def test_constant_loss(self):
        theta = nm.param(rand(4, 3))

        def loss_fn(p):
            return nm.constant(2.0)

        err = nm.finite_difference_check(loss_fn, {"theta": theta}, eps=1e-5, sample_count=20)
        assert err == 0.0

    def test_non_finite_loss_raises(self):
        theta = nm.param([1.0])

        def loss_fn(p):
            return nm.constant(float("inf"))

        with pytest.raises(NumericError):
            nm.finite_difference_check(loss_fn, {"theta": theta}, sample_count=5)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            nm.finite_difference_check(lambda p: nm.constant(0.0), {"x": nm.param([1.0])}, eps=0.0)


class TestBackwardRules:
    """Every exported differentiable op passes the central-difference oracle."""

    @pytest.mark.parametrize("name,builder", [
        ("tanh", lambda p: nm.vsum(nm.tanh(p["x"]))),
        ("sigmoid", lambda p: nm.vsum(nm.sigmoid(p["x"]))),
        ("relu_smooth", lambda p: nm.vsum(nm.relu(nm.add_const(p["x"], 0.3)))),
        ("square", lambda p: nm.vsum(nm.square(p["x"]))),
        ("softmax", lambda p: nm.dot(nm.constant(rand(5, 9)), nm.softmax(p["x"]))),
        ("log", lambda p: nm.vsum(nm.log(nm.add_const(nm.square(p["x"]), 1.5)))),
        ("mul", lambda p: nm.vsum(nm.mul(p["x"], nm.square(p["x"])))),
        ("dot_self", lambda p: nm.dot(p["x"], p["x"])),
        ("clamp", lambda p: nm.vsum(nm.clamp(p["x"], -0.5, 0.5))),
    ])
    def test_elementwise_ops(self, name, builder):
        x = nm.param(rand(5, 17) * 0.9)
        err = nm.finite_difference_check(builder, {"x": x}, eps=1e-5, sample_count=50, seed=2)
        assert err < 1e-4, f"{name}: {err}"

    def test_matrix_ops(self):
        rng = np.random.default_rng(23)
        A = nm.param(rng.normal(size=(4, 3)))
        B = nm.param(rng.normal(size=(3, 2)))
        v = nm.param(rng.normal(size=4))
        u = rng.normal(size=2)

        def loss_fn(p):
            prod = nm.matmul(nm.transpose(p["A"]), nm.stack([p["v"], nm.neg(p["v"]), p["v"], p["v"]]))
            out = nm.matmul(prod, nm.matmul(p["A"], p["B"]))  # (3, 4) @ (4, 2)
            return nm.dot(nm.row(out, 1), nm.constant(u))

        err = nm.finite_difference_check(loss_fn, {"A": A, "B": B, "v": v},
                                         eps=1e-5, sample_count=80, seed=3)
        assert err < 1e-4

    def test_gather_concat_pick(self):
        rng = np.random.default_rng(29)
        T = nm.param(rng.normal(size=(6, 3)))
        idx = np.array([0, 2, 2, 5])

        def loss_fn(p):
            rows = nm.gather_rows(p["T"], idx)
            flat = nm.concat([nm.row(rows, 0), nm.row(rows, 1), nm.row(rows, 2), nm.row(rows, 3)])
            return nm.pick(nm.square(flat), 4)

        err = nm.finite_difference_check(loss_fn, {"T": T}, eps=1e-5, sample_count=40, seed=4)
        assert err < 1e-4

    def test_unfold_hconcat(self):
        rng = np.random.default_rng(31)
        H = nm.param(rng.normal(size=(5, 3)))
        u = rng.normal(size=9)

        def loss_fn(p):
            X = nm.unfold(p["H"], 3)             # (5, 9)
            Y = nm.hconcat([X, nm.unfold(p["H"], 2), p["H"]])
            return nm.dot(nm.row(Y, 2), nm.constant(np.concatenate([u, rng.normal(size=0), np.ones(9)])))

        err = nm.finite_difference_check(loss_fn, {"H": H}, eps=1e-5, sample_count=40, seed=5)
        assert err < 1e-4

    def test_cosine_gradient(self):
        rng = np.random.default_rng(37)
        a = nm.param(rng.normal(size=5))
        b = nm.param(rng.normal(size=5))

        def loss_fn(p):
            return nm.square(nm.cosine(p["a"], p["b"]))

        err = nm.finite_difference_check(loss_fn, {"a": a, "b": b}, eps=1e-5,
                                         sample_count=40, seed=6)
        assert err < 1e-4


class TestGrlAndStopGradient:
    def test_grl_forward_identity_bit_exact(self):
        x = nm.param(rand(7, 41))
        out = nm.grl(x)
        assert np.array_equal(out.value, x.value)

    def test_grl_negates_gradient(self):
        x = nm.param(rand(5, 43))
        y = nm.grl(x)
        loss = nm.scale(nm.dot(y, y), 0.5)  # grad wrt y is y == x
        nm.backward(loss)
        assert np.allclose(x.grad, -x.value, atol=0, rtol=0)

    def test_stop_gradient_blocks_flow(self):
        x = nm.param(rand(4, 47))
        loss = nm.dot(nm.stop_gradient(x), nm.constant(np.ones(4)))
        nm.backward(loss)
        assert np.array_equal(x.grad, np.zeros(4))


class TestDropout:
    def test_inverted_scaling_and_determinism(self):
        x = nm.param(np.ones(1000))
        y1 = nm.dropout(x, 0.5, np.random.default_rng(0)).value
        y2 = nm.dropout(x, 0.5, np.random.default_rng(0)).value
        assert np.array_equal(y1, y2)
        assert set(np.unique(y1)) == {0.0, 2.0}

    def test_rate_zero_is_identity(self):
        x = nm.param(rand(5, 53))
        assert nm.dropout(x, 0.0, np.random.default_rng(0)) is x


class TestDeterminism:
    def test_bit_identical_recompute(self):
        v = rand(64, 59)
        W = rand((8, 64), 61)

        def run():
            x = nm.param(v)
            y = nm.tanh(nm.matmul(nm.param(W), x))
            return nm.softmax(y).value.tobytes()

        assert run() == run()
