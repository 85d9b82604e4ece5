import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sanpool import tensor as T
from sanpool.aggregation import (
    Conv1x1,
    FeatureSet,
    SanLayer,
    attach_positions,
    conv1x1,
    flatten,
    flatten_batch,
    pool,
    power_max_approx,
    san_aggregate,
)
from sanpool.errors import ContractError, DimensionError, DomainError
from sanpool.gradcheck import finite_diff_gradient, relative_error
from sanpool.tensor import Tensor


def layer(V, b, activation="relu"):
    return SanLayer(Tensor(V, requires_grad=True), Tensor(b, requires_grad=True), activation)


def random_layer(rng, k, m, activation="relu"):
    return layer(rng.standard_normal((m, k)), rng.standard_normal(m), activation)


class TestSanAggregate:
    L = staticmethod(lambda: layer([[1.0, 1.0], [-1.0, 0.0]], [0.0, 1.0]))

    def test_hand_example(self):
        out = san_aggregate(FeatureSet([[1, 0], [0, 2]]), self.L())
        np.testing.assert_array_equal(out.data, [3.0, 1.0])

    def test_rows_swapped(self):
        out = san_aggregate(FeatureSet([[0, 2], [1, 0]]), self.L())
        np.testing.assert_array_equal(out.data, [3.0, 1.0])

    def test_zero_input_zero_bias(self, rng):
        L = layer(rng.standard_normal((5, 2)), np.zeros(5))
        np.testing.assert_array_equal(san_aggregate(FeatureSet([[0, 0]]), L).data, np.zeros(5))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            san_aggregate(FeatureSet([[1, 2, 3]]), self.L())

    @pytest.mark.parametrize("n", [1, 2, 7, 64])
    def test_output_dim_is_M(self, rng, n):
        L = SanLayer.init(3, 11, rng=rng)
        assert san_aggregate(FeatureSet(rng.standard_normal((n, 3))), L).shape == (11,)

    def test_init_bounds(self):
        L = SanLayer.init(10, 6, rng=0)
        limit = math.sqrt(6.0 / 16)
        assert np.all(np.abs(L.V.data) <= limit)
        assert np.all(L.b.data == 0)

    def test_matches_loop_oracle(self, rng):
        X = rng.standard_normal((9, 4))
        V, b = rng.standard_normal((6, 4)), rng.standard_normal(6)
        expect = [sum(max(0.0, float(V[m] @ x + b[m])) for x in X) for m in range(6)]
        np.testing.assert_allclose(san_aggregate(FeatureSet(X), layer(V, b)).data, expect,
                                   rtol=1e-12)

    @pytest.mark.parametrize("act", ["relu", "tanh", "sigmoid"])
    def test_gradients(self, act):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 20:
            X = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
            L = random_layer(rng, 3, 4, act)
            if np.min(np.abs(L.preactivation(X).data)) < 1e-3:
                continue
            w = Tensor(rng.standard_normal((4, 1)))

            def loss(_):
                return T.reduce_sum(T.matmul(T.reshape(san_aggregate(X, L), (1, 4)), w))

            T.backward(loss(None))
            for p in (L.V, L.b, X):
                assert relative_error(p.grad, finite_diff_gradient(loss, p)) < 1e-4
            checked += 1


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.integers(1, 32), st.integers(0, 2**32 - 1))
def test_permutation_invariance(n, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, k))
    perm = rng.permutation(n)
    L = random_layer(rng, k, 8)
    a, b = FeatureSet(X), FeatureSet(X[perm])
    np.testing.assert_allclose(san_aggregate(a, L).data, san_aggregate(b, L).data,
                               rtol=0, atol=1e-9)
    for kind in ("max", "avg", "sum"):
        np.testing.assert_allclose(pool(a, kind).data, pool(b, kind).data, rtol=0, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_appending_rows_never_decreases_relu_san(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 3))
    L = random_layer(rng, 3, 8)
    before = san_aggregate(FeatureSet(X), L).data
    after = san_aggregate(FeatureSet(np.vstack([X, rng.standard_normal((1, 3))])), L).data
    assert np.all(after >= before - 1e-12 * (1 + np.abs(before)))


class TestPool:
    S = FeatureSet([[1, 5], [3, 2]])

    def test_max(self):
        np.testing.assert_array_equal(pool(self.S, "max").data, [3, 5])

    def test_avg(self):
        np.testing.assert_array_equal(pool(self.S, "avg").data, [2, 3.5])

    def test_sum(self):
        np.testing.assert_array_equal(pool(self.S, "sum").data, [4, 7])

    def test_unknown(self):
        with pytest.raises(ContractError):
            pool(self.S, "median")


class TestOrderSensitive:
    def test_flatten(self):
        np.testing.assert_array_equal(flatten(FeatureSet([[1, 2], [3, 4]])).data, [1, 2, 3, 4])

    def test_conv1x1(self):
        out = conv1x1(FeatureSet([[1, 2], [3, 4]]), [1, 1], 0.0)
        np.testing.assert_array_equal(out.data, [3, 7])

    def test_conv1x1_is_order_sensitive(self):
        out = conv1x1(FeatureSet([[3, 4], [1, 2]]), [1, 1], 0.0)
        np.testing.assert_array_equal(out.data, [7, 3])

    def test_variable_cardinality_names_sample(self):
        rows = Tensor(np.zeros((13, 2)))
        with pytest.raises(ContractError, match="sample 1 has 9"):
            flatten_batch(rows, [0, 4])

    def test_conv1x1_weight_length(self):
        with pytest.raises(DimensionError):
            conv1x1(FeatureSet([[1, 2]]), [1, 1, 1])


class TestPositions:
    def test_normalized_index(self):
        out = attach_positions(FeatureSet(np.zeros((3, 1))), "normalized-index")
        np.testing.assert_array_equal(out.elements[:, -1], [0, 0.5, 1])

    def test_single_element_index(self):
        out = attach_positions(FeatureSet([[4.0]]), "normalized-index")
        np.testing.assert_array_equal(out.elements, [[4.0, 0.0]])

    def test_normalized_2d(self):
        out = attach_positions(FeatureSet(np.zeros((4, 1)), source_shape=(2, 2)), "normalized-2d")
        np.testing.assert_array_equal(out.elements[:, 1:], [[0, 0], [0, 1], [1, 0], [1, 1]])

    def test_normalized_2d_needs_shape(self):
        with pytest.raises(ContractError):
            attach_positions(FeatureSet(np.zeros((4, 1))), "normalized-2d")

    def test_sinusoidal_first_row(self):
        out = attach_positions(FeatureSet(np.zeros((3, 1))), "sinusoidal", d_pos=2)
        np.testing.assert_array_equal(out.elements[0, 1:], [0.0, 1.0])

    def test_sinusoidal_interleaving(self):
        out = attach_positions(FeatureSet(np.zeros((5, 1))), "sinusoidal", d_pos=4)
        i = 3
        expect = [math.sin(i), math.cos(i), math.sin(i / 100.0), math.cos(i / 100.0)]
        np.testing.assert_allclose(out.elements[i, 1:], expect, rtol=1e-14)


class TestFeatureSet:
    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            FeatureSet(np.zeros((0, 2)))

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            FeatureSet([[np.inf]])


class TestPowerMax:
    def test_power_example(self):
        # oracle: 1025 ** (1/10) at 30 digits
        mpmath.mp.dps = 30
        expect = float(mpmath.mpf(1025) ** (mpmath.mpf(1) / 10))
        assert power_max_approx([1, 2], 10, "power") == pytest.approx(expect, rel=1e-14)
        assert power_max_approx([1, 2], 10, "power") == pytest.approx(2.000195, abs=1e-6)

    def test_lse_example(self):
        mpmath.mp.dps = 30
        expect = float(mpmath.log(1 + mpmath.e ** 10) / 10)
        assert power_max_approx([0, 1], 10, "log-sum-exp") == pytest.approx(expect, rel=1e-14)
        assert expect == pytest.approx(1.0000045, abs=1e-7)

    @pytest.mark.parametrize("p", [1, 3, 1000])
    def test_singleton(self, p):
        assert power_max_approx([5.0], p, "power") == 5.0
        assert power_max_approx([5.0], p, "log-sum-exp") == 5.0

    def test_domain(self):
        with pytest.raises(DomainError):
            power_max_approx([0.0, 1.0], 2, "power")
        with pytest.raises(DomainError):
            power_max_approx([1.0], 0.5)

    def test_lse_no_overflow(self):
        assert power_max_approx([800.0, 799.0], 10, "log-sum-exp") == pytest.approx(
            800.0 + math.log1p(math.exp(-10)) / 10)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.01, 100), min_size=1, max_size=30))
    def test_sandwich_and_monotone(self, xs):
        m, n = max(xs), len(xs)
        prev = np.inf
        for p in (1, 2, 5, 10, 50, 200):
            r = power_max_approx(xs, p, "power")
            assert m * (1 - 1e-12) <= r <= m * n ** (1.0 / p) * (1 + 1e-12)
            err = r - m
            assert err <= prev + 1e-12 * m
            prev = err
            s = power_max_approx(xs, p, "log-sum-exp")
            assert m - 1e-9 <= s <= m + math.log(n) / p + 1e-9
