import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sanpool.errors import ContractError
from sanpool.theory import (
    embed_sets,
    expand_multiset,
    injectivity_check,
    maxlimit_bound,
    maxlimit_convergence_check,
    random_relu_neurons,
    recover_1d_set,
    relu_profile,
    subsets_universe,
    uniform_grid,
)


class TestProfile:
    def test_two_points(self):
        r = relu_profile([-1, 1], 1.0, [-2, 0, 2])
        np.testing.assert_array_equal(r.values, [0, 1, 4])

    def test_single_zero(self):
        np.testing.assert_array_equal(relu_profile([0], 1.0, [-1, 0, 1]).values, [0, 0, 1])

    def test_zero_direction_hides_the_set(self):
        grid = np.linspace(-3, 3, 13)
        np.testing.assert_array_equal(relu_profile([5], 0.0, grid).values, np.maximum(grid, 0))

    def test_grid_must_ascend(self):
        with pytest.raises(ContractError):
            relu_profile([0], 1.0, [1, 0])

    @settings(max_examples=500, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(0.1, 3))
    def test_nonnegative_monotone_convex(self, s, v):
        r = relu_profile(s, v, np.linspace(-20, 20, 161))
        assert np.all(r.values >= 0)
        assert np.all(np.diff(r.values) >= -1e-9)
        assert np.all(np.diff(r.values, 2) >= -1e-9)


class TestRecover:
    def _recover(self, s, h, v=1.0, lo=-6.0, hi=6.0):
        grid = uniform_grid(lo, hi, h)
        return recover_1d_set(relu_profile(s, v, grid), h)

    def test_singleton(self):
        rec = self._recover([0.0], 0.5)
        assert len(rec) == 1 and abs(rec[0][0]) <= 0.5 and rec[0][1] == 1

    def test_pair(self):
        rec = self._recover([-1.0, 1.0], 0.25)
        assert [m for _, m in rec] == [1, 1]
        assert abs(rec[0][0] + 1) <= 0.25 and abs(rec[1][0] - 1) <= 0.25

    def test_multiplicity(self):
        rec = self._recover([2.0, 2.0], 0.25)
        assert len(rec) == 1 and abs(rec[0][0] - 2) <= 0.25 and rec[0][1] == 2

    def test_off_grid_elements(self):
        s = [-1.73, 0.33, 0.38, 2.9]
        est = expand_multiset(self._recover(s, 0.1))
        assert est.size == 4
        assert np.all(np.abs(np.sort(est) - np.sort(s)) <= 0.1)

    def test_negative_direction(self):
        rec = self._recover([1.5, -0.5], 0.25, v=-2.0, lo=-8, hi=8)
        np.testing.assert_allclose([x for x, _ in rec], [-0.5, 1.5], atol=1e-12)

    def test_reprofile_round_trip(self):
        rng = np.random.default_rng(0)
        h = 0.1
        grid = uniform_grid(-6, 6, h)
        for _ in range(50):
            s = rng.uniform(-4, 4, rng.integers(1, 8))
            est = expand_multiset(recover_1d_set(relu_profile(s, 1.0, grid), h))
            diff = relu_profile(est, 1.0, grid).values - relu_profile(s, 1.0, grid).values
            assert np.max(np.abs(diff)) <= 2 * h * len(s)

    def test_non_uniform_grid(self):
        r = relu_profile([0], 1.0, [-1, -0.5, 0, 1])
        with pytest.raises(ContractError):
            recover_1d_set(r, 0.5)

    def test_zero_direction(self):
        with pytest.raises(ContractError):
            recover_1d_set(relu_profile([0], 0.0, [-1, 0, 1]), 1.0)


def _brute_force_collisions(universe, V, b, threshold=1e-9):
    """Pairwise oracle with explicit loops over sets, elements and neurons."""
    emb = []
    for X in universe:
        e = []
        for m in range(V.shape[0]):
            e.append(sum(max(0.0, float(np.dot(V[m], x)) + b[m]) for x in X))
        emb.append(e)
    pairs = collisions = 0
    for i, j in itertools.combinations(range(len(emb)), 2):
        d = math.sqrt(sum((p - q) ** 2 for p, q in zip(emb[i], emb[j])))
        pairs += 1
        collisions += d < threshold
    return pairs, collisions


class TestInjectivity:
    def test_two_singletons(self):
        emb = embed_sets([np.array([[0.0]]), np.array([[1.0]])], np.array([[1.0]]),
                         np.array([0.0]))
        np.testing.assert_array_equal(emb[:, 0], [0.0, 1.0])

    def test_pairs_universe_M64(self):
        universe = subsets_universe(10, 2)
        assert len(universe) == 45
        r = injectivity_check(universe, 64, seed=0)
        V, b = random_relu_neurons(64, 1, 9.0, 0)
        assert (r.pairs_tested, r.collisions) == _brute_force_collisions(universe, V, b) == (990, 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_collisions_non_increasing_in_M(self, seed):
        universe = subsets_universe(10, 2)
        counts = [injectivity_check(universe, M, seed).collisions for M in (4, 16, 64)]
        assert counts == sorted(counts, reverse=True)
        assert counts[-1] == 0

    def test_neuron_prefix_property(self):
        V4, b4 = random_relu_neurons(4, 3, 2.0, 7)
        V9, b9 = random_relu_neurons(9, 3, 2.0, 7)
        np.testing.assert_array_equal(V4, V9[:4])
        np.testing.assert_array_equal(b4, b9[:4])

    def test_permutation_gives_identical_embedding(self):
        X = np.array([[3.0], [8.0], [1.0]])
        V, b = random_relu_neurons(16, 1, 9.0, 1)
        e = embed_sets([X, X[::-1]], V, b)
        assert np.linalg.norm(e[0] - e[1]) == 0.0

    def test_report_invariants(self):
        r = injectivity_check(subsets_universe(6, 3), 4, seed=3)
        assert 0 <= r.collisions <= r.pairs_tested == 190
        assert r.min_pair_distance >= 0


class TestMaxLimit:
    def test_ten_values_p256(self):
        values = np.arange(1, 11)
        err = maxlimit_convergence_check(values, [256])[0]
        bound = math.exp(math.log(10) / 256) - 1
        assert bound == pytest.approx(0.00903, abs=1e-5)
        assert err / 10 <= bound

    def test_two_values_strictly_decreasing(self):
        mpmath.mp.dps = 40
        ps = [2, 10, 50]
        errs = maxlimit_convergence_check([1, 2], ps)
        oracle = [float((1 + mpmath.mpf(2) ** p) ** (mpmath.mpf(1) / p) - 2) for p in ps]
        np.testing.assert_allclose(errs, oracle, rtol=1e-9)
        assert errs[0] > errs[1] > errs[2]

    @pytest.mark.parametrize("mode", ["power", "log-sum-exp"])
    def test_singleton(self, mode):
        assert np.all(maxlimit_convergence_check([7.0], [1, 5, 100], mode) == 0)

    def test_schedule_must_ascend(self):
        with pytest.raises(ContractError):
            maxlimit_convergence_check([1, 2], [10, 2])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.1, 50), min_size=1, max_size=20))
    def test_bounds_and_monotone(self, xs):
        ps = [1, 2, 4, 16, 64, 256]
        for mode in ("power", "log-sum-exp"):
            errs = maxlimit_convergence_check(xs, ps, mode)
            assert np.all(np.diff(errs) <= 1e-9 * max(xs))
            for p, e in zip(ps, errs):
                assert e <= maxlimit_bound(xs, p, mode) + 1e-9 * max(xs)


def test_stable_error_agrees_with_naive_difference():
    from sanpool.aggregation import power_max_approx
    from sanpool.theory import smooth_max_error
    rng = np.random.default_rng(2)
    for _ in range(50):
        xs = rng.uniform(0.5, 5, rng.integers(2, 10))
        for mode in ("power", "log-sum-exp"):
            naive = power_max_approx(xs, 3, mode) - xs.max()
            assert smooth_max_error(xs, 3, mode) == pytest.approx(naive, rel=1e-10)
