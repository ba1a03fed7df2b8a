"""Exact and sampled Shapley values: axioms, equivalence, determinism.

The reference implementations here are deliberately independent of the
library: exact values are cross-checked by averaging marginals over all n!
permutations (straight itertools enumeration), and synthetic set functions
flow through the real masking machinery via a table-backed oracle that
decodes the coalition from the masked map.
"""

import itertools
import math

import numpy as np
import pytest

from shapcam.errors import OracleError, ShapeError
from shapcam.model import forward_head, toynet
from shapcam.shapley import (
    CHUNK,
    PermutationSample,
    SaliencyMap,
    ShapleyEstimate,
    draw_permutation_sample,
    exact_shapley,
    sample_shapley,
    shap_cam,
)
from shapcam.tensor import Tensor
from shapcam.worth import Coalition, InProcessOracle, make_game, worth


class TableOracle:
    """Scores a masked map by decoding which players kept their values."""

    picklable = True
    num_classes = 1

    def __init__(self, values, table):
        self.values = np.asarray(values, dtype=np.float64)
        self.table = np.asarray(table, dtype=np.float64)
        self.map_shape = (1, 1, len(self.values))

    def decode(self, feature_map):
        data = feature_map.array.reshape(-1)
        return sum(1 << p for p in range(data.size) if data[p] == self.values[p])

    def score(self, feature_map, target_class):
        return float(self.table[self.decode(feature_map)])

    def score_batch(self, maps, target_class):
        return [self.score(m, target_class) for m in maps]


def table_game(table, n):
    # player values are distinct and never equal their mean, so membership
    # decoding after mean-masking is unambiguous
    values = np.array([2.0 ** (p + 1) + 1.0 for p in range(n)])
    assert not np.isin(values.mean(), values)
    fm = Tensor.from_array(values.reshape(1, 1, n))
    return make_game(fm, 0, TableOracle(values, table))


def shapley_by_all_permutations(table, n):
    """Independent reference: average marginals over every permutation."""
    totals = np.zeros(n)
    for order in itertools.permutations(range(n)):
        mask = 0
        prev = table[0]
        for p in order:
            mask |= 1 << p
            cur = table[mask]
            totals[p] += cur - prev
            prev = cur
    return totals / math.factorial(n)


def random_table(n, seed):
    return np.random.default_rng(seed).uniform(0.0, 1.0, 1 << n)


@pytest.fixture(scope="module")
def toy_game():
    net = toynet()
    img = Tensor.from_array(np.random.default_rng(0).uniform(0, 1, (3, 12, 12)))
    return make_game(forward_head(net, img), 5, InProcessOracle(net))


# --- exact mode ---------------------------------------------------------------


def test_exact_two_player_worked_example():
    # f(0)=0, f({0})=1, f({1})=2, f({0,1})=4
    g = table_game([0.0, 1.0, 2.0, 4.0], 2)
    np.testing.assert_allclose(exact_shapley(g), [1.5, 2.5], atol=1e-12)


def test_exact_constant_game_is_all_zero():
    g = table_game(np.full(16, 0.37), 4)
    assert np.array_equal(exact_shapley(g), np.zeros(4))


def test_exact_symmetric_two_player_example():
    g = table_game([0.0, 1.0, 1.0, 2.0], 2)
    np.testing.assert_allclose(exact_shapley(g), [1.0, 1.0], atol=1e-12)


def test_exact_refuses_past_the_limit(toy_game):
    with pytest.raises(ValueError, match="sample_shapley"):
        exact_shapley(toy_game, exact_limit=8)


def test_efficiency_axiom():
    for seed in range(5):
        table = random_table(6, seed)
        g = table_game(table, 6)
        residual = exact_shapley(g).sum() - (table[-1] - table[0])
        assert abs(residual) <= 1e-9


def test_null_player_axiom():
    # player 2 of 4 never changes the worth: value must be exactly zero
    base = random_table(3, 11)
    table = np.empty(16)
    for mask in range(16):
        reduced = (mask & 0b0011) | ((mask & 0b1000) >> 1)
        table[mask] = base[reduced]
    g = table_game(table, 4)
    vals = exact_shapley(g)
    assert vals[2] == 0.0
    est = sample_shapley(g, m=64, seed=5)
    assert est.values[2] == 0.0


def test_symmetry_axiom():
    # worth depends on players 2,3 only through how many of them are present
    rng = np.random.default_rng(13)
    base = rng.uniform(0, 1, 4)
    table = np.empty(16)
    for mask in range(16):
        k = ((mask >> 2) & 1) + ((mask >> 3) & 1)
        table[mask] = base[mask & 0b0011] * (1.0 + 0.5 * k)
    g = table_game(table, 4)
    vals = exact_shapley(g)
    assert abs(vals[2] - vals[3]) <= 1e-9


def test_linearity_axiom():
    t1, t2 = random_table(4, 1), random_table(4, 2)
    a, b = 2.5, -0.75
    combined = a * t1 + b * t2
    lhs = exact_shapley(table_game(combined, 4))
    rhs = a * exact_shapley(table_game(t1, 4)) + b * exact_shapley(table_game(t2, 4))
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_subset_enumeration_equals_permutation_averaging(n):
    table = random_table(n, 100 + n)
    got = exact_shapley(table_game(table, n))
    want = shapley_by_all_permutations(table, n)
    np.testing.assert_allclose(got, want, atol=1e-9)


# --- sampling -----------------------------------------------------------------


def test_single_permutation_definition():
    # find a seed whose first drawn order is the identity, then the estimate
    # is exactly the chain of marginals along 0,1
    table = [0.0, 1.0, 2.0, 4.0]
    g = table_game(table, 2)
    seed = next(
        s for s in range(200)
        if draw_permutation_sample(g, s, 0).order == (0, 1)
    )
    est = sample_shapley(g, m=1, seed=seed)
    np.testing.assert_allclose(est.values, [table[0b01] - table[0], table[0b11] - table[0b01]], atol=0)


def test_telescoping_identity(toy_game):
    f_full = worth(toy_game, Coalition.full(9))
    f_empty = worth(toy_game, Coalition.empty(9))
    for m, seed in [(1, 3), (7, 0), (130, 1), (517, 99)]:
        est = sample_shapley(toy_game, m=m, seed=seed)
        assert abs(est.values.sum() - (f_full - f_empty)) <= 1e-12


def test_telescoping_identity_table_game():
    table = random_table(5, 21)
    g = table_game(table, 5)
    est = sample_shapley(g, m=300, seed=8)
    assert abs(est.values.sum() - (table[-1] - table[0])) <= 1e-12


def test_sampled_matches_exact_within_standard_errors(toy_game):
    exact = exact_shapley(toy_game)
    est = sample_shapley(toy_game, m=5000, seed=7)
    se = est.standard_error()
    inside = np.abs(est.values - exact) <= 3 * se
    assert inside.mean() >= 0.95


def test_sampling_is_deterministic_and_worker_independent(toy_game):
    a = sample_shapley(toy_game, m=CHUNK * 2 + 8, seed=42, workers=1)
    b = sample_shapley(toy_game, m=CHUNK * 2 + 8, seed=42, workers=2)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.m2, b.m2)
    c = sample_shapley(toy_game, m=CHUNK * 2 + 8, seed=42, workers=1)
    assert np.array_equal(a.values, c.values)


def test_different_seeds_differ(toy_game):
    a = sample_shapley(toy_game, m=32, seed=0)
    b = sample_shapley(toy_game, m=32, seed=1)
    assert not np.array_equal(a.values, b.values)


def test_estimator_consistency(toy_game):
    exact = exact_shapley(toy_game)
    maes = []
    for m in (100, 1000, 10000):
        errs = [
            np.abs(sample_shapley(toy_game, m=m, seed=s).values - exact).mean()
            for s in range(10)
        ]
        maes.append(np.mean(errs))
    assert maes[0] > maes[1] > maes[2]


def test_sampling_cost_is_m_times_n_plus_one():
    calls = {"maps": 0}

    class CountingOracle(TableOracle):
        def score_batch(self, maps, target_class):
            calls["maps"] += len(maps)
            return super().score_batch(maps, target_class)

    values = np.array([2.0 ** (p + 1) + 1.0 for p in range(4)])
    oracle = CountingOracle(values, random_table(4, 3))
    g = make_game(Tensor.from_array(values.reshape(1, 1, 4)), 0, oracle)
    m = 25
    sample_shapley(g, m=m, seed=0)
    assert calls["maps"] == m * (g.n_players + 1)


def test_sampling_propagates_oracle_failure_with_progress():
    class FailingOracle(TableOracle):
        def __init__(self, values, table):
            super().__init__(values, table)
            self.count = 0

        def score_batch(self, maps, target_class):
            self.count += len(maps)
            if self.count > 40:
                raise OracleError("backend fell over", index=3)
            return super().score_batch(maps, target_class)

    values = np.array([2.0 ** (p + 1) + 1.0 for p in range(4)])
    g = make_game(Tensor.from_array(values.reshape(1, 1, 4)), 0, FailingOracle(values, random_table(4, 5)))
    with pytest.raises(OracleError, match="aborted") as exc:
        sample_shapley(g, m=500, seed=0)
    assert exc.value.index == 3


def test_sample_shapley_validates_arguments(toy_game):
    with pytest.raises(ValueError):
        sample_shapley(toy_game, m=0, seed=0)
    with pytest.raises(ValueError):
        sample_shapley(toy_game, m=4, seed=-1)
    with pytest.raises(ValueError):
        sample_shapley(toy_game, m=4, seed=2**64)
    with pytest.raises(ValueError):
        sample_shapley(toy_game, m=4, seed=0, workers=0)


# --- estimate and sample containers --------------------------------------------


def test_standard_error_shrinks_with_m(toy_game):
    small = sample_shapley(toy_game, m=100, seed=0).standard_error().mean()
    large = sample_shapley(toy_game, m=4000, seed=0).standard_error().mean()
    assert large < small / 3  # roughly 1/sqrt(40)


def test_standard_error_needs_two_samples(toy_game):
    est = sample_shapley(toy_game, m=1, seed=0)
    with pytest.raises(ValueError):
        est.standard_error()


def test_permutation_sample_invariants(toy_game):
    sample = draw_permutation_sample(toy_game, seed=4, index=0)
    assert sorted(sample.order) == list(range(9))
    f_full = worth(toy_game, Coalition.full(9))
    f_empty = worth(toy_game, Coalition.empty(9))
    assert abs(sample.marginals.sum() - (f_full - f_empty)) <= 1e-12
    with pytest.raises(ShapeError):
        PermutationSample((0, 0, 1), np.zeros(3))
    with pytest.raises(ShapeError):
        PermutationSample((0, 1), np.zeros(3))


# --- saliency assembly ----------------------------------------------------------


def test_shap_cam_exact_grid_is_reshaped_exact_values(toy_game):
    net = toynet()
    img = Tensor.from_array(np.random.default_rng(0).uniform(0, 1, (3, 12, 12)))
    sal = shap_cam(net, img, 5, exact=True)
    assert sal.shape == (3, 3)
    assert sal.method == "shapcam"
    assert sal.meta["mode"] == "exact"
    np.testing.assert_array_equal(sal.grid.reshape(-1), exact_shapley(toy_game))


def test_shap_cam_constant_map_is_all_zero():
    net = toynet()
    fm = Tensor.from_array(np.full(net.feature_shape, 0.4))
    sal = shap_cam(InProcessOracle(net), fm, 2, m=16, seed=0)
    assert np.array_equal(sal.grid, np.zeros((3, 3)))
    sal_exact = shap_cam(InProcessOracle(net), fm, 2, exact=True)
    assert np.array_equal(sal_exact.grid, np.zeros((3, 3)))


def test_shap_cam_sampled_meta_and_determinism():
    net = toynet()
    img = Tensor.from_array(np.random.default_rng(1).uniform(0, 1, (3, 12, 12)))
    a = shap_cam(net, img, 0, m=50, seed=11)
    b = shap_cam(net, img, 0, m=50, seed=11)
    assert np.array_equal(a.grid, b.grid)
    assert a.meta["m"] == 50 and a.meta["seed"] == 11 and a.meta["mode"] == "sampled"
    assert a.meta["baseline"] == "per-channel"


def test_saliency_map_validation():
    with pytest.raises(ShapeError):
        SaliencyMap(np.zeros(4), "x", 0)
    with pytest.raises(ShapeError):
        SaliencyMap(np.array([[np.nan]]), "x", 0)
    sal = SaliencyMap(np.zeros((2, 2)), "x", 0)
    with pytest.raises(ValueError):
        sal.grid[0, 0] = 1.0
