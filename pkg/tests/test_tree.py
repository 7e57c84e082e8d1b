"""Identifiable tree construction, evaluation and the zero-mean constraint."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from anovatrees.dataset import prepare
from anovatrees.errors import DataError
from anovatrees.tree import (assign_cells, build_tree, evaluate,
                             evaluate_matrix, height_multipliers,
                             identifiability_residual, leverage,
                             max_abs_multiplier, tree_from_record,
                             tree_to_record)

from conftest import make_data, random_problem, random_tree


def problem_1234():
    """One column with values 1..4: grid (1.5, 2.5, 3.5), masses 1/4..3/4."""
    d = make_data(np.array([[1.0], [2.0], [3.0], [4.0]]), y=np.zeros(4))
    grid, marg = prepare(d)
    return d, grid, marg


class TestLeverage:
    def test_balanced(self):
        _, grid, marg = problem_1234()
        assert leverage(0, float(grid.values[0][1]), marg) == -1.0

    def test_three_quarters(self):
        _, grid, marg = problem_1234()
        assert leverage(0, float(grid.values[0][2]), marg) == -3.0

    def test_one_tenth(self):
        d = make_data(np.arange(10.0).reshape(-1, 1), y=np.zeros(10))
        grid, marg = prepare(d)
        assert leverage(0, float(grid.values[0][0]), marg) == -1.0 / 9.0

    def test_always_negative_and_bounded(self, rng):
        for _ in range(50):
            _, grid, marg = random_problem(rng, n=int(rng.integers(3, 40)), p=2)
            for j in grid.splittable():
                for s in grid.values[j]:
                    a = leverage(int(j), float(s), marg)
                    assert a < 0
                    assert abs(a) <= marg.n - 1


class TestHeightMultipliers:
    def test_product_table(self):
        # two columns: balanced split (leverage -1) and 3/4 split (-3)
        d = make_data(
            np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]]),
            y=np.zeros(4),
        )
        grid, marg = prepare(d)
        s = (float(grid.values[0][1]), float(grid.values[1][2]))
        table = height_multipliers((0, 1), s, marg)
        # bit 0 = right of column 0, bit 1 = right of column 1
        assert_array_equal(table, [1.0, -1.0, -3.0, 3.0])

    def test_single_balanced(self):
        _, grid, marg = problem_1234()
        table = height_multipliers((0,), (float(grid.values[0][1]),), marg)
        assert_array_equal(table, [1.0, -1.0])

    def test_free_cell_is_one(self, rng):
        for _ in range(30):
            _, grid, marg = random_problem(rng, n=20, p=5)
            t = random_tree(rng, grid, marg)
            assert t.multipliers[0] == 1.0


class TestEvaluate:
    def test_balanced_signs(self):
        d = make_data(np.array([[0.25], [0.75]]), y=np.zeros(2))
        grid, marg = prepare(d)
        t = build_tree((0,), (0.5,), 2.0, marg)
        assert evaluate(t, [0.3]) == 2.0
        assert evaluate(t, [0.7]) == -2.0

    def test_zero_height(self):
        d = make_data(np.array([[0.25], [0.75]]), y=np.zeros(2))
        _, marg = prepare(d)
        t = build_tree((0,), (0.5,), 0.0, marg)
        assert evaluate(t, [0.1]) == 0.0
        assert evaluate(t, [0.9]) == 0.0

    def test_boundary_goes_left(self):
        # the split rule is strict 'x - s > 0', so x == s lands left
        d = make_data(np.array([[0.25], [0.75]]), y=np.zeros(2))
        _, marg = prepare(d)
        t = build_tree((0,), (0.5,), 2.0, marg)
        assert evaluate(t, [0.5]) == 2.0

    def test_matches_cached_assignment_exactly(self, rng):
        for _ in range(30):
            data, grid, marg = random_problem(rng, n=30, p=4)
            t = random_tree(rng, grid, marg)
            cells = assign_cells(t, data)
            for i in range(data.n):
                assert evaluate(t, data.x[i]) == t.beta * cells.mult[i]
            assert_array_equal(evaluate_matrix(t, data.x),
                               t.beta * cells.mult)


class TestAssignCells:
    def test_balanced_multipliers(self):
        d, grid, marg = problem_1234()
        t = build_tree((0,), (float(grid.values[0][1]),), 1.5, marg)
        cells = assign_cells(t, d)
        assert_array_equal(cells.mult, [1.0, 1.0, -1.0, -1.0])
        assert_array_equal(cells.masks, [0, 0, 1, 1])

    def test_empirical_mean_zero_single_variable(self, rng):
        # For |S|=1 the axis constraint IS the joint row mean, so it
        # vanishes at the data points; for |S|>=2 only the per-axis
        # (product-measure) means vanish, covered by the residual tests.
        for _ in range(30):
            data, grid, marg = random_problem(rng, n=40, p=3)
            t = random_tree(rng, grid, marg, max_order=1)
            cells = assign_cells(t, data)
            assert abs(np.mean(t.beta * cells.mult)) < 1e-10 * max(
                1.0, np.abs(t.beta * cells.mult).max())

    def test_beta_change_leaves_cells_alone(self, rng):
        data, grid, marg = random_problem(rng, n=25, p=3)
        t = random_tree(rng, grid, marg, beta=0.7)
        cells = assign_cells(t, data)
        cells2 = assign_cells(t.with_beta(-3.0), data)
        assert_array_equal(cells.masks, cells2.masks)
        assert_array_equal(cells.mult, cells2.mult)


class TestIdentifiabilityResidual:
    def test_built_trees_satisfy_constraint(self, rng):
        for _ in range(100):
            _, grid, marg = random_problem(rng, n=int(rng.integers(4, 60)), p=4)
            t = random_tree(rng, grid, marg)
            assert identifiability_residual(t, marg) <= 1e-10

    def test_corrupted_heights_detected(self):
        _, grid, marg = problem_1234()
        t = build_tree((0,), (float(grid.values[0][1]),), 1.0, marg)
        t.multipliers[1] += 0.1
        assert identifiability_residual(t, marg) > 0.01

    def test_independent_of_beta(self, rng):
        _, grid, marg = random_problem(rng, n=20, p=3)
        t = random_tree(rng, grid, marg, beta=1.0)
        r1 = identifiability_residual(t, marg)
        r2 = identifiability_residual(t.with_beta(123.0), marg)
        assert r1 == r2

    def test_extreme_leverages_stay_within_tolerance(self):
        # all four splits at the last candidate: multipliers reach
        # (n-1)^4 ~ 1.6e9, the worst case of the n<=200, |S|<=4 suite
        n = 200
        x = np.tile(np.arange(float(n)).reshape(-1, 1), (1, 4))
        d = make_data(x, y=np.zeros(n))
        grid, marg = prepare(d)
        s = tuple(float(grid.values[j][-1]) for j in range(4))
        t = build_tree((0, 1, 2, 3), s, 1.0, marg)
        assert max_abs_multiplier(t) == pytest.approx((n - 1) ** 4, rel=1e-12)
        assert identifiability_residual(t, marg) <= 1e-10


class TestStructure:
    def test_multiplier_bound(self, rng):
        for _ in range(100):
            n = int(rng.integers(3, 50))
            _, grid, marg = random_problem(rng, n=n, p=5)
            t = random_tree(rng, grid, marg)
            assert max_abs_multiplier(t) <= n ** t.order

    def test_one_degree_of_freedom(self, rng):
        # same (S, s) => identical multiplier tables, any beta
        _, grid, marg = random_problem(rng, n=30, p=4)
        t1 = random_tree(rng, grid, marg, beta=0.3)
        t2 = build_tree(t1.S, t1.s, -2.0, marg)
        assert_array_equal(t1.multipliers, t2.multipliers)

    def test_split_not_in_grid_rejected(self):
        _, grid, marg = problem_1234()
        with pytest.raises(DataError, match="not in grid"):
            build_tree((0,), (2.6,), 1.0, marg)

    def test_columns_must_increase(self):
        d = make_data(np.array([[1.0, 1.0], [2.0, 2.0]]), y=np.zeros(2))
        _, marg = prepare(d)
        with pytest.raises(DataError, match="strictly increasing"):
            build_tree((1, 0), (1.5, 1.5), 1.0, marg)


class TestSerialization:
    def test_roundtrip_rederives_heights(self, rng):
        for _ in range(20):
            _, grid, marg = random_problem(rng, n=25, p=4)
            t = random_tree(rng, grid, marg)
            rec = tree_to_record(t)
            assert set(rec) == {"S", "s", "beta"}  # heights never serialized
            t2 = tree_from_record(rec, marg)
            assert t2.S == t.S and t2.s == t.s and t2.beta == t.beta
            assert_array_equal(t2.multipliers, t.multipliers)

    def test_json_roundtrip_is_exact(self, rng):
        import json
        _, grid, marg = random_problem(rng, n=25, p=4)
        t = random_tree(rng, grid, marg)
        rec = json.loads(json.dumps(tree_to_record(t)))
        t2 = tree_from_record(rec, marg)
        assert t2.s == t.s and t2.beta == t.beta
