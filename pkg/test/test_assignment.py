"""
Tests the Hungarian solver against exhaustive search and scipy.
"""

import itertools
import pathlib
import sys
import unittest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import numpy as np
import scipy.optimize

import ivseg.optimization.assignment as assignment
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


def brute_force_cost(cost):
    n, g = cost.shape

    if n >= g:
        return min(sum(cost[rows[k], k] for k in range(g)) for rows in itertools.permutations(range(n), g))

    return min(sum(cost[j, columns[j]] for j in range(n)) for columns in itertools.permutations(range(g), n))


class TestHungarian(unittest.TestCase):

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(0)

        for _ in range(500):
            n, g = rng.integers(1, 7, 2)
            cost = rng.integers(-20, 20, (n, g)).astype(float)
            result = assignment.hungarian_assign(cost)
            self.assertEqual(min(n, g), len(result.pairs))
            self.assertEqual(brute_force_cost(cost), result.total_cost(cost))

    def test_matches_scipy_on_real_costs(self):
        rng = np.random.default_rng(1)

        for _ in range(200):
            n, g = rng.integers(1, 12, 2)
            cost = rng.normal(size=(n, g))
            rows, columns = scipy.optimize.linear_sum_assignment(cost)
            self.assertAlmostEqual(cost[rows, columns].sum(), assignment.hungarian_assign(cost).total_cost(cost),
                places=12)

    def test_pairs_are_one_to_one(self):
        result = assignment.hungarian_assign(np.random.default_rng(2).normal(size=(8, 3)))
        proposals = [j for j, _ in result.pairs]
        targets = [g for _, g in result.pairs]
        self.assertEqual(sorted(proposals), proposals)
        self.assertEqual(len(set(proposals)), len(proposals))
        self.assertEqual([0, 1, 2], sorted(targets))
        self.assertEqual(3, int(result.labels().sum()))

    def test_degenerate_inputs(self):
        self.assertEqual([], assignment.hungarian_assign(np.zeros((3, 0))).pairs)

        with self.assertRaises(ValueError):
            assignment.hungarian_assign(np.array([[0.0, np.nan]]))

        with self.assertRaises(ValueError):
            assignment.hungarian_assign(np.zeros(3))


if __name__ == "__main__":
    unittest.main()
