"""Feasibility and arbitrage diagnostics."""

import numpy as np
import pytest

from consep.measures import GridMeasure, GridSpec, barycenter, build_mixture, convex_order
from consep.noarb import (check_ay, check_lambda2, check_lambda3,
                          check_root_inclusion, unconstrained_root_barrier)
from consep.optstop import Barrier
from consep.stopping import StoppingSpec, evolve_starting_law, marginal_law


@pytest.fixture(scope="module")
def grid():
    return GridSpec(-4.0, 4.0, 401, 2.0, 801)


@pytest.fixture(scope="module")
def gauss(grid):
    return build_mixture({"type": "gaussian", "var": 1.0}, grid)


def dirac(grid):
    return GridMeasure(grid, np.zeros(grid.nx), ((0.0, 1.0),))


class TestLambda2:
    def test_killed_marginal_precedes_eq2(self, long_grid):
        # with killing inside the interval, the clock marginal keeps interior
        # mass and the mixture dominates it
        zeta = evolve_starting_law(StoppingSpec.interval_exit(-1, 1, 1.0),
                                   long_grid)
        mu = build_mixture({"type": "eq2"}, long_grid)
        verdict = check_lambda2(marginal_law(zeta), mu)
        assert verdict.feasible
        assert verdict.strength == "iff"

    def test_full_exit_law_is_maximal(self, long_grid):
        # the pure exit law (atoms at the boundary) dominates every law on
        # the interval, so no measure with interior mass can follow it
        zeta = evolve_starting_law(StoppingSpec.interval_exit(-1, 1, 0.0),
                                   long_grid)
        mu = build_mixture({"type": "eq2"}, long_grid)
        verdict = check_lambda2(marginal_law(zeta), mu)
        assert not verdict.feasible
        assert abs(verdict.witness["x"]) <= 0.5

    def test_variance_reversal_infeasible(self, grid, gauss):
        wide = build_mixture({"type": "gaussian", "var": 2.0}, grid)
        verdict = check_lambda2(wide, gauss)
        assert not verdict.feasible
        assert abs(verdict.witness["x"]) <= 0.1

    def test_dirac_always_feasible(self, grid, gauss):
        assert check_lambda2(dirac(grid), gauss).feasible


class TestAzemaYor:
    def test_dominated_by_construction(self, grid, gauss):
        beta = barycenter(gauss).beta_values
        x = grid.x
        assert check_ay(lambda y: np.interp(y, x, beta) - 0.1, gauss).feasible

    def test_drawdown_two_point(self, grid):
        mu = build_mixture({"type": "two_point", "a": 1.0}, grid)
        assert check_ay(lambda y: y - 2.0, mu).feasible
        verdict = check_ay(lambda y: y - 1.9, mu)
        assert not verdict.feasible
        assert 0.8 <= verdict.witness["x"] <= 1.0

    def test_vacuous_constraint(self, grid, gauss):
        assert check_ay(lambda y: np.full_like(y, -1e6), gauss).feasible

    def test_monotone_in_h(self, grid):
        mu = build_mixture({"type": "two_point", "a": 1.0}, grid)
        for c_loose, c_tight in ((2.0, 2.5), (2.5, 3.0)):
            tight = check_ay(lambda y: y - c_loose, mu)
            loose = check_ay(lambda y, c=c_tight: y - c, mu)
            if tight.feasible:
                assert loose.feasible


class TestRootInclusion:
    def test_vertical_timing(self, grid, gauss):
        late = Barrier.vertical(grid, 1.2)
        early = Barrier.vertical(grid, 0.8)
        assert check_root_inclusion(late, gauss).feasible
        verdict = check_root_inclusion(early, gauss)
        assert not verdict.feasible

    def test_reflexive(self, grid, gauss):
        own = unconstrained_root_barrier(gauss, grid)
        assert check_root_inclusion(own, gauss).feasible

    def test_degenerate_barrier(self, grid, gauss):
        verdict = check_root_inclusion(Barrier.vertical(grid, 0.0), gauss)
        assert not verdict.feasible
        assert abs(verdict.witness["x"]) <= 0.1

    def test_monotone_in_barrier(self, grid, gauss):
        # pointwise-later information barriers preserve feasibility
        base = Barrier.vertical(grid, 1.05)
        later = Barrier(grid, base.R_values + 0.5)
        if check_root_inclusion(base, gauss).feasible:
            assert check_root_inclusion(later, gauss).feasible

    def test_meilijson_van_der_vecht_caveat(self, grid, gauss):
        # convex order holds, but no bounded-time embedding exists
        eps = 0.05
        mu = GridMeasure(grid, np.zeros(grid.nx),
                         ((-1.0, eps / 2), (0.0, 1 - eps), (1.0, eps / 2)))
        assert convex_order(mu, gauss).ordered
        verdict = check_root_inclusion(Barrier.vertical(grid, 1.0), mu)
        assert not verdict.feasible
        assert abs(verdict.witness["x"]) < 1.0


class TestLambda3:
    def test_nested_gaussians(self, grid, gauss):
        wide = build_mixture({"type": "gaussian", "var": 2.0}, grid)
        verdict = check_lambda3(dirac(grid), gauss, wide)
        assert verdict.feasible
        assert verdict.strength == "necessary"

    def test_fails_first_ordering(self, grid, gauss):
        wide = build_mixture({"type": "gaussian", "var": 2.0}, grid)
        verdict = check_lambda3(gauss, dirac(grid), wide)
        assert not verdict.feasible
        assert verdict.witness["side"] == "lower"

    def test_fails_second_ordering(self, grid, gauss):
        wide = build_mixture({"type": "gaussian", "var": 2.0}, grid)
        verdict = check_lambda3(dirac(grid), wide, gauss)
        assert not verdict.feasible
        assert verdict.witness["side"] == "upper"


def test_verdict_json_shape(grid, gauss):
    payload = check_lambda2(dirac(grid), gauss).to_json()
    assert set(payload) == {"feasible", "rule", "strength", "witness"}
