"""Dual package: phi/h surfaces, static payoff, pricing, hedge ratios."""

import numpy as np
import pytest

from consep.errors import ConfigError
from consep.hedge import (PayoffSpec, assemble_h, compute_lambda,
                          hedge_ratios, price, solve_phi)
from consep.measures import GridSpec, build_mixture
from consep.mc import PathConfig, interp_surface, simulate
from consep.optstop import Barrier
from consep.stopping import StoppingSpec, evolve_starting_law

# exit-time moments of the unit interval from the origin (polynomial oracle:
# solve (1/2) u'' = -k t^{k-1} with zero boundary values):
#   E[tau] = 1, E[tau^2] = 5/3, E[tau^3] = 61/15
EXIT_T2 = 5.0 / 3.0
EXIT_T3 = 61.0 / 15.0


@pytest.fixture(scope="module")
def grid():
    return GridSpec(-4.0, 4.0, 401, 2.0, 801)


@pytest.fixture(scope="module")
def cubic():
    return PayoffSpec.power(3)


class TestPayoffSpec:
    def test_power_family(self, cubic):
        assert cubic.F(2.0) == pytest.approx(8.0 / 3.0)
        assert cubic.f(2.0) == pytest.approx(4.0)
        assert cubic.f(0.0) == 0.0

    def test_rejects_low_exponent(self):
        with pytest.raises(ConfigError):
            PayoffSpec.power(1.5)

    def test_derivative_consistency(self, cubic):
        # F(t) = integral of f up to quadrature tolerance at probe points
        for t in (0.3, 1.0, 1.7):
            s = np.linspace(0.0, t, 2001)
            quad = np.trapezoid(cubic.f(s), s)
            assert quad == pytest.approx(cubic.F(t), rel=1e-6)


class TestVerticalClosedForms:
    t0 = 1.0

    @pytest.fixture(scope="class")
    def vertical(self, grid, cubic):
        barrier = Barrier.vertical(grid, self.t0)
        phi = solve_phi(barrier, cubic, grid)
        h = assemble_h(phi, grid)
        return barrier, phi, h

    def test_phi_constant_before_hit(self, grid, vertical):
        _, phi, _ = vertical
        k0 = grid.time_index(self.t0)
        assert np.max(np.abs(phi.values[:k0 + 1] - self.t0**2)) <= 1e-12

    def test_h_polynomial(self, grid, vertical):
        _, _, h = vertical
        k0 = grid.time_index(self.t0)
        T, X = np.meshgrid(grid.t, grid.x, indexing="ij")
        expect = self.t0**2 * T - self.t0**2 * X**2
        assert np.max(np.abs(h.values[:k0 + 1] - expect[:k0 + 1])) <= 1e-10

    def test_h_zero_at_origin(self, grid, vertical):
        _, _, h = vertical
        assert h.values[0, grid.node_at(0.0)] == 0.0

    def test_lambda_polynomial(self, grid, cubic, vertical):
        barrier, _, h = vertical
        lam, flagged = compute_lambda(h, barrier, cubic)
        expect = -2 * self.t0**3 / 3 + self.t0**2 * grid.x**2
        assert not flagged.any()
        assert np.max(np.abs(lam - expect)) <= 1e-10

    def test_price_identity(self, grid, cubic, vertical):
        barrier, _, h = vertical
        lam, _ = compute_lambda(h, barrier, cubic)
        mu = build_mixture({"type": "gaussian", "var": self.t0}, grid)
        zeta = evolve_starting_law(StoppingSpec.zero(), grid)
        report = price(lam, h, mu, zeta)
        assert report.M0 == 0.0
        assert report.total == pytest.approx(self.t0**3 / 3, rel=5e-3)

    def test_delta_linear(self, grid, vertical):
        _, _, h = vertical
        delta, g, alpha = hedge_ratios(h, StoppingSpec.zero(), grid)
        assert g is None and alpha is None
        k0 = grid.time_index(self.t0)
        expect = -2 * self.t0**2 * grid.x
        assert np.max(np.abs(delta.values[:k0 - 1, 1:-1]
                             - expect[None, 1:-1])) <= 1e-9


class TestTwoPointBarrier:
    @pytest.fixture(scope="class")
    def setup(self, cubic):
        grid = GridSpec(-4.0, 4.0, 401, 12.0, 1201)
        barrier = Barrier(grid, np.where(np.abs(grid.x) >= 1.0, 0.0, np.inf))
        phi = solve_phi(barrier, cubic, grid)
        h = assemble_h(phi, grid)
        lam, _ = compute_lambda(h, barrier, cubic)
        return grid, barrier, phi, h, lam

    def test_phi_origin_second_moment(self, setup):
        grid, _, phi, _, _ = setup
        assert phi.values[0, grid.node_at(0.0)] == pytest.approx(EXIT_T2,
                                                                 rel=2e-3)

    def test_lambda_at_atoms_prices_the_exit(self, setup, cubic):
        # equality holds on the barrier from time zero, so the static leg at
        # the atoms carries the whole exit value E[F(exit time)]
        grid, _, _, h, lam = setup
        expect = EXIT_T3 / 3.0
        assert lam[grid.node_at(1.0)] == pytest.approx(expect, rel=2e-3)
        assert lam[grid.node_at(-1.0)] == pytest.approx(expect, rel=2e-3)
        assert lam[grid.node_at(1.0)] == pytest.approx(
            -h.values[0, grid.node_at(1.0)], abs=1e-12)

    def test_price_matches_exit_value(self, setup, cubic):
        grid, _, _, h, lam = setup
        mu = build_mixture({"type": "two_point", "a": 1.0}, grid)
        zeta = evolve_starting_law(StoppingSpec.zero(), grid)
        report = price(lam, h, mu, zeta)
        assert report.M0 == 0.0
        assert report.total == pytest.approx(EXIT_T3 / 3.0, rel=2e-3)


class TestConstrainedInstance:
    def test_phi_equals_marginal_payoff_on_barrier(self, eq2_instance):
        grid = eq2_instance.grid
        R = eq2_instance.barrier.R_values
        phi = eq2_instance.package.phi.values
        f = eq2_instance.payoff.f
        for j in range(0, grid.nx, 20):
            if np.isfinite(R[j]):
                k = grid.time_index(R[j])
                sel = grid.t >= grid.t[k]
                assert np.max(np.abs(phi[sel, j] - f(grid.t[sel]))) <= 1e-10

    def test_phi_nondecreasing_in_time(self, eq2_instance):
        # monotone up to localized moving-boundary corner noise
        inc = np.diff(eq2_instance.package.phi.values, axis=0)
        assert inc.min() >= -0.02
        assert (inc < -1e-10).mean() <= 1e-3

    def test_subhedge_inequality_past_barrier(self, eq2_instance):
        # F(t) >= lambda(x) + h(t,x) on the covered region, equality on entry
        grid = eq2_instance.grid
        pkg = eq2_instance.package
        R = eq2_instance.barrier.R_values
        T = grid.t[:, None]
        covered = T >= np.where(np.isfinite(R), R, np.inf)[None, :]
        F = pkg.payoff.F(grid.t)[:, None]
        slack = F - pkg.lambda_static[None, :] - pkg.h.values
        eps = 2.0 * (grid.dx + grid.dt)
        assert slack[covered].min() >= -eps
        cols = np.flatnonzero(np.isfinite(R))
        entry = [slack[grid.time_index(R[j]), j] for j in cols]
        assert np.max(np.abs(entry)) <= eps

    def test_g_matches_initial_cash(self, eq2_instance):
        pkg = eq2_instance.package
        g00 = pkg.g.values[0, eq2_instance.grid.node_at(0.0)]
        assert abs(g00 - pkg.M0) / abs(pkg.M0) <= 0.01

    def test_g_generator_residual(self, eq2_instance):
        # g solves the backward equation with the clock's kill coupling:
        # dg/dt + g_xx/2 + rho (h - g) = 0 between the absorbing levels
        grid = eq2_instance.grid
        pkg = eq2_instance.package
        rho = eq2_instance.spec.rho
        g = pkg.g.values
        h = pkg.h.values
        ja, jb = grid.node_at(-1.0), grid.node_at(1.0)
        sl = slice(ja + 2, jb - 1)
        k0, k1 = 10, grid.nt - 10
        g_mid = 0.5 * (g[k0:k1 - 1] + g[k0 + 1:k1])
        h_mid = 0.5 * (h[k0:k1 - 1] + h[k0 + 1:k1])
        lap = (g_mid[:, ja + 1:jb - 2] - 2 * g_mid[:, sl]
               + g_mid[:, ja + 3:jb]) / grid.dx**2
        dt_term = (g[k0 + 1:k1, sl] - g[k0:k1 - 1, sl]) / grid.dt
        residual = dt_term + 0.5 * lap + rho * (h_mid[:, sl] - g_mid[:, sl])
        assert np.max(np.abs(residual)) <= 0.05

    def test_lambda_extrapolation_flagged(self, grid, cubic):
        mu = build_mixture({"type": "two_point", "a": 1.0}, grid)
        barrier = Barrier(grid, np.where(np.abs(grid.x) >= 1.0, 0.0, np.inf))
        h = assemble_h(solve_phi(barrier, cubic, grid), grid)
        lam, flagged = compute_lambda(h, barrier, cubic, mu)
        inside = np.abs(grid.x) < 1.0 - 1e-9
        assert flagged[inside].all()
        assert not flagged[~inside].any()

    def test_phi_origin_against_monte_carlo(self, eq2_instance):
        # hitting-time oracle: E[f(first hit of the barrier)] from the origin
        res = simulate(StoppingSpec.zero(), eq2_instance.barrier,
                       PathConfig(n_paths=100_000, dt_sim=1e-3, seed=31))
        vals = eq2_instance.payoff.f(res.tau)
        se = vals.std(ddof=1) / np.sqrt(res.n_paths)
        j0 = eq2_instance.grid.node_at(0.0)
        phi00 = eq2_instance.package.phi.values[0, j0]
        assert abs(vals.mean() - phi00) <= 3 * se + 5e-3


class TestHedgeRatiosMonteCarlo:
    def test_self_financing_on_the_optimal_model(self, eq2_instance):
        pkg = eq2_instance.package
        grid = eq2_instance.grid
        res = simulate(eq2_instance.spec, eq2_instance.barrier,
                       PathConfig(n_paths=4000, dt_sim=2e-3, seed=17),
                       keep_paths=True)
        fin = np.isfinite(res.tau)
        times = res.path_times
        paths = res.path_values[:, fin]
        tau = res.tau[fin]
        tau_lower = res.tau_lower[fin]
        wealth = np.full(int(fin.sum()), pkg.M0)
        for i in range(len(times) - 1):
            t = times[i]
            pos = paths[i]
            d_b = paths[i + 1] - paths[i]
            pre = tau_lower > t + 1e-12
            ratio = np.where(pre,
                             interp_surface(pkg.alpha.values, grid, t, pos),
                             interp_surface(pkg.delta.values, grid, t, pos))
            live = ~(tau <= t + 1e-12)
            wealth += np.where(live, ratio * d_b, 0.0)
        wealth += np.interp(res.b_tau[fin], grid.x, pkg.lambda_static)
        target = pkg.payoff.F(tau)
        err = wealth - target
        # replication is exact in expectation; per-path noise is the usual
        # discrete-rebalancing O(sqrt(dt)) residual
        assert abs(err.mean()) <= 0.02
        assert np.mean(np.abs(err)) <= 5.0 * np.sqrt(res.config.dt_sim)

    def test_h_martingale_between_clock_and_stop(self, eq2_mc, eq2_instance):
        pkg = eq2_instance.package
        grid = eq2_instance.grid
        fin = np.isfinite(eq2_mc.tau)
        h_stop = interp_surface(pkg.h.values, grid,
                                np.clip(eq2_mc.tau[fin], 0, grid.t_max),
                                eq2_mc.b_tau[fin])
        h_clock = interp_surface(pkg.h.values, grid,
                                 np.clip(eq2_mc.tau_lower[fin], 0, grid.t_max),
                                 eq2_mc.b_lower[fin])
        inc = h_stop - h_clock
        se = inc.std(ddof=1) / np.sqrt(inc.shape[0])
        assert abs(inc.mean()) <= 3 * se + 5e-3

    def test_h_submartingale_before_clock(self, eq2_instance):
        pkg = eq2_instance.package
        grid = eq2_instance.grid
        res = simulate(eq2_instance.spec, eq2_instance.barrier,
                       PathConfig(n_paths=4000, dt_sim=2e-3, seed=23),
                       keep_paths=True)
        fin = np.isfinite(res.tau_lower)
        h0 = pkg.h.values[0, grid.node_at(0.0)]
        h_clock = interp_surface(pkg.h.values, grid,
                                 np.clip(res.tau_lower[fin], 0, grid.t_max),
                                 res.b_lower[fin])
        inc = h_clock - h0
        se = inc.std(ddof=1) / np.sqrt(inc.shape[0])
        assert inc.mean() >= -3 * se
