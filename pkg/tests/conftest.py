"""Shared fixtures: the constrained benchmark instance is expensive, so the
solve and its big Monte Carlo run are session-scoped and reused everywhere."""

import pytest

from consep.hedge import PayoffSpec, build_hedge
from consep.measures import GridSpec, build_mixture
from consep.mc import PathConfig, simulate
from consep.optstop import (build_obstacle, extract_barrier, solve_value,
                            verify_embedding_forward)
from consep.stopping import (StoppingSpec, evolve_starting_law, marginal_law,
                             stopped_potential)


class Instance:
    """One fully solved configuration plus its hedge package."""

    def __init__(self, grid, measure_spec, stopping_spec, payoff=None):
        self.grid = grid
        self.measure = build_mixture(measure_spec, grid)
        self.spec = stopping_spec
        self.payoff = payoff or PayoffSpec.power(3)
        self.zeta = evolve_starting_law(stopping_spec, grid)
        self.nu = marginal_law(self.zeta)
        self.vtau = stopped_potential(self.zeta)
        self.obstacle = build_obstacle(self.vtau, self.measure, self.nu)
        self.value = solve_value(self.vtau, self.obstacle)
        self.barrier = extract_barrier(self.value, self.obstacle)
        self.package = build_hedge(self.barrier, self.payoff, self.zeta,
                                   self.measure, stopping_spec)

    def forward_residuals(self):
        return verify_embedding_forward(self.zeta, self.barrier, self.measure)


@pytest.fixture(scope="session")
def default_grid():
    return GridSpec(-4.0, 4.0, 401, 4.0, 801)


@pytest.fixture(scope="session")
def eq2_instance(default_grid):
    """The constrained benchmark: eq2 mixture, interval exit with unit kill rate."""
    return Instance(default_grid, {"type": "eq2"},
                    StoppingSpec.interval_exit(-1.0, 1.0, 1.0))


@pytest.fixture(scope="session")
def eq2_mc(eq2_instance):
    """100k-path simulation of the benchmark instance (pinned seed)."""
    cfg = PathConfig(n_paths=100_000, dt_sim=1e-3, seed=2026)
    return simulate(eq2_instance.spec, eq2_instance.barrier, cfg)


@pytest.fixture(scope="session")
def eq2_fine_instance():
    """The benchmark instance with dx and dt halved."""
    return Instance(GridSpec(-4.0, 4.0, 801, 4.0, 1601), {"type": "eq2"},
                    StoppingSpec.interval_exit(-1.0, 1.0, 1.0))


@pytest.fixture(scope="session")
def long_grid():
    """Horizon long enough that the pure interval exit fully absorbs."""
    return GridSpec(-4.0, 4.0, 401, 12.0, 1601)
