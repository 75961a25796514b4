"""Dual sub-hedging package for variance payoffs.

From the stopping barrier this module builds the barrier-hitting expectation
phi, the trading surface h, the static payoff lambda, hedge ratios for both
trading legs, and the price decomposition (static leg plus initial cash).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from ._pde import implicit_heat_step
from .errors import ConfigError, HorizonError
from .measures import GridMeasure, GridSpec
from .optstop import Barrier, ValueSurface
from .stopping import StartingLaw, StoppingSpec


@dataclass(frozen=True)
class PayoffSpec:
    """Convex increasing payoff F of accumulated variance, F(0) = 0, f = F'."""

    F: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def __post_init__(self):
        if abs(float(self.F(0.0))) > 1e-12:
            raise ConfigError("payoff must satisfy F(0) = 0")
        if float(self.f(0.0)) < 0:
            raise ConfigError("marginal payoff f must be nonnegative")

    @classmethod
    def power(cls, p: float) -> "PayoffSpec":
        if p < 2:
            raise ConfigError("power payoff requires p >= 2")
        return cls(F=lambda v: np.asarray(v) ** p / p,
                   f=lambda v: np.asarray(v) ** (p - 1),
                   name=f"power({p:g})")


@dataclass
class HedgePackage:
    """Everything needed to trade the sub-hedge and decompose its price."""

    payoff: PayoffSpec
    barrier: Barrier
    phi: ValueSurface
    h: ValueSurface
    lambda_static: np.ndarray
    lambda_flagged: np.ndarray            # nodes where lambda was extrapolated
    delta: ValueSurface                   # post-clock trading ratio dh/dx
    M0: float
    static_leg: float
    total_price: float
    g: ValueSurface | None = None         # pre-clock martingale surface
    alpha: ValueSurface | None = None     # pre-clock trading ratio dg/dx
    ratios_partial: bool = False

    def h3_values(self) -> np.ndarray:
        """Closed-form comparison surface F(t) - f(0) x^2."""
        grid = self.barrier.grid
        return (self.payoff.F(grid.t)[:, None]
                - float(self.payoff.f(0.0)) * (grid.x ** 2)[None, :])


def solve_phi(barrier: Barrier, payoff: PayoffSpec, grid: GridSpec | None = None) -> ValueSurface:
    """Expected marginal payoff at the barrier hitting time, E[f(hit time)].

    Backward implicit solve of the heat equation outside the barrier with
    phi = f(t) inside it and phi = f(t_max) at the horizon.
    """
    grid = grid or barrier.grid
    R = barrier.R_values
    if not np.isfinite(R).any():
        raise HorizonError("empty barrier: nothing to hit")
    f, t = payoff.f, grid.t
    lam = grid.dt / (2.0 * grid.dx * grid.dx)
    phi = np.empty((grid.nt, grid.nx))
    phi[-1] = float(f(grid.t_max))
    for k in range(grid.nt - 2, -1, -1):
        covered = R <= t[k] + 1e-12
        dirichlet = covered.copy()
        dirichlet[0] = dirichlet[-1] = True
        dvals = np.where(covered, float(f(t[k])), phi[k + 1])
        theta = 1.0 if k >= grid.nt - 3 else 0.5
        phi[k] = implicit_heat_step(phi[k + 1], lam, dirichlet=dirichlet,
                                    dirichlet_values=dvals, theta=theta)
        phi[k, covered] = f(t[k])
    return ValueSurface(grid, phi)


def assemble_h(phi: ValueSurface, grid: GridSpec | None = None) -> ValueSurface:
    """Trading surface: time integral of phi minus twice its double space integral."""
    grid = grid or phi.grid
    j0 = grid.node_at(grid.s0)
    time_int = cumulative_trapezoid(phi.values, dx=grid.dt, axis=0, initial=0.0)
    prim = cumulative_trapezoid(phi.values[0], dx=grid.dx, initial=0.0)
    prim -= prim[j0]
    double = cumulative_trapezoid(prim, dx=grid.dx, initial=0.0)
    double -= double[j0]
    return ValueSurface(grid, time_int - 2.0 * double[None, :])


def _interp_time(values: np.ndarray, grid: GridSpec, tq: np.ndarray,
                 cols: np.ndarray) -> np.ndarray:
    """values[t, cols] linearly interpolated in t at per-column times tq."""
    pos = np.clip(tq / grid.dt, 0.0, grid.nt - 1.0)
    k0 = np.minimum(pos.astype(int), grid.nt - 2)
    frac = pos - k0
    return (1.0 - frac) * values[k0, cols] + frac * values[k0 + 1, cols]


def compute_lambda(h: ValueSurface, barrier: Barrier, payoff: PayoffSpec,
                   mu: GridMeasure | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Static payoff lambda(x) = F(R(x)) - f(0) x^2 - h(R(x), x).

    Where the barrier never starts inside the window, lambda is extrapolated
    flat from the nearest resolved node and flagged.  If the target measure
    is supplied, more than 1e-3 of its mass on flagged nodes is a hard error.
    """
    grid = barrier.grid
    R = barrier.R_values
    finite = np.isfinite(R)
    if not finite.any():
        raise HorizonError("barrier empty within the window")
    x = grid.x
    lam = np.empty(grid.nx)
    f0 = float(payoff.f(0.0))
    cols = np.flatnonzero(finite)
    h_at = _interp_time(h.values, grid, R[cols], cols)
    lam[cols] = payoff.F(R[cols]) - f0 * x[cols] ** 2 - h_at
    flagged = ~finite
    if flagged.any():
        fidx = np.flatnonzero(finite)
        for j in np.flatnonzero(flagged):
            lam[j] = lam[fidx[np.argmin(np.abs(fidx - j))]]
        if mu is not None:
            bad_mass = float(mu.cell_mass[flagged].sum())
            bad_mass += sum(m for loc, m in mu.atoms
                            if flagged[np.argmin(np.abs(x - loc))])
            if bad_mass > 1e-3:
                raise HorizonError(
                    f"{bad_mass:.3e} target mass sits where the barrier never "
                    "starts; window too short")
    return lam, flagged


@dataclass(frozen=True)
class PriceReport:
    static_leg: float
    M0: float
    total: float

    def to_json(self) -> dict:
        return {"static_leg": self.static_leg, "M0": self.M0, "total": self.total}


def price(lambda_static: np.ndarray, h: ValueSurface, mu: GridMeasure,
          zeta: StartingLaw) -> PriceReport:
    """Integrate the static payoff against mu and h against the clock law.

    Rows of the clock law that stopped continuously during a step are
    integrated with h at the step midpoint (trapezoid in time); instantaneous
    rows and the flagged terminal mass use h at their exact slice.
    """
    grid = h.grid
    static = float(lambda_static @ mu.cell_mass)
    for loc, m in mu.atoms:
        static += m * float(np.interp(loc, grid.x, lambda_static))

    h_eff = h.values.copy()
    cont = zeta.row_is_continuous().copy()
    cont[0] = False
    h_eff[cont] = 0.5 * (h.values[cont] + h.values[np.flatnonzero(cont) - 1])
    stopped = zeta.kill_mass.copy()
    ja, jb = (grid.node_at(zeta.exit_levels[0]), grid.node_at(zeta.exit_levels[1]))
    stopped[:, ja] += zeta.exit_low
    stopped[:, jb] += zeta.exit_high
    m0 = float(np.sum(stopped * h_eff)) + float(zeta.terminal_mass @ h.values[-1])
    return PriceReport(static, m0, static + m0)


def hedge_ratios(h: ValueSurface, spec: StoppingSpec,
                 grid: GridSpec | None = None
                 ) -> tuple[ValueSurface, ValueSurface | None, ValueSurface | None]:
    """Trading ratios: delta = dh/dx after the clock; (g, alpha) before it.

    The pre-clock surface g solves the backward equation with the clock's
    kill coupling towards h, so g(0, s0) reproduces the initial cash.  Specs
    without a solvable pre-clock equation return delta only, flagged partial.
    """
    grid = grid or h.grid
    delta = ValueSurface(grid, np.gradient(h.values, grid.dx, axis=1))
    if spec.variant == "zero":
        return delta, None, None
    if spec.variant == "interval_exit":
        ja, jb = grid.node_at(spec.a), grid.node_at(spec.b)
        lam = grid.dt / (2.0 * grid.dx * grid.dx)
        g = h.values.copy()          # g = h outside (a, b) and at the horizon
        dirichlet = np.ones(grid.nx, dtype=bool)
        dirichlet[ja + 1:jb] = False
        for k in range(grid.nt - 2, -1, -1):
            # midpoint kill source matches the trapezoid quadrature in price()
            theta = 1.0 if k >= grid.nt - 3 else 0.5
            src = spec.rho * grid.dt * (theta * h.values[k]
                                        + (1.0 - theta) * h.values[k + 1])
            g[k] = implicit_heat_step(g[k + 1], lam, kill_dt=spec.rho * grid.dt,
                                      dirichlet=dirichlet, dirichlet_values=h.values[k],
                                      source=src, theta=theta)
        gs = ValueSurface(grid, g)
        return delta, gs, ValueSurface(grid, np.gradient(g, grid.dx, axis=1))
    if spec.variant == "fixed_time":
        k0 = grid.time_index(spec.t0)
        g = h.values.copy()
        dirichlet = np.zeros(grid.nx, dtype=bool)
        dirichlet[0] = dirichlet[-1] = True
        lam = grid.dt / (2.0 * grid.dx * grid.dx)
        for k in range(k0 - 1, -1, -1):
            theta = 1.0 if k >= k0 - 2 else 0.5
            g[k] = implicit_heat_step(g[k + 1], lam, dirichlet=dirichlet,
                                      dirichlet_values=h.values[k], theta=theta)
        gs = ValueSurface(grid, g)
        return delta, gs, ValueSurface(grid, np.gradient(g, grid.dx, axis=1))
    warnings.warn(f"no pre-clock equation for variant {spec.variant!r}; "
                  "returning the post-clock ratio only", stacklevel=2)
    return delta, None, None


def build_hedge(barrier: Barrier, payoff: PayoffSpec, zeta: StartingLaw,
                mu: GridMeasure, spec: StoppingSpec) -> HedgePackage:
    """Assemble the full hedge: surfaces, static payoff, ratios, price."""
    grid = barrier.grid
    phi = solve_phi(barrier, payoff, grid)
    h = assemble_h(phi, grid)
    lam, flagged = compute_lambda(h, barrier, payoff, mu)
    report = price(lam, h, mu, zeta)
    delta, g, alpha = hedge_ratios(h, spec, grid)
    return HedgePackage(payoff=payoff, barrier=barrier, phi=phi, h=h,
                        lambda_static=lam, lambda_flagged=flagged, delta=delta,
                        M0=report.M0, static_leg=report.static_leg,
                        total_price=report.total, g=g, alpha=alpha,
                        ratios_partial=g is None and spec.variant != "zero")
