"""Forward evolution of the insider's information clock.

Computes the joint law of (clock time, Brownian position) on the space-time
grid by evolving the surviving sub-density with an implicit scheme, with
absorbing interval boundaries and an independent exponential kill rate.  The
law is stored split into kill mass, boundary-exit mass, surviving density and
flagged terminal mass, so every time slice conserves probability exactly and
the stopped-potential surface can be assembled by quadrature.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._pde import implicit_heat_step
from .errors import ConfigError, HorizonError, MassConservationError
from .measures import GridMeasure, GridSpec

TERMINAL_MASS_WARN = 1e-3
LEAK_TOL = 1e-6


@dataclass(frozen=True)
class StoppingSpec:
    """Insider clock: one of zero, fixed_time, interval_exit, barrier_file."""

    variant: str
    t0: float | None = None
    a: float | None = None
    b: float | None = None
    rho: float = 0.0
    path: str | None = None

    def __post_init__(self):
        if self.variant == "zero":
            return
        if self.variant == "fixed_time":
            if self.t0 is None or self.t0 < 0:
                raise ConfigError("fixed_time requires t0 >= 0")
            return
        if self.variant == "interval_exit":
            if self.a is None or self.b is None or not self.a < 0 < self.b:
                raise ConfigError("interval_exit requires a < s0 < b")
            if self.rho < 0:
                raise ConfigError("kill rate must be nonnegative")
            return
        if self.variant == "barrier_file":
            if not self.path:
                raise ConfigError("barrier_file requires a path")
            return
        raise ConfigError(f"unknown stopping variant {self.variant!r}")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def fixed_time(cls, t0: float):
        return cls("fixed_time", t0=t0)

    @classmethod
    def interval_exit(cls, a: float, b: float, rho: float = 0.0):
        return cls("interval_exit", a=a, b=b, rho=rho)

    @classmethod
    def barrier_file(cls, path: str):
        return cls("barrier_file", path=path)


@dataclass(frozen=True)
class StartingLaw:
    """Discretized joint law of (clock time, position) on the grid.

    kill_mass[k, j] is probability stopped at (t_k, x_j) away from the
    interval boundaries, exit_low/exit_high hold per-step absorption at the
    two boundary levels, survive_density is the unstopped sub-density and
    terminal_mass is whatever was still alive at t_max (flagged).
    """

    grid: GridSpec
    kill_mass: np.ndarray            # (nt, nx)
    exit_low: np.ndarray             # (nt,)
    exit_high: np.ndarray            # (nt,)
    exit_levels: tuple[float, float]
    survive_density: np.ndarray      # (nt, nx)
    terminal_mass: np.ndarray        # (nx,)
    terminal_flagged: bool = False
    # rows whose mass stopped continuously during the preceding step (their
    # time centroid is t_k - dt/2); instantaneous rows stop exactly at t_k
    continuous_rows: np.ndarray | None = None

    def row_is_continuous(self) -> np.ndarray:
        if self.continuous_rows is None:
            return np.zeros(self.grid.nt, dtype=bool)
        return self.continuous_rows

    @cached_property
    def _exit_nodes(self) -> tuple[int, int]:
        return (self.grid.node_at(self.exit_levels[0]),
                self.grid.node_at(self.exit_levels[1]))

    def stopped_mass_matrix(self) -> np.ndarray:
        """Mass stopped at each (t, x) node, boundary exits folded in."""
        s = self.kill_mass.copy()
        ja, jb = self._exit_nodes
        s[:, ja] += self.exit_low
        s[:, jb] += self.exit_high
        s[-1] += self.terminal_mass
        return s

    def slice_conservation_defect(self) -> float:
        """Max over time slices of |stopped + alive - 1|."""
        stopped = np.cumsum(self.stopped_mass_matrix().sum(axis=1))
        alive = self.survive_density @ self.grid.weights
        return float(np.max(np.abs(stopped + alive - 1.0)))

    def expected_stop_time(self) -> float:
        per_step = self.kill_mass.sum(axis=1) + self.exit_low + self.exit_high
        # continuous rows stopped during the preceding step: midpoint centroid
        t_eff = np.where(self.row_is_continuous(),
                         np.maximum(self.grid.t - self.grid.dt / 2.0, 0.0),
                         self.grid.t)
        e = float(t_eff @ per_step)
        return e + self.grid.t_max * float(self.terminal_mass.sum())

    def to_csv(self, path) -> None:
        t, x = self.grid.t, self.grid.x
        with open(path, "w", newline="") as fh:
            fh.write("#kill t,x,mass\n")
            for k, j in zip(*np.nonzero(self.kill_mass > 0)):
                fh.write(f"{float(t[k])!r},{float(x[j])!r},{float(self.kill_mass[k, j])!r}\n")
            fh.write("#exit t,side,mass\n")
            for k in np.nonzero(self.exit_low > 0)[0]:
                fh.write(f"{float(t[k])!r},low,{float(self.exit_low[k])!r}\n")
            for k in np.nonzero(self.exit_high > 0)[0]:
                fh.write(f"{float(t[k])!r},high,{float(self.exit_high[k])!r}\n")
            fh.write("#terminal x,mass\n")
            for j in np.nonzero(self.terminal_mass > 0)[0]:
                fh.write(f"{float(x[j])!r},{float(self.terminal_mass[j])!r}\n")


@dataclass(frozen=True)
class StoppedPotentialSurface:
    """Potential of the clock-stopped process, per time slice."""

    grid: GridSpec
    values: np.ndarray               # (nt, nx)


def _heat_kernel(x, var):
    return np.exp(-x * x / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def _point_mass_law(grid: GridSpec, k: int, j: int) -> StartingLaw:
    kill = np.zeros((grid.nt, grid.nx))
    kill[k, j] = 1.0
    zeros = np.zeros(grid.nt)
    return StartingLaw(grid, kill, zeros, zeros.copy(),
                       (grid.x_min, grid.x_max),
                       np.zeros((grid.nt, grid.nx)), np.zeros(grid.nx))


def _evolve_interval(grid: GridSpec, a: float, b: float, rho: float,
                     stop_at: int | None = None) -> StartingLaw:
    """Implicit forward evolution with absorbing levels a, b and kill rate rho.

    stop_at freezes all surviving mass into the kill bucket at that time
    index (deterministic clock).
    """
    ja, jb = grid.node_at(a), grid.node_at(b)
    if jb - ja < 2:
        raise ConfigError("absorbing interval must contain interior nodes")
    nt, nx, dx, dt = grid.nt, grid.nx, grid.dx, grid.dt
    if dt > dx:
        warnings.warn(f"dt={dt:g} > dx={dx:g}: implicit scheme is stable but "
                      "first-order accuracy may be poor", stacklevel=2)
    j0 = grid.node_at(grid.s0)
    lam = dt / (2.0 * dx * dx)
    w = grid.weights

    q = np.zeros((nt, nx))
    kill = np.zeros((nt, nx))
    exit_lo = np.zeros(nt)
    exit_hi = np.zeros(nt)

    # delta start: all mass in node j0 of the first slice
    q[0, j0] = 1.0 / w[j0]

    dirichlet = np.ones(nx, dtype=bool)
    dirichlet[ja + 1:jb] = False
    zeros_vals = np.zeros(nx)
    interior = slice(ja + 1, jb)
    last = nt - 1 if stop_at is None else min(stop_at, nt - 1)

    for k in range(1, last + 1):
        if k == 1:
            # analytic kernel for the first step avoids the rough delta
            kern = _heat_kernel(grid.x - grid.s0, dt)
            kern[:ja + 1] = 0.0
            kern[jb:] = 0.0
            m = float(kern @ w)
            clipped = 1.0 - m  # kernel tail beyond the interval, usually ~0
            surv = np.exp(-rho * dt)
            q[1] = kern * surv / m if m > 0 else 0.0
            kill[1] = kern * w * (1.0 - surv) / m if m > 0 else 0.0
            exit_lo[1] = exit_hi[1] = max(clipped, 0.0) / 2.0
            continue
        # two damped startup rows after the kernel, Crank-Nicolson beyond
        theta = 1.0 if k <= 3 else 0.5
        q[k] = implicit_heat_step(q[k - 1], lam, kill_dt=rho * dt,
                                  dirichlet=dirichlet, dirichlet_values=zeros_vals,
                                  theta=theta)
        q[k, dirichlet] = 0.0
        q_eff = theta * q[k] + (1.0 - theta) * q[k - 1]
        kill[k, interior] = rho * dt * q_eff[interior] * w[interior]
        exit_lo[k] = 0.5 * dt * q_eff[ja + 1] / dx
        exit_hi[k] = 0.5 * dt * q_eff[jb - 1] / dx

    continuous = np.zeros(nt, dtype=bool)
    continuous[1:last + 1] = True
    terminal = np.zeros(nx)
    if stop_at is not None:
        kill[last] += q[last] * w
        q[last:] = 0.0
        continuous[last] = False      # the freeze dominates that row
    else:
        terminal = q[-1] * w
        q[-1] = 0.0

    flagged = False
    t_mass = float(terminal.sum())
    if t_mass > TERMINAL_MASS_WARN:
        warnings.warn(f"horizon too short for the clock: {t_mass:.3e} mass "
                      "survives to t_max (folded, flagged)", stacklevel=2)
        flagged = True

    law = StartingLaw(grid, kill, exit_lo, exit_hi, (a, b), q, terminal, flagged,
                      continuous_rows=continuous)
    defect = law.slice_conservation_defect()
    if defect > LEAK_TOL:
        raise MassConservationError(
            f"mass leak {defect:.3e} exceeds {LEAK_TOL:g} during clock evolution")
    return law


def evolve_starting_law(spec: StoppingSpec, grid: GridSpec) -> StartingLaw:
    """Joint law of (clock, position) for the given stopping specification."""
    if spec.variant == "zero":
        return _point_mass_law(grid, 0, grid.node_at(grid.s0))
    if spec.variant == "fixed_time":
        if spec.t0 > grid.t_max:
            raise ConfigError("fixed_time t0 beyond the grid horizon")
        k0 = grid.time_index(spec.t0)
        if k0 == 0:
            return _point_mass_law(grid, 0, grid.node_at(grid.s0))
        return _evolve_interval(grid, grid.x_min, grid.x_max, 0.0, stop_at=k0)
    if spec.variant == "interval_exit":
        return _evolve_interval(grid, spec.a, spec.b, spec.rho)
    if spec.variant == "barrier_file":
        from .optstop import Barrier, forward_absorb  # local to avoid a cycle

        barrier = Barrier.from_csv(spec.path, grid)
        zeta0 = _point_mass_law(grid, 0, grid.node_at(grid.s0))
        absorbed, unabsorbed, _, live = forward_absorb(zeta0, barrier)
        if unabsorbed > TERMINAL_MASS_WARN:
            raise HorizonError(
                f"information barrier leaves {unabsorbed:.3e} mass unstopped")
        zeros = np.zeros(grid.nt)
        terminal = live[-1] * grid.weights
        live = live.copy()
        live[-1] = 0.0
        continuous = np.zeros(grid.nt, dtype=bool)
        continuous[1:] = True
        return StartingLaw(grid, absorbed, zeros, zeros.copy(),
                           (grid.x_min, grid.x_max), live, terminal,
                           terminal.sum() > TERMINAL_MASS_WARN,
                           continuous_rows=continuous)
    raise ConfigError(f"unknown stopping variant {spec.variant!r}")


def marginal_law(zeta: StartingLaw) -> GridMeasure:
    """Spatial marginal of the starting law as a grid measure."""
    cell = zeta.stopped_mass_matrix().sum(axis=0)
    return GridMeasure(zeta.grid, cell).normalized()


def stopped_potential(zeta: StartingLaw, grid: GridSpec | None = None) -> StoppedPotentialSurface:
    """Surface -E|B_{t ^ clock} - x|: frozen stopped mass plus live density."""
    grid = grid or zeta.grid
    x = grid.x
    dist = np.abs(x[:, None] - x[None, :])
    frozen = np.cumsum(zeta.stopped_mass_matrix(), axis=0)
    live = zeta.survive_density * grid.weights
    values = -(frozen + live) @ dist
    return StoppedPotentialSurface(grid, values)
