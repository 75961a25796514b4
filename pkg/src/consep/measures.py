"""Measure calculus on a uniform spatial grid.

A measure is represented as a hybrid of per-node density mass (trapezoidal
quadrature weights already applied) and exact point atoms, so laws mixing a
density with point masses are stored without smearing.  On top of that sit
the potential function, the barycenter function with its right-continuous
inverse, and the convex-order test that drives every feasibility check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError

MASS_TOL = 1e-10
MEAN_TOL = 1e-8
_TAIL_EPS = 1e-15


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid for the whole pipeline.

    nx, nt count nodes: dx = (x_max - x_min) / (nx - 1), dt = t_max / (nt - 1).
    """

    x_min: float
    x_max: float
    nx: int
    t_max: float
    nt: int
    s0: float = 0.0

    def __post_init__(self):
        if not (self.x_min < self.s0 < self.x_max):
            raise ConfigError(
                f"grid [{self.x_min}, {self.x_max}] must contain the start {self.s0}")
        if self.nx < 3 or self.nt < 2:
            raise ConfigError("need nx >= 3 and nt >= 2")
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.t_max / (self.nt - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.nt)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights per node."""
        w = np.full(self.nx, self.dx)
        w[0] = w[-1] = self.dx / 2.0
        return w

    def node_at(self, x: float, tol_factor: float = 1e-6) -> int:
        """Index of the node at x; raises if x is not on the grid."""
        j = int(round((x - self.x_min) / self.dx))
        if j < 0 or j >= self.nx or abs(self.x[j] - x) > tol_factor * self.dx:
            raise ConfigError(f"{x} is not a grid node")
        return j

    def time_index(self, t: float) -> int:
        """Nearest time-node index for t in [0, t_max]."""
        if not 0.0 <= t <= self.t_max + 1e-12:
            raise ConfigError(f"time {t} outside [0, {self.t_max}]")
        return min(int(round(t / self.dt)), self.nt - 1)


@dataclass(frozen=True)
class GridMeasure:
    """Probability measure as node masses plus exact atoms."""

    grid: GridSpec
    cell_mass: np.ndarray
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        cm = np.asarray(self.cell_mass, dtype=float)
        if cm.shape != (self.grid.nx,):
            raise ConfigError("cell_mass must have one entry per grid node")
        if np.any(cm < -1e-14):
            raise ConfigError("negative cell mass")
        object.__setattr__(self, "cell_mass", np.maximum(cm, 0.0))
        object.__setattr__(self, "atoms",
                           tuple((float(l), float(m)) for l, m in self.atoms))
        for loc, m in self.atoms:
            if m < 0:
                raise ConfigError(f"negative atom mass at {loc}")
            if not (self.grid.x_min - 1e-12 <= loc <= self.grid.x_max + 1e-12):
                raise ConfigError(f"atom at {loc} outside the grid")

    @property
    def total_mass(self) -> float:
        return float(self.cell_mass.sum() + sum(m for _, m in self.atoms))

    @property
    def mean(self) -> float:
        m = float(self.cell_mass @ self.grid.x)
        m += sum(loc * w for loc, w in self.atoms)
        return m / self.total_mass

    @property
    def second_moment(self) -> float:
        """V = integral of (x - s0)^2 against the measure."""
        s0 = self.grid.s0
        v = float(self.cell_mass @ (self.grid.x - s0) ** 2)
        v += sum((loc - s0) ** 2 * w for loc, w in self.atoms)
        return v / self.total_mass

    def normalized(self) -> "GridMeasure":
        tot = self.total_mass
        if tot <= 0:
            raise ConfigError("cannot normalize a zero measure")
        atoms = tuple((loc, m / tot) for loc, m in self.atoms)
        return GridMeasure(self.grid, self.cell_mass / tot, atoms)

    def support_points(self) -> tuple[np.ndarray, np.ndarray]:
        """All mass locations and masses, sorted by location."""
        locs = list(self.grid.x)
        mass = list(self.cell_mass)
        for loc, m in self.atoms:
            locs.append(loc)
            mass.append(m)
        locs = np.asarray(locs)
        mass = np.asarray(mass)
        order = np.argsort(locs, kind="stable")
        return locs[order], mass[order]

    def cdf(self, xq: np.ndarray) -> np.ndarray:
        """Right-continuous CDF evaluated at the query points."""
        locs, mass = self.support_points()
        cum = np.cumsum(mass)
        idx = np.searchsorted(locs, np.asarray(xq) + 1e-12, side="left")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return out / self.total_mass

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["#atoms"])
            for loc, m in self.atoms:
                writer.writerow([repr(float(loc)), repr(float(m))])
            writer.writerow(["#density"])
            w = self.grid.weights
            for j, xj in enumerate(self.grid.x):
                writer.writerow([repr(float(xj)), repr(float(self.cell_mass[j] / w[j]))])

    @classmethod
    def from_csv(cls, path, grid: GridSpec) -> "GridMeasure":
        atoms = []
        dens_x, dens_v = [], []
        section = None
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                if row[0].startswith("#"):
                    section = row[0].strip("#").strip()
                    continue
                x, v = float(row[0]), float(row[1])
                if section == "atoms":
                    atoms.append((x, v))
                elif section == "density":
                    dens_x.append(x)
                    dens_v.append(v)
                else:
                    raise ConfigError(f"{path}: row before a #atoms/#density header")
        cell = np.zeros(grid.nx)
        if dens_x:
            xs = np.asarray(dens_x)
            if len(xs) != grid.nx or np.max(np.abs(xs - grid.x)) > 1e-9 * grid.dx:
                raise ConfigError(f"{path}: density nodes do not match the grid")
            cell = np.asarray(dens_v) * grid.weights
        return cls(grid, cell, tuple(atoms)).normalized()


@dataclass(frozen=True)
class Potential:
    """u(x) = -integral |y - x| d(mu)(y), evaluated at the grid nodes."""

    grid: GridSpec
    values: np.ndarray

    def max_convexity_defect(self) -> float:
        """Largest positive discrete second difference (0 for concave u)."""
        d2 = self.values[:-2] - 2.0 * self.values[1:-1] + self.values[2:]
        return float(max(d2.max(initial=-np.inf), 0.0))


@dataclass(frozen=True)
class Barycenter:
    """Conditional-mean-above-level function b and its right-continuous inverse."""

    grid: GridSpec
    b_values: np.ndarray
    beta_values: np.ndarray
    ess_sup: float

    def beta_at(self, y) -> np.ndarray:
        """Inverse evaluated at arbitrary levels by inverting the b-array.

        sup{x : b(x) <= y} capped at y, linear inside cells where b is
        continuous, sticking at the left node across atom-induced jumps.
        """
        return _invert_barycenter(self.grid, self.b_values, np.asarray(y, dtype=float))


@dataclass(frozen=True)
class ConvexOrderVerdict:
    ordered: bool
    reason: str                    # "ok" | "mean" | "potential"
    witness_x: float | None = None
    max_violation: float = 0.0


def convex_order_tol(grid: GridSpec) -> float:
    """Potential-comparison tolerance matching trapezoidal quadrature error."""
    return 10.0 * grid.dx**2 + 1e-12


def _bin_edges(grid: GridSpec) -> np.ndarray:
    """Midpoint bin edges: node j owns [x_j - dx/2, x_j + dx/2] clipped to the grid."""
    x = grid.x
    return np.concatenate(([grid.x_min], (x[:-1] + x[1:]) / 2.0, [grid.x_max]))


def build_mixture(spec: dict, grid: GridSpec) -> GridMeasure:
    """Construct a target law on the grid from a mixture description.

    Supported types: "eq2" (truncated-Gaussian mix with boundary atoms),
    "gaussian", "two_point", "atoms", "uniform", "file".  Densities are
    binned through their exact CDF so total mass and atom weights are exact
    and moments carry only O(dx^2) error.
    """
    kind = spec.get("type")
    if kind == "eq2":
        sigmas = spec.get("sigmas", [2.0, 3.0])
        cut = float(spec.get("cutoff", 1.0))
        if cut >= grid.x_max or -cut <= grid.x_min:
            raise ConfigError("grid does not cover the truncation interval")
        if any(s <= 0 for s in sigmas):
            raise ConfigError("component scale must be positive")
        edges = np.clip(_bin_edges(grid), -cut, cut)
        cdf = np.zeros_like(edges)
        tail = 0.0
        for s in sigmas:
            cdf += ndtr(edges / s) / len(sigmas)
            tail += (1.0 - ndtr(cut / s)) / len(sigmas)
        return GridMeasure(grid, np.diff(cdf), ((-cut, tail), (cut, tail)))
    if kind == "gaussian":
        var = float(spec.get("var", 1.0))
        mean = float(spec.get("mean", 0.0))
        if var <= 0:
            raise ConfigError("variance must be positive")
        sd = np.sqrt(var)
        cdf = ndtr((_bin_edges(grid) - mean) / sd)
        # off-grid tails fold into edge atoms so the mean stays put
        lo_tail = float(cdf[0])
        hi_tail = float(1.0 - cdf[-1])
        atoms = []
        if lo_tail > 0:
            atoms.append((grid.x_min, lo_tail))
        if hi_tail > 0:
            atoms.append((grid.x_max, hi_tail))
        return GridMeasure(grid, np.diff(cdf), tuple(atoms))
    if kind == "two_point":
        a = float(spec["a"])
        if not (grid.x_min <= -a and a <= grid.x_max):
            raise ConfigError("grid does not cover the two-point support")
        return GridMeasure(grid, np.zeros(grid.nx), ((-a, 0.5), (a, 0.5)))
    if kind == "atoms":
        atoms = tuple((float(loc), float(m)) for loc, m in spec["atoms"])
        if any(m < 0 for _, m in atoms):
            raise ConfigError("negative atom weight")
        return GridMeasure(grid, np.zeros(grid.nx), atoms).normalized()
    if kind == "uniform":
        lo, hi = float(spec["lo"]), float(spec["hi"])
        if not (grid.x_min <= lo < hi <= grid.x_max):
            raise ConfigError("grid does not cover the uniform support")
        cdf = np.clip((_bin_edges(grid) - lo) / (hi - lo), 0.0, 1.0)
        return GridMeasure(grid, np.diff(cdf), ())
    if kind == "file":
        return GridMeasure.from_csv(spec["path"], grid)
    raise ConfigError(f"unknown measure type {kind!r}")


def potential(mu: GridMeasure) -> Potential:
    """Potential of mu: exact over atoms, trapezoidal over density cells."""
    mu = mu.normalized()
    x = mu.grid.x
    u = -(np.abs(x[:, None] - x[None, :]) @ mu.cell_mass)
    for loc, m in mu.atoms:
        u -= m * np.abs(x - loc)
    return Potential(mu.grid, u)


def potential_at(mu: GridMeasure, xq: np.ndarray) -> np.ndarray:
    """Potential of mu at arbitrary query points."""
    mu = mu.normalized()
    xq = np.atleast_1d(np.asarray(xq, dtype=float))
    u = -(np.abs(xq[:, None] - mu.grid.x[None, :]) @ mu.cell_mass)
    for loc, m in mu.atoms:
        u -= m * np.abs(xq - loc)
    return u


def convex_order(nu: GridMeasure, mu: GridMeasure, tol: float | None = None) -> ConvexOrderVerdict:
    """Test nu <= mu in convex order via mean match plus potential domination.

    Returns a verdict with the violating location (the arbitrage witness)
    when the ordering fails.
    """
    nu, mu = nu.normalized(), mu.normalized()
    if tol is None:
        tol = convex_order_tol(nu.grid)
    mean_gap = mu.mean - nu.mean
    if abs(mean_gap) > max(MEAN_TOL, tol):
        return ConvexOrderVerdict(False, "mean", witness_x=None,
                                  max_violation=abs(mean_gap))
    # ordering holds iff u_mu <= u_nu everywhere
    gap = potential(mu).values - potential(nu).values
    worst = int(np.argmax(gap))
    if gap[worst] > tol:
        return ConvexOrderVerdict(False, "potential",
                                  witness_x=float(nu.grid.x[worst]),
                                  max_violation=float(gap[worst]))
    return ConvexOrderVerdict(True, "ok")


def barycenter(mu: GridMeasure) -> Barycenter:
    """Barycenter function and its right-continuous generalized inverse.

    b(x) is the mean of mu restricted to [x, infinity); where the tail
    carries no mass b is capped at the essential supremum, which makes the
    inverse beta(y) = min(y, sup{x : b(x) <= y}) match the zero-tail
    convention used by the hitting-time feasibility criterion.
    """
    mu = mu.normalized()
    x = mu.grid.x
    nx = mu.grid.nx
    dx = mu.grid.dx

    # Density-cell tails: node j's bin straddles x_j, so the tail at level
    # x_j picks up half of the bin; atoms at the level are included in full.
    cell = mu.cell_mass
    cell_mom = cell * x
    tail_cell = np.concatenate((np.cumsum(cell[::-1])[::-1][1:], [0.0])) + cell / 2.0
    tail_cmom = np.concatenate((np.cumsum(cell_mom[::-1])[::-1][1:], [0.0])) + cell_mom / 2.0

    atom_loc = np.array([loc for loc, _ in mu.atoms])
    atom_mass = np.array([m for _, m in mu.atoms])
    tm = tail_cell.copy()
    tmom = tail_cmom.copy()
    for loc, m in mu.atoms:
        above = x <= loc + 1e-12
        tm[above] += m
        tmom[above] += m * loc
    supp = np.concatenate((x[cell > _TAIL_EPS], atom_loc[atom_mass > _TAIL_EPS]))
    ess_sup = float(supp.max()) if supp.size else mu.grid.x_max

    b = np.where(tm > _TAIL_EPS, tmom / np.maximum(tm, _TAIL_EPS), ess_sup)
    b = np.minimum(b, ess_sup)
    b = np.maximum.accumulate(b)   # enforce monotonicity against roundoff

    beta = _invert_barycenter(mu.grid, b, x)
    return Barycenter(mu.grid, b, beta, ess_sup)


def _invert_barycenter(grid: GridSpec, b: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Right-continuous generalized inverse of a nondecreasing b-array.

    beta(y) = min(y, sup{x : b(x) <= y}); a finite "never reached" floor
    stands in for -infinity so downstream arithmetic stays well posed.
    """
    floor = grid.x_min - 2.0 * (grid.x_max - grid.x_min)
    jump = 20.0 * grid.dx          # larger b-increments are treated as atoms
    x = grid.x
    scalar = np.ndim(y) == 0
    yq = np.atleast_1d(y)
    j = np.searchsorted(b, yq + 1e-12, side="right") - 1
    valid = j >= 0
    jc = np.clip(j, 0, grid.nx - 1)
    cand = x[jc]
    up = np.clip(jc + 1, 0, grid.nx - 1)
    db = b[up] - b[jc]
    can_lerp = valid & (jc + 1 < grid.nx) & (db > _TAIL_EPS) & (db <= jump) & (yq > b[jc])
    with np.errstate(invalid="ignore", divide="ignore"):
        lerp = x[jc] + grid.dx * (yq - b[jc]) / np.where(db > 0, db, 1.0)
    cand = np.where(can_lerp, np.minimum(x[up], lerp), cand)
    out = np.where(valid, np.minimum(cand, yq), floor)
    return float(out[0]) if scalar else out
