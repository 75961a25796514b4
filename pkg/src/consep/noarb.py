"""Feasibility and no-arbitrage diagnostics.

Each check reports whether a calibrated insider model can exist, which rule
decided it, the logical strength of that rule (iff versus necessary-only),
and the location where the criterion fails when it does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import GridMeasure, GridSpec, barycenter, convex_order
from .optstop import (Barrier, SolverParams, build_obstacle, extract_barrier,
                      solve_value)
from .stopping import StoppingSpec, evolve_starting_law, marginal_law, stopped_potential


@dataclass(frozen=True)
class FeasibilityVerdict:
    feasible: bool
    rule: str
    strength: str                    # "iff" | "necessary"
    witness: dict | None = None

    def __post_init__(self):
        if (self.witness is not None) != (not self.feasible):
            raise ValueError("witness must be present exactly when infeasible")

    def to_json(self) -> dict:
        return {"feasible": self.feasible, "rule": self.rule,
                "strength": self.strength, "witness": self.witness}


def check_lambda2(nu: GridMeasure, mu: GridMeasure) -> FeasibilityVerdict:
    """Stop-after-the-clock feasibility: convex order of the two laws."""
    verdict = convex_order(nu, mu)
    if verdict.ordered:
        return FeasibilityVerdict(True, "lambda2-convex-order", "iff")
    witness = {"x": verdict.witness_x} if verdict.witness_x is not None else \
        {"reason": "mean", "gap": verdict.max_violation}
    return FeasibilityVerdict(False, "lambda2-convex-order", "iff", witness)


def check_ay(h, mu: GridMeasure, tol: float | None = None) -> FeasibilityVerdict:
    """Drawdown-type information barrier against the barycenter inverse.

    h may be a callable on levels >= s0 or an array tabulated on the grid
    nodes.  Feasible iff h stays below the inverse barycenter function.
    """
    grid = mu.grid
    sel = grid.x >= grid.s0 - 1e-12
    levels = grid.x[sel]
    hv = np.asarray(h(levels), dtype=float) if callable(h) else \
        np.asarray(h, dtype=float)[sel]
    if tol is None:
        tol = 2.0 * grid.dx
    beta = barycenter(mu).beta_values[sel]
    violation = hv - beta
    worst = int(np.argmax(violation))
    if violation[worst] > tol:
        return FeasibilityVerdict(False, "azema-yor-inverse-barycenter", "iff",
                                  {"x": float(levels[worst])})
    return FeasibilityVerdict(True, "azema-yor-inverse-barycenter", "iff")


def unconstrained_root_barrier(mu: GridMeasure, grid: GridSpec | None = None,
                               params: SolverParams = SolverParams()) -> Barrier:
    """Root barrier of mu for the trivial clock (no information)."""
    grid = grid or mu.grid
    zeta = evolve_starting_law(StoppingSpec.zero(), grid)
    vtau = stopped_potential(zeta)
    obstacle = build_obstacle(vtau, mu, marginal_law(zeta))
    v = solve_value(vtau, obstacle, params)
    return extract_barrier(v, obstacle, params.eps_stop)


def check_root_inclusion(info_barrier: Barrier, mu: GridMeasure,
                         params: SolverParams = SolverParams(),
                         tol_t: float | None = None) -> FeasibilityVerdict:
    """Stop-before-a-time-barrier feasibility: barrier inclusion.

    The information barrier must start no earlier than the target's own
    stopping barrier at every level; equivalently its entry-time function
    dominates the target's.
    """
    grid = info_barrier.grid
    if tol_t is None:
        tol_t = 3.0 * grid.dt
    root = unconstrained_root_barrier(mu, grid, params)
    info_r = info_barrier.R_values
    root_r = root.R_values
    finite = np.isfinite(root_r)
    bad = np.where(finite, info_r < root_r - tol_t, np.isfinite(info_r))
    if bad.any():
        # report the violating level closest to the start
        cand = np.flatnonzero(bad)
        j = int(cand[np.argmin(np.abs(grid.x[cand] - grid.s0))])
        return FeasibilityVerdict(
            False, "root-barrier-inclusion", "iff",
            {"x": float(grid.x[j]),
             "t": None if not np.isfinite(info_r[j]) else float(info_r[j])})
    return FeasibilityVerdict(True, "root-barrier-inclusion", "iff")


def check_lambda3(nu: GridMeasure, mu: GridMeasure,
                  mubar: GridMeasure) -> FeasibilityVerdict:
    """Two-sided window: composite necessary condition only."""
    low = convex_order(nu, mu)
    if not low.ordered:
        witness = {"x": low.witness_x, "side": "lower"} \
            if low.witness_x is not None else {"reason": "mean", "side": "lower"}
        return FeasibilityVerdict(False, "lambda3-two-sided", "necessary", witness)
    high = convex_order(mu, mubar)
    if not high.ordered:
        witness = {"x": high.witness_x, "side": "upper"} \
            if high.witness_x is not None else {"reason": "mean", "side": "upper"}
        return FeasibilityVerdict(False, "lambda3-two-sided", "necessary", witness)
    return FeasibilityVerdict(True, "lambda3-two-sided", "necessary")
