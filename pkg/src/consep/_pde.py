"""Shared finite-difference kernels: implicit heat steps and projected SOR.

All steppers discretise u_t = u_xx / 2 (- kill * u) with backward Euler in
time and central differences in space.  Dirichlet nodes are encoded as
identity rows so a single banded solve handles arbitrary constrained node
patterns (absorbing boundaries, barrier regions).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

from .errors import SolverError


def implicit_heat_step(values, lam, kill_dt=0.0, dirichlet=None, dirichlet_values=None,
                       source=None, theta=1.0):
    """One theta-scheme step of u_t = u_xx/2 - kill*u (+ source/dt).

    theta = 1 is backward Euler, theta = 0.5 Crank-Nicolson.  Solves
    (1 + theta(kill_dt + 2 lam)) u_j - theta lam (u_{j-1} + u_{j+1}) = rhs_j
    at free nodes with u pinned at Dirichlet nodes; the explicit part of rhs
    uses the previous level.  lam = dt / (2 dx^2), kill_dt = kill_rate * dt,
    source is an already-scaled additive term.
    """
    n = values.shape[0]
    if dirichlet is None:
        dirichlet = np.zeros(n, dtype=bool)
        dirichlet[0] = dirichlet[-1] = True
    if not (dirichlet[0] and dirichlet[-1]):
        raise ValueError("end nodes must be constrained")
    rhs = values.copy()
    if theta < 1.0:
        expl = np.zeros(n)
        expl[1:-1] = lam * (values[:-2] - 2.0 * values[1:-1] + values[2:])
        expl -= kill_dt * values
        rhs += (1.0 - theta) * expl
    if source is not None:
        rhs += source
    if dirichlet_values is not None:
        rhs[dirichlet] = dirichlet_values[dirichlet]
    else:
        rhs[dirichlet] = values[dirichlet]

    # solve_banded layout: ab[0, j] = A[j-1, j], ab[1, j] = A[j, j],
    # ab[2, j] = A[j+1, j].
    ab = np.empty((3, n))
    ab[0] = -theta * lam
    ab[1] = 1.0 + theta * (kill_dt + 2.0 * lam)
    ab[2] = -theta * lam
    idx = np.flatnonzero(dirichlet)
    ab[1, idx] = 1.0
    sup = idx[idx + 1 < n] + 1
    ab[0, sup] = 0.0          # A[j, j+1] for constrained j
    sub = idx[idx - 1 >= 0] - 1
    ab[2, sub] = 0.0          # A[j, j-1] for constrained j
    ab[0, 0] = 0.0
    ab[2, -1] = 0.0
    return solve_banded((1, 1), ab, rhs)


def psor_step(values, lam, obstacle, omega=1.5, tol=1e-10, max_sweeps=10_000,
              dirichlet=None, dirichlet_values=None):
    """One implicit step of the obstacle problem (linear complementarity).

    Finds u >= obstacle with (1 + 2 lam) u - lam (u_- + u_+) >= values and
    complementarity at every free node, via a banded warm start followed by
    red-black projected SOR sweeps.  Returns (u, sweeps).
    """
    n = values.shape[0]
    if dirichlet is None:
        dirichlet = np.zeros(n, dtype=bool)
        dirichlet[0] = dirichlet[-1] = True
    if dirichlet_values is None:
        dirichlet_values = values

    warm = implicit_heat_step(values, lam, dirichlet=dirichlet,
                              dirichlet_values=dirichlet_values)
    u = np.maximum(warm, obstacle)
    u[dirichlet] = dirichlet_values[dirichlet]

    diag = 1.0 + 2.0 * lam
    free_idx = np.flatnonzero(~dirichlet)
    even = free_idx[free_idx % 2 == 0]
    odd = free_idx[free_idx % 2 == 1]

    delta = np.inf
    for sweep in range(1, max_sweeps + 1):
        delta = 0.0
        for idx in (even, odd):
            gs = (values[idx] + lam * (u[idx - 1] + u[idx + 1])) / diag
            new = np.maximum(obstacle[idx], u[idx] + omega * (gs - u[idx]))
            if idx.size:
                delta = max(delta, float(np.max(np.abs(new - u[idx]))))
            u[idx] = new
        if delta < tol:
            return u, sweep
    raise SolverError(
        f"projected SOR did not reach tol={tol:g} in {max_sweeps} sweeps "
        f"(last update {delta:.3e})")
