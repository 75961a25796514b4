"""Monte Carlo engine: path simulation through the clock and the barrier.

Paths are advanced on a shared time grid with per-(step, path) counter-based
randomness, so results are bit-reproducible and independent of execution
order.  Level crossings (interval exits, barrier frontiers) use exact
Brownian-bridge crossing probabilities; the exponential clock is sampled
directly by inverse CDF from a dedicated stream and its in-step position by a
bridge draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .errors import ConfigError, HorizonError
from .hedge import HedgePackage, PayoffSpec
from .measures import GridMeasure, GridSpec, barycenter, potential_at
from .optstop import Barrier
from .stopping import StoppingSpec

Z99 = 2.5758293035489004           # two-sided 99% normal quantile


@dataclass(frozen=True)
class PathConfig:
    n_paths: int = 100_000
    dt_sim: float = 1e-3
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths <= 0 or self.dt_sim <= 0:
            raise ConfigError("need n_paths > 0 and dt_sim > 0")
        if self.antithetic and self.n_paths % 2:
            raise ConfigError("antithetic sampling needs an even path count")


@dataclass
class SimResult:
    grid: GridSpec
    config: PathConfig
    tau_lower: np.ndarray
    b_lower: np.ndarray
    tau: np.ndarray
    b_tau: np.ndarray
    n_unstopped: int
    feasibility_violations: int       # paths with tau < tau_lower (exact check)
    max_contact_overshoot: float      # worst time-depth a live path spent in contact
    snapshots: dict[float, np.ndarray] = field(default_factory=dict)
    path_times: np.ndarray | None = None
    path_values: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.tau.shape[0]

    def to_csv(self, path, payoff: PayoffSpec | None = None) -> None:
        """Optional sample dump, one row per stopped path."""
        with open(path, "w") as fh:
            fh.write("path_id,tau_lower,b_lower,tau,b_tau,payoff\n")
            for i in range(self.n_paths):
                if not np.isfinite(self.tau[i]):
                    continue
                pay = "" if payoff is None else repr(float(payoff.F(self.tau[i])))
                fh.write(f"{i},{float(self.tau_lower[i])!r},"
                         f"{float(self.b_lower[i])!r},{float(self.tau[i])!r},"
                         f"{float(self.b_tau[i])!r},{pay}\n")


def _increments(cfg: PathConfig, row: int) -> np.ndarray:
    z = _rng.normals(cfg.seed, _rng.INCREMENTS, row, cfg.n_paths)
    if cfg.antithetic:
        z[1::2] = -z[0::2]
    return z


def _frontier_tables(barrier: Barrier, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inner free-interval edges (lo, hi) of the barrier at each time.

    nan on a side means no crossing check there (no frontier inside the grid,
    or the free interval has collapsed entirely; collapses are handled by the
    per-slice containment check instead).
    """
    grid = barrier.grid
    R = barrier.R_values
    x = grid.x
    j0 = grid.node_at(grid.s0)
    jump = 20.0 * grid.dt          # larger drops are barrier discontinuities
    lo = np.full(times.shape, np.nan)
    hi = np.full(times.shape, np.nan)
    for i, s in enumerate(times):
        free = R > s + 1e-12
        if not free[j0]:
            continue
        right = np.flatnonzero(~free[j0:])
        if right.size:
            j = j0 + right[0]          # first covered node to the right
            drop = R[j - 1] - R[j]
            if np.isfinite(drop) and drop <= jump:
                frac = (R[j - 1] - s) / max(drop, 1e-300)
                hi[i] = min(x[j], x[j - 1] + grid.dx * min(frac, 1.0))
            else:
                hi[i] = x[j]           # discontinuity: the wall sits at the node
        left = np.flatnonzero(~free[:j0 + 1][::-1])
        if left.size:
            j = j0 - left[0]
            drop = R[j + 1] - R[j]
            if np.isfinite(drop) and drop <= jump:
                frac = (R[j + 1] - s) / max(drop, 1e-300)
                lo[i] = max(x[j], x[j + 1] - grid.dx * min(frac, 1.0))
            else:
                lo[i] = x[j]
    return lo, hi


def _make_entry_time_interp(grid: GridSpec, R_grid: np.ndarray):
    """Entry-time lookup at arbitrary positions.

    Linear inside cells where R varies smoothly; across discontinuities
    (drops larger than 20 grid steps in time, e.g. towards an atom column)
    the lower-semicontinuous convention applies: the cell interior keeps the
    continuous branch, so containment starts only at the node itself.
    """
    jump = 20.0 * grid.dt

    def r_at(pos):
        p = np.clip((np.asarray(pos) - grid.x_min) / grid.dx, 0.0, grid.nx - 1.0)
        j = np.minimum(p.astype(int), grid.nx - 2)
        frac = p - j
        r0, r1 = R_grid[j], R_grid[j + 1]
        lin = r0 + frac * (r1 - r0)
        hold = np.where(frac > 1.0 - 1e-9, np.minimum(r0, r1), np.maximum(r0, r1))
        return np.where(np.abs(r1 - r0) <= jump, lin, hold)

    return r_at


def _bridge_cross_prob(x0, x1, level, dt, upper: bool):
    """Probability a Brownian bridge from x0 to x1 touches the level."""
    if upper:
        d0, d1 = level - x0, level - x1
    else:
        d0, d1 = x0 - level, x1 - level
    p = np.exp(-2.0 * np.maximum(d0, 0.0) * np.maximum(d1, 0.0) / dt)
    return np.where((d0 > 0) & (d1 > 0), p, 1.0)


def _frontier_crossing(x0, x1, lo_level, hi_level, dt, t_now, u):
    """Crossing of the free-interval edges within one step.

    Endpoint overshoots are recorded at the linearly interpolated time and
    clipped to the level; near-misses use the bridge probability with a
    midpoint time.  Returns (crossed, level, time).
    """
    n = x0.shape[0]
    cross = np.zeros(n, dtype=bool)
    level = np.empty(n)
    t_hit = np.full(n, t_now + dt)
    for lev, upper in ((hi_level, True), (lo_level, False)):
        if not np.isfinite(lev):
            continue
        # frontier moved past the start position: covered where it stands
        covered0 = ((x0 >= lev) if upper else (x0 <= lev)) & ~cross
        t_hit = np.where(covered0, t_now + 0.5 * dt, t_hit)
        level[covered0] = x0[covered0]
        cross |= covered0
        beyond = (x1 >= lev) if upper else (x1 <= lev)
        hit_new = beyond & ~cross
        theta = np.clip((lev - x0) / np.where(x1 != x0, x1 - x0, 1.0), 0.0, 1.0)
        t_hit = np.where(hit_new, t_now + theta * dt, t_hit)
        level[hit_new] = lev
        cross |= hit_new
        inside = ~beyond & ~cross
        p = _bridge_cross_prob(x0, x1, lev, dt, upper)
        dip = inside & (p < 1.0) & (u < p)
        t_hit = np.where(dip, t_now + 0.5 * dt, t_hit)
        level[dip] = lev
        cross |= dip
    return cross, level, t_hit


def simulate(spec: StoppingSpec, barrier: Barrier, cfg: PathConfig,
             probe_times=None, keep_paths: bool = False) -> SimResult:
    """Simulate Brownian paths through the clock, then into the barrier.

    Each path stops at the first time >= its clock with t >= R(B_t).  Probe
    times (snapped to the simulation grid) record B at min(t, clock) for all
    paths, for cross-checks against the stopped-potential surface.
    """
    grid = barrier.grid
    if cfg.dt_sim > grid.dt + 1e-12:
        raise ConfigError(f"dt_sim={cfg.dt_sim:g} must not exceed grid dt={grid.dt:g}")
    n = cfg.n_paths
    dt = cfg.dt_sim
    sdt = np.sqrt(dt)
    n_steps = int(round(grid.t_max / dt))
    times = np.arange(n_steps + 1) * dt

    R_grid = np.where(np.isfinite(barrier.R_values), barrier.R_values, 1e12)
    lo_front, hi_front = _frontier_tables(barrier, times)
    r_at = _make_entry_time_interp(grid, R_grid)

    if spec.variant == "interval_exit" and spec.rho > 0:
        clock = _rng.exponentials(cfg.seed, _rng.CLOCK, 0, n, spec.rho)
    elif spec.variant == "fixed_time":
        clock = np.full(n, float(spec.t0))
    else:
        clock = np.full(n, np.inf)

    if spec.variant == "barrier_file":
        info_barrier = Barrier.from_csv(spec.path, grid)
        info_r_at = _make_entry_time_interp(
            grid, np.where(np.isfinite(info_barrier.R_values),
                           info_barrier.R_values, 1e12))
        info_lo, info_hi = _frontier_tables(info_barrier, times)

    PRE, POST, DONE = 0, 1, 2
    pos = np.full(n, grid.s0)
    phase = np.full(n, PRE, dtype=np.int8)
    tau_lower = np.full(n, np.nan)
    b_lower = np.full(n, np.nan)
    tau = np.full(n, np.nan)
    b_tau = np.full(n, np.nan)
    max_overshoot = 0.0

    probe = sorted(round(float(p) / dt) * dt
                   for p in (probe_times if probe_times is not None else []))
    snapshots: dict[float, np.ndarray] = {}
    if keep_paths:
        path_values = np.empty((n_steps + 1, n))
        path_values[0] = pos
    else:
        path_values = None

    def enter_post(idx, t_at, b_at):
        """Clock fired: record it and stop instantly if already in contact."""
        tau_lower[idx] = t_at
        b_lower[idx] = b_at
        instant = r_at(b_at) <= t_at + 1e-12
        done = idx[instant]
        tau[done] = t_at[instant]
        b_tau[done] = b_at[instant]
        phase[done] = DONE
        rest = idx[~instant]
        phase[rest] = POST
        pos[rest] = b_at[~instant]

    if spec.variant == "zero":
        enter_post(np.arange(n), np.zeros(n), np.full(n, grid.s0))

    for i in range(n_steps):
        if not (phase != DONE).any():
            break
        t_now, t_next = times[i], times[i + 1]

        # containment check at the current slice for post-clock paths
        post_idx = np.flatnonzero(phase == POST)
        if post_idx.size:
            rr = r_at(pos[post_idx])
            inside = rr <= t_now + 1e-12
            if inside.any():
                # depth while actually moving inside the region: the one-step
                # hold right after the clock is not "continuing"
                depth = t_now - np.maximum(rr, tau_lower[post_idx])
                max_overshoot = max(max_overshoot,
                                    float(np.max(depth[inside])))
                hit = post_idx[inside]
                tau[hit] = t_now
                b_tau[hit] = pos[hit]
                phase[hit] = DONE

        if spec.variant == "fixed_time":
            due = np.flatnonzero((phase == PRE) & (clock <= t_now + 1e-12))
            if due.size:
                enter_post(due, np.full(due.size, float(spec.t0)), pos[due].copy())

        was_post = phase == POST
        z = _increments(cfg, i)
        new = pos + sdt * z

        # pre-clock phase
        pre_idx = np.flatnonzero(phase == PRE)
        if pre_idx.size and spec.variant == "interval_exit":
            x0, x1 = pos[pre_idx], new[pre_idx]
            hi_c = x1 >= spec.b
            lo_c = x1 <= spec.a
            u_exit = _rng.uniforms(cfg.seed, _rng.EXIT_BRIDGE, i, n)[pre_idx]
            p_hi = _bridge_cross_prob(x0, x1, spec.b, dt, upper=True)
            p_lo = _bridge_cross_prob(x0, x1, spec.a, dt, upper=False)
            open_hi = ~hi_c & ~lo_c & (p_hi < 1.0) & (u_exit < p_hi)
            rem = (u_exit - p_hi) / np.maximum(1.0 - p_hi, 1e-300)
            open_lo = (~hi_c & ~lo_c & ~open_hi & (p_lo < 1.0) & (rem < p_lo))
            exits = hi_c | lo_c | open_hi | open_lo
            theta = np.where(
                hi_c | lo_c,
                np.clip((np.where(hi_c, spec.b, spec.a) - x0)
                        / np.where(x1 != x0, x1 - x0, 1.0), 0.0, 1.0),
                0.5)
            t_exit = np.where(exits, t_now + theta * dt, np.inf)
            level = np.where(hi_c | open_hi, spec.b, spec.a)

            rings = clock[pre_idx] <= t_next
            by_clock = rings & (clock[pre_idx] < t_exit)
            by_exit = exits & ~by_clock
            if by_exit.any():
                enter_post(pre_idx[by_exit], t_exit[by_exit], level[by_exit])
            if by_clock.any():
                idx = pre_idx[by_clock]
                th = np.clip((clock[idx] - t_now) / dt, 0.0, 1.0)
                zb = _rng.normals(cfg.seed, _rng.CLOCK_POSITION, i, n)[idx]
                mid = x0[by_clock] + th * (x1[by_clock] - x0[by_clock])
                noise = np.sqrt(np.maximum(th * (1.0 - th) * dt, 0.0)) * zb
                enter_post(idx, clock[idx].copy(),
                           np.clip(mid + noise, spec.a, spec.b))
            cont = pre_idx[~by_exit & ~by_clock]
            pos[cont] = new[cont]
        elif pre_idx.size and spec.variant == "fixed_time":
            pos[pre_idx] = new[pre_idx]
        elif pre_idx.size and spec.variant == "barrier_file":
            x0, x1 = pos[pre_idx], new[pre_idx]
            u_exit = _rng.uniforms(cfg.seed, _rng.EXIT_BRIDGE, i, n)[pre_idx]
            cross, level, t_hit = _frontier_crossing(
                x0, x1, info_lo[i + 1], info_hi[i + 1], dt, t_now, u_exit)
            end_inside = info_r_at(x1) <= t_next + 1e-12
            stop = cross | end_inside
            t_at = np.where(cross, t_hit, t_next)
            b_at = np.where(cross, level, x1)
            if stop.any():
                enter_post(pre_idx[stop], t_at[stop], b_at[stop])
            cont = pre_idx[~stop]
            pos[cont] = new[cont]

        # post-clock phase: frontier crossing during the step (paths that
        # entered this step hold their clock position until the next slice)
        post_idx = np.flatnonzero(was_post & (phase == POST))
        if post_idx.size:
            x0, x1 = pos[post_idx], new[post_idx]
            u = _rng.uniforms(cfg.seed, _rng.BARRIER_BRIDGE, i, n)[post_idx]
            cross, level, t_hit = _frontier_crossing(
                x0, x1, lo_front[i + 1], hi_front[i + 1], dt, t_now, u)
            hit = post_idx[cross]
            tau[hit] = t_hit[cross]
            b_tau[hit] = level[cross]
            phase[hit] = DONE
            cont = post_idx[~cross]
            pos[cont] = new[cont]

        if keep_paths:
            path_values[i + 1] = np.where(phase == DONE, b_tau, pos)
        while probe and probe[0] <= t_next + 1e-12:
            pt = probe.pop(0)
            snapshots[pt] = np.where(phase == PRE, pos, b_lower).copy()

    # final slice: paths in contact exactly at the horizon
    post_idx = np.flatnonzero(phase == POST)
    if post_idx.size:
        rr = r_at(pos[post_idx])
        inside = rr <= times[-1] + 1e-12
        hit = post_idx[inside]
        tau[hit] = times[-1]
        b_tau[hit] = pos[hit]
        phase[hit] = DONE

    unstopped = int((phase != DONE).sum())
    if unstopped > 0.001 * n:
        raise HorizonError(f"{unstopped} of {n} paths unstopped at the "
                           "simulation horizon")
    done = phase == DONE
    viol = int(np.sum(tau[done] < tau_lower[done] - 1e-12))
    return SimResult(grid, cfg, tau_lower, b_lower, tau, b_tau, unstopped,
                     viol, max_overshoot, snapshots,
                     times if keep_paths else None, path_values)


@dataclass(frozen=True)
class EmbeddingReport:
    ks_distance: float
    ks_threshold: float
    potential_gap: float
    potential_threshold: float

    @property
    def passed(self) -> bool:
        return (self.ks_distance <= self.ks_threshold
                and self.potential_gap <= self.potential_threshold)

    def to_json(self) -> dict:
        return {"ks_distance": self.ks_distance, "ks_threshold": self.ks_threshold,
                "potential_gap": self.potential_gap,
                "potential_threshold": self.potential_threshold,
                "passed": self.passed}


def verify_embedding(res: SimResult, mu: GridMeasure) -> EmbeddingReport:
    """Compare the empirical stopped law with the target measure."""
    b = np.sort(res.b_tau[np.isfinite(res.b_tau)])
    n = b.shape[0]
    vals, counts = np.unique(b, return_counts=True)
    cum = np.cumsum(counts) / n
    cum_left = cum - counts / n
    ks = float(max(np.max(np.abs(cum - mu.cdf(vals))),
                   np.max(np.abs(cum_left - mu.cdf(vals - 1e-9)))))
    grid = res.grid
    ks_thr = 3.0 / np.sqrt(n) + 2.0 * grid.dx

    probes = np.linspace(grid.x_min, grid.x_max, 21)
    prefix = np.concatenate(([0.0], np.cumsum(b)))
    idx = np.searchsorted(b, probes)
    below = probes * idx - prefix[idx]
    above = (prefix[-1] - prefix[idx]) - probes * (n - idx)
    u_emp = -(below + above) / n
    u_tgt = potential_at(mu, probes)
    gap = float(np.max(np.abs(u_emp - u_tgt)))
    se = max(float(np.std(np.abs(b[None, :] - probes[:, None]), axis=1).max()),
             1e-12) / np.sqrt(n)
    pot_thr = 3.0 * se + 10.0 * grid.dx**2
    return EmbeddingReport(ks, ks_thr, gap, pot_thr)


@dataclass(frozen=True)
class PrimalEstimate:
    mean: float
    stderr: float
    ci99: tuple[float, float]

    def to_json(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr,
                "ci99_low": self.ci99[0], "ci99_high": self.ci99[1]}


def primal_estimate(res: SimResult, payoff: PayoffSpec) -> PrimalEstimate:
    """Sample mean of the payoff at the stopping time, with a 99% CI."""
    vals = payoff.F(res.tau[np.isfinite(res.tau)])
    if res.config.antithetic:
        vals = 0.5 * (vals[0::2] + vals[1::2])
    m = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(vals.shape[0]))
    return PrimalEstimate(m, se, (m - Z99 * se, m + Z99 * se))


@dataclass(frozen=True)
class SubhedgeReport:
    violation_fraction: float
    violation_count: int
    eps_num: float
    worst_slack: float

    @property
    def passed(self) -> bool:
        return self.violation_fraction <= 1e-3

    def to_json(self) -> dict:
        return {"violation_fraction": self.violation_fraction,
                "violation_count": self.violation_count, "eps_num": self.eps_num,
                "worst_slack": self.worst_slack, "passed": self.passed}


def default_eps_num(grid: GridSpec) -> float:
    """Pathwise tolerance: scheme-error scale, far below any real mispricing."""
    return 2.0 * (grid.dx + grid.dt)


def interp_surface(values: np.ndarray, grid: GridSpec, t, x) -> np.ndarray:
    """Bilinear interpolation of a (nt, nx) surface at (t, x) points."""
    pos = np.clip(np.asarray(t) / grid.dt, 0.0, grid.nt - 1.0)
    k0 = np.minimum(pos.astype(int), grid.nt - 2)
    tf = pos - k0
    jp = np.clip((np.asarray(x) - grid.x_min) / grid.dx, 0.0, grid.nx - 1.0)
    j0 = np.minimum(jp.astype(int), grid.nx - 2)
    xf = jp - j0
    return ((1 - tf) * ((1 - xf) * values[k0, j0] + xf * values[k0, j0 + 1])
            + tf * ((1 - xf) * values[k0 + 1, j0] + xf * values[k0 + 1, j0 + 1]))


def pathwise_subhedge_check(res: SimResult, pkg: HedgePackage,
                            eps_num: float | None = None,
                            lambda_shift: float = 0.0) -> SubhedgeReport:
    """Fraction of paths violating F(tau) >= lambda(B_tau) + h(tau, B_tau).

    lambda_shift corrupts the static leg, for sensitivity controls.
    """
    grid = res.grid
    if eps_num is None:
        eps_num = default_eps_num(grid)
    ok = np.isfinite(res.tau)
    t = np.clip(res.tau[ok], 0.0, grid.t_max)
    x = res.b_tau[ok]
    lam = np.interp(x, grid.x, pkg.lambda_static) + lambda_shift
    hv = interp_surface(pkg.h.values, grid, t, x)
    slack = pkg.payoff.F(t) - lam - hv
    viol = slack < -eps_num
    return SubhedgeReport(float(viol.mean()), int(viol.sum()), eps_num,
                          float(slack.min()))


def barrier_support_check(res: SimResult, barrier: Barrier) -> bool:
    """No path kept moving while more than one time cell inside the contact set.

    Every path found inside the region is stopped at the first slice that
    sees it there, so its depth can exceed the slice spacing only by the
    arrival window: one simulation step for the crossing plus one for the
    post-clock hold.  Anything beyond grid.dt + 2 dt_sim means a path kept
    diffusing inside the stopped region.
    """
    return res.max_contact_overshoot <= (barrier.grid.dt
                                         + 2.0 * res.config.dt_sim + 1e-9)


def simulate_ay(mu: GridMeasure, cfg: PathConfig,
                horizon: float | None = None) -> SimResult:
    """Drawdown embedding: stop when the path falls to beta(running max).

    The running maximum is refreshed with exact bridge-maximum draws, so its
    discretization bias is O(dt) rather than O(sqrt dt).
    """
    grid = mu.grid
    bary = barycenter(mu)
    n = cfg.n_paths
    dt = cfg.dt_sim
    sdt = np.sqrt(dt)
    t_max = horizon if horizon is not None else grid.t_max
    n_steps = int(round(t_max / dt))

    pos = np.full(n, grid.s0)
    run_max = np.full(n, grid.s0)
    tau = np.full(n, np.nan)
    b_tau = np.full(n, np.nan)
    alive = np.ones(n, dtype=bool)

    def beta_of(m):
        return bary.beta_at(np.clip(m, grid.x_min, grid.x_max))

    # first level whose inverse-barycenter value reaches the level itself:
    # once the running max touches it the path is already on the boundary
    on_boundary = bary.beta_values >= grid.x - 1e-12
    y_star = float(grid.x[on_boundary][0]) if on_boundary.any() else np.inf

    # immediate stop when the start already sits on the boundary
    hit0 = pos <= beta_of(run_max) + 1e-12
    tau[hit0] = 0.0
    b_tau[hit0] = pos[hit0]
    alive &= ~hit0

    for i in range(n_steps):
        if not alive.any():
            break
        t_now = i * dt
        z = _increments(cfg, i)
        u_max = _rng.uniforms(cfg.seed, _rng.MAX_BRIDGE, i, n)
        u_cross = _rng.uniforms(cfg.seed, _rng.AY_CROSS, i, n)
        idx = np.flatnonzero(alive)
        x0 = pos[idx]
        x1 = x0 + sdt * z[idx]
        span = (x1 - x0) ** 2 - 2.0 * dt * np.log(u_max[idx])
        m_star = 0.5 * (x0 + x1 + np.sqrt(np.maximum(span, 0.0)))
        m_new = np.maximum(run_max[idx], m_star)

        # the excursion top crossing y_star is itself a boundary touch
        top_hit = m_new >= y_star - 1e-12
        lvl = beta_of(np.minimum(m_new, y_star))
        end_hit = ~top_hit & (x1 <= lvl)
        p = _bridge_cross_prob(x0, x1, lvl, dt, upper=False)
        dip = ~top_hit & ~end_hit & (p < 1.0) & (u_cross[idx] < p)

        stop = top_hit | end_hit | dip
        stop_idx = idx[stop]
        tau[stop_idx] = t_now + 0.5 * dt
        b_tau[stop_idx] = np.where(top_hit, y_star, lvl)[stop]
        alive[stop_idx] = False
        cont = idx[~stop]
        pos[cont] = x1[~stop]
        run_max[cont] = m_new[~stop]

    unstopped = int(alive.sum())
    if unstopped > 0.001 * n:
        raise HorizonError(f"{unstopped} of {n} drawdown paths unstopped")
    return SimResult(grid, cfg, np.zeros(n), np.full(n, grid.s0), tau, b_tau,
                     unstopped, 0, 0.0)
