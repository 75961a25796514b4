"""Command-line front end: solve, price, verify, noarb, sweep.

Every run resolves its configuration against the defaults, writes a
manifest.json echoing the resolved config and code version (no timestamps,
no absolute paths), and emits CSV/JSON artifacts that are bit-reproducible
from the manifest alone.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ConsepError, InfeasibleInstance
from .hedge import PayoffSpec, build_hedge
from .measures import GridSpec, build_mixture
from .mc import (PathConfig, barrier_support_check, pathwise_subhedge_check,
                 primal_estimate, simulate, verify_embedding)
from .noarb import check_ay, check_lambda2, check_root_inclusion
from .optstop import (Barrier, SolverParams, build_obstacle, extract_barrier,
                      solve_value, verify_embedding_forward)
from .stopping import (StoppingSpec, evolve_starting_law, marginal_law,
                       stopped_potential)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULT_CONFIG = {
    "grid": {"x_min": -4.0, "x_max": 4.0, "nx": 401, "t_max": 4.0, "nt": 801},
    "measure": {"type": "eq2", "sigmas": [2.0, 3.0], "cutoff": 1.0},
    "stopping": {"variant": "interval_exit", "a": -1.0, "b": 1.0, "rho": 1.0},
    "payoff": {"family": "power", "p": 3.0},
    "solver": {"eps_stop": 1e-7, "psor_omega": 1.5, "psor_tol": 1e-10,
               "psor_max_sweeps": 10000, "residual_potential_gap": 5e-3,
               "residual_rel_etau": 0.02},
    "mc": {"n_paths": 100000, "dt_sim": 1e-3, "seed": 0, "antithetic": False,
           "duality_tol": 0.02},
    "noarb": {},
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None) -> dict:
    cfg = {}
    if path is not None:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
    unknown = set(cfg) - set(DEFAULT_CONFIG) - {"out_dir"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return _merge(DEFAULT_CONFIG, cfg)


def make_grid(cfg: dict) -> GridSpec:
    g = cfg["grid"]
    return GridSpec(float(g["x_min"]), float(g["x_max"]), int(g["nx"]),
                    float(g["t_max"]), int(g["nt"]), float(g.get("s0", 0.0)))


def make_stopping(cfg: dict) -> StoppingSpec:
    s = dict(cfg["stopping"])
    variant = s.pop("variant", None)
    return StoppingSpec(variant, **{k: v for k, v in s.items()
                                    if k in ("t0", "a", "b", "rho", "path")})


def make_payoff(cfg: dict) -> PayoffSpec:
    p = cfg["payoff"]
    if p.get("family") == "power":
        return PayoffSpec.power(float(p.get("p", 3.0)))
    raise ConfigError(f"unknown payoff family {p.get('family')!r}")


def make_params(cfg: dict) -> SolverParams:
    s = cfg["solver"]
    return SolverParams(eps_stop=float(s["eps_stop"]),
                        psor_omega=float(s["psor_omega"]),
                        psor_tol=float(s["psor_tol"]),
                        psor_max_sweeps=int(s["psor_max_sweeps"]))


def make_path_config(cfg: dict, seed: int | None = None) -> PathConfig:
    m = cfg["mc"]
    return PathConfig(n_paths=int(m["n_paths"]), dt_sim=float(m["dt_sim"]),
                      seed=int(seed if seed is not None else m["seed"]),
                      antithetic=bool(m["antithetic"]))


def write_manifest(cfg: dict, out: Path) -> None:
    payload = {"config": cfg, "version": __version__}
    blob = json.dumps(payload, sort_keys=True).encode()
    payload["config_sha256"] = hashlib.sha256(blob).hexdigest()
    with open(out / "manifest.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _np_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(data: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=1, default=_np_default)
        fh.write("\n")


class Pipeline:
    """Shared solve products for one configuration."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.grid = make_grid(cfg)
        self.measure = build_mixture(cfg["measure"], self.grid)
        self.spec = make_stopping(cfg)
        self.payoff = make_payoff(cfg)
        self.params = make_params(cfg)
        self._solved = False
        self._hedged = False
        self._uninformed = None

    def solve(self):
        if not self._solved:
            self.zeta = evolve_starting_law(self.spec, self.grid)
            self.nu = marginal_law(self.zeta)
            self.vtau = stopped_potential(self.zeta)
            self.obstacle = build_obstacle(self.vtau, self.measure, self.nu)
            self.value = solve_value(self.vtau, self.obstacle, self.params)
            self.barrier = extract_barrier(self.value, self.obstacle,
                                           self.params.eps_stop)
            self.embedded, self.residuals = verify_embedding_forward(
                self.zeta, self.barrier, self.measure)
            self._solved = True
        return self

    def residuals_pass(self) -> bool:
        s = self.cfg["solver"]
        return (self.residuals["potential_gap"] <= float(s["residual_potential_gap"])
                and self.residuals["rel_gap"] <= float(s["residual_rel_etau"]))

    def hedge(self):
        self.solve()
        if not self._hedged:
            self.package = build_hedge(self.barrier, self.payoff, self.zeta,
                                       self.measure, self.spec)
            self._hedged = True
        return self

    def uninformed_total(self) -> float:
        """Same measure and payoff priced without any information."""
        if self._uninformed is None:
            base_cfg = _merge(self.cfg, {"stopping": {"variant": "zero"}})
            base_cfg["stopping"] = {"variant": "zero"}
            base = Pipeline(base_cfg).hedge()
            self._uninformed = base.package.total_price
        return self._uninformed


def cmd_solve(cfg: dict, out: Path) -> int:
    pipe = Pipeline(cfg).solve()
    write_manifest(cfg, out)
    pipe.barrier.to_csv(out / "barrier.csv")
    from .optstop import ValueSurface
    ValueSurface(pipe.grid, pipe.vtau.values).to_csv(out / "vtau.csv", name="vtau")
    pipe.value.to_csv(out / "value.csv", name="v")
    pipe.zeta.to_csv(out / "starting_law.csv")
    _write_json(pipe.residuals, out / "residuals.json")
    return EXIT_OK if pipe.residuals_pass() else EXIT_NUMERICAL


def _write_lambda(pipe: Pipeline, out: Path) -> None:
    with open(out / "lambda.csv", "w") as fh:
        fh.write("x,lambda\n")
        for xj, lj in zip(pipe.grid.x, pipe.package.lambda_static):
            fh.write(f"{float(xj)!r},{float(lj)!r}\n")


def price_report(pipe: Pipeline) -> dict:
    pkg = pipe.package
    uninformed = pipe.uninformed_total()
    return {"M0": pkg.M0, "static_leg": pkg.static_leg, "total": pkg.total_price,
            "uninformed_total": uninformed,
            "info_value": pkg.total_price - uninformed}


def cmd_price(cfg: dict, out: Path) -> int:
    pipe = Pipeline(cfg).hedge()
    write_manifest(cfg, out)
    _write_lambda(pipe, out)
    pipe.package.h.to_csv(out / "h.csv", name="h")
    pipe.package.delta.to_csv(out / "delta.csv", name="delta")
    if pipe.package.alpha is not None:
        pipe.package.alpha.to_csv(out / "alpha.csv", name="alpha")
    _write_json(price_report(pipe), out / "price.json")
    return EXIT_OK


def cmd_verify(cfg: dict, out: Path, seed: int | None = None) -> int:
    pipe = Pipeline(cfg).hedge()
    pcfg = make_path_config(cfg, seed)
    res = simulate(pipe.spec, pipe.barrier, pcfg)
    embedding = verify_embedding(res, pipe.measure)
    primal = primal_estimate(res, pipe.payoff)
    subhedge = pathwise_subhedge_check(res, pipe.package)
    support = barrier_support_check(res, pipe.barrier)
    dual_total = pipe.package.total_price
    rel_duality_gap = abs(primal.mean - dual_total) / max(abs(primal.mean), 1e-12)
    report = {
        "seed": pcfg.seed,
        "n_paths": pcfg.n_paths,
        "embedding": embedding.to_json(),
        "primal": primal.to_json(),
        "dual_total": dual_total,
        "rel_duality_gap": rel_duality_gap,
        "subhedge": subhedge.to_json(),
        "barrier_support": bool(support),
        "feasibility_violations": res.feasibility_violations,
        "unstopped": res.n_unstopped,
    }
    corrupt = cfg["mc"].get("corrupt_lambda")
    if corrupt is not None:
        control = pathwise_subhedge_check(res, pipe.package,
                                          lambda_shift=float(corrupt))
        report["corrupted_control"] = control.to_json()
        report["corrupted_control"]["detected"] = \
            control.violation_fraction > 0.01
    passed = (embedding.passed and subhedge.passed and support
              and res.feasibility_violations == 0
              and rel_duality_gap <= float(cfg["mc"].get("duality_tol", 0.02)))
    if corrupt is not None:
        passed = passed and report["corrupted_control"]["detected"]
    report["passed"] = bool(passed)
    write_manifest(cfg, out)
    _write_json(report, out / "mc_report.json")
    return EXIT_OK if passed else EXIT_NUMERICAL


def cmd_noarb(cfg: dict, out: Path) -> int:
    grid = make_grid(cfg)
    mu = build_mixture(cfg["measure"], grid)
    spec = make_stopping(cfg)
    zeta = evolve_starting_law(spec, grid)
    nu = marginal_law(zeta)
    verdicts = {"lambda2": check_lambda2(nu, mu).to_json()}
    extra = cfg.get("noarb", {})
    if "ay_drawdown_c" in extra:
        c = float(extra["ay_drawdown_c"])
        verdicts["azema_yor"] = check_ay(lambda x: x - c, mu).to_json()
    if "info_barrier_csv" in extra:
        bar = Barrier.from_csv(extra["info_barrier_csv"], grid)
        verdicts["root_inclusion"] = check_root_inclusion(
            bar, mu, make_params(cfg)).to_json()
    if "info_barrier_vertical_t" in extra:
        bar = Barrier.vertical(grid, float(extra["info_barrier_vertical_t"]))
        verdicts["root_inclusion"] = check_root_inclusion(
            bar, mu, make_params(cfg)).to_json()
    write_manifest(cfg, out)
    _write_json(verdicts, out / "noarb.json")
    feasible = all(v["feasible"] for v in verdicts.values())
    return EXIT_OK if feasible else EXIT_INFEASIBLE


def _sweep_one(args: tuple) -> dict:
    cfg, rho, out_str = args
    out = Path(out_str)
    out.mkdir(parents=True, exist_ok=True)
    if rho is None:
        run_cfg = _merge(cfg, {})
        run_cfg["stopping"] = {"variant": "zero"}
        label = "baseline"
    else:
        run_cfg = _merge(cfg, {"stopping": {"rho": rho}})
        label = f"{rho:g}"
    pipe = Pipeline(run_cfg).hedge()
    pipe.barrier.to_csv(out / "barrier.csv")
    _write_lambda(pipe, out)
    pkg = pipe.package
    return {"rho": label, "dir": out.name, "M0": pkg.M0,
            "static_leg": pkg.static_leg, "total": pkg.total_price}


def cmd_sweep(cfg: dict, out: Path, rhos: list[float], jobs: int = 0) -> int:
    if cfg["stopping"]["variant"] != "interval_exit":
        raise ConfigError("sweep requires an interval_exit stopping spec")
    write_manifest(cfg, out)
    tasks = [(cfg, rho, str(out / f"rho_{rho:g}")) for rho in rhos]
    tasks.append((cfg, None, str(out / "baseline")))
    if jobs != 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs or None) as ex:
            rows = list(ex.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    baseline_total = next(r["total"] for r in rows if r["rho"] == "baseline")
    with open(out / "sweep.csv", "w") as fh:
        fh.write("rho,dir,M0,static_leg,total,uninformed_total\n")
        for row in rows:
            fh.write(f"{row['rho']},{row['dir']},{row['M0']!r},"
                     f"{row['static_leg']!r},{row['total']!r},{baseline_total!r}\n")
    return EXIT_OK


def parse_rho_list(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError("rho range must be a:b:step")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise ConfigError("rho range must satisfy a <= b, step > 0")
        return [float(r) for r in np.arange(a, b + step / 2.0, step)]
    return [float(p) for p in text.split(",") if p.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="consep",
        description="Constrained Skorokhod embedding solver for variance "
                    "options under insider information")
    parser.add_argument("command",
                        choices=["solve", "price", "verify", "noarb", "sweep"])
    parser.add_argument("--config", help="JSON config file", default=None)
    parser.add_argument("--out", help="output directory", default="out")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the Monte Carlo seed")
    parser.add_argument("--rho", default="0.5:2:0.5",
                        help="sweep values: a:b:step or comma list")
    parser.add_argument("--jobs", type=int, default=0,
                        help="sweep workers (0 = all cores, 1 = sequential)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = _merge(cfg, {"mc": {"seed": args.seed}})
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "price":
            return cmd_price(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.seed)
        if args.command == "noarb":
            return cmd_noarb(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, parse_rho_list(args.rho), args.jobs)
        return EXIT_USAGE
    except InfeasibleInstance as exc:
        verdict = {"feasible": False, "rule": "lambda2-convex-order",
                   "strength": "iff", "witness": {"x": exc.witness},
                   "error": str(exc)}
        try:
            _write_json(verdict, Path(args.out) / "noarb.json")
        except OSError:
            pass
        print(f"infeasible instance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConsepError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
