#!/usr/bin/env python3
"""Static figures from sweep output: barrier family, static-payoff family,
price versus kill rate.

Pure view layer over the solver's CSV artifacts: it never recomputes any
mathematics, fails loudly on missing columns, and renders deterministically
(fixed style, no timestamps).
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

BASELINE = "baseline"
FIGURES = ("barrier", "lambda", "price")


class SweepError(Exception):
    pass


def read_sweep(sweep_dir: Path) -> list[dict]:
    path = sweep_dir / "sweep.csv"
    if not path.exists():
        raise SweepError(f"{path} not found")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"rho", "dir", "M0", "static_leg", "total", "uninformed_total"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise SweepError(f"{path}: missing columns "
                             f"{sorted(required - set(reader.fieldnames or []))}")
        for row in reader:
            rows.append({
                "rho": row["rho"],
                "dir": sweep_dir / row["dir"],
                "total": float(row["total"]),
                "uninformed_total": float(row["uninformed_total"]),
            })
    if not rows:
        raise SweepError(f"{path}: no sweep rows")
    return rows


def read_curve(path: Path, ycol: str) -> tuple[np.ndarray, np.ndarray]:
    if not path.exists():
        raise SweepError(f"{path} not found")
    xs, ys = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["x", ycol]:
            raise SweepError(f"{path}: expected header x,{ycol}")
        for row in reader:
            xs.append(float(row[0]))
            ys.append(np.inf if row[1].strip() == "inf" else float(row[1]))
    return np.asarray(xs), np.asarray(ys)


def split_rows(rows: list[dict]) -> tuple[list[dict], dict | None]:
    baseline = next((r for r in rows if r["rho"] == BASELINE), None)
    if baseline is None:
        warnings.warn("sweep has no baseline row; plotting without it",
                      stacklevel=2)
    swept = sorted((r for r in rows if r["rho"] != BASELINE),
                   key=lambda r: float(r["rho"]))
    if not swept:
        raise SweepError("sweep contains no kill-rate rows")
    return swept, baseline


def _plot_family(ax, swept, baseline, filename, ycol, ylabel):
    for row in swept:
        x, y = read_curve(row["dir"] / filename, ycol)
        y = np.where(np.isfinite(y), y, np.nan)
        ax.plot(x, y, linestyle="-", label=f"rho={row['rho']}")
    if baseline is not None:
        x, y = read_curve(baseline["dir"] / filename, ycol)
        y = np.where(np.isfinite(y), y, np.nan)
        ax.plot(x, y, linestyle=":", color="black", label="no information")
    ax.set_xlabel("x")
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", fontsize=8)


def render(sweep_dir, figure: str, out=None):
    """Render one figure family; returns the matplotlib Figure."""
    sweep_dir = Path(sweep_dir)
    if figure not in FIGURES:
        raise SweepError(f"unknown figure {figure!r}; pick from {FIGURES}")
    swept, baseline = split_rows(read_sweep(sweep_dir))

    fig, ax = plt.subplots(figsize=(7.0, 4.5), dpi=120)
    if figure == "barrier":
        _plot_family(ax, swept, baseline, "barrier.csv", "R", "R(x)")
        ax.set_title("stopping barrier by kill rate")
    elif figure == "lambda":
        _plot_family(ax, swept, baseline, "lambda.csv", "lambda", "lambda(x)")
        ax.set_title("static payoff by kill rate")
    else:
        rhos = [float(r["rho"]) for r in swept]
        totals = [r["total"] for r in swept]
        ax.plot(rhos, totals, linestyle="-", marker="o", label="insider price")
        if baseline is not None:
            ax.axhline(baseline["total"], linestyle=":", color="black",
                       label="no information")
        ax.set_xlabel("rho")
        ax.set_ylabel("sub-hedging price")
        ax.set_title("price by kill rate")
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()

    if out is not None:
        out = Path(out)
        metadata = {"Date": None} if out.suffix == ".svg" else None
        fig.savefig(out, metadata=metadata)
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="figs.py", description="Render sweep figures from solver output")
    parser.add_argument("--sweep", required=True, help="sweep output directory")
    parser.add_argument("--figure", required=True, choices=FIGURES)
    parser.add_argument("--out", required=True, help="image file (png/svg)")
    args = parser.parse_args(argv)
    try:
        fig = render(args.sweep, args.figure, args.out)
        plt.close(fig)
    except SweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
