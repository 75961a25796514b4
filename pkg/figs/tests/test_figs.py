"""Structural checks on the three figure families (no mathematics here)."""

import sys
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from figs import main, render

RHOS = (0.5, 1.0, 1.5, 2.0)


def write_curve(path, ycol, xs, ys):
    with open(path, "w") as fh:
        fh.write(f"x,{ycol}\n")
        for x, y in zip(xs, ys):
            fh.write(f"{float(x)!r},{'inf' if np.isinf(y) else repr(float(y))}\n")


@pytest.fixture()
def sweep_dir(tmp_path):
    """Synthetic sweep shaped like real solver output (4 rates + baseline)."""
    xs = np.linspace(-4.0, 4.0, 81)
    rows = ["rho,dir,M0,static_leg,total,uninformed_total"]
    baseline_total = 0.27
    for i, rho in enumerate(RHOS):
        total = 0.50 - 0.05 * i
        d = tmp_path / f"rho_{rho:g}"
        d.mkdir()
        r = np.where(np.abs(xs) < 1.0, (1.0 + 1.0 / rho) * (1 - xs**2), 0.0)
        r[np.abs(xs) >= 1.0] = 0.0
        write_curve(d / "barrier.csv", "R", xs, r)
        write_curve(d / "lambda.csv", "lambda", xs, xs**2 - 0.5 / rho)
        rows.append(f"{rho:g},rho_{rho:g},0.05,{total - 0.05!r},{total!r},"
                    f"{baseline_total!r}")
    d = tmp_path / "baseline"
    d.mkdir()
    write_curve(d / "barrier.csv", "R", xs,
                np.where(np.abs(xs) < 1.0, 1.2 * (1 - xs**2), 0.0))
    write_curve(d / "lambda.csv", "lambda", xs, xs**2 - 0.9)
    rows.append(f"baseline,baseline,0.0,{baseline_total!r},{baseline_total!r},"
                f"{baseline_total!r}")
    (tmp_path / "sweep.csv").write_text("\n".join(rows) + "\n")
    return tmp_path


class TestBarrierFigure:
    def test_curve_counts_and_styles(self, sweep_dir):
        fig = render(sweep_dir, "barrier")
        ax = fig.axes[0]
        assert len(ax.lines) == len(RHOS) + 1
        solid = [ln for ln in ax.lines if ln.get_linestyle() == "-"]
        dotted = [ln for ln in ax.lines if ln.get_linestyle() == ":"]
        assert len(solid) == len(RHOS)
        assert len(dotted) == 1
        labels = [ln.get_label() for ln in ax.lines]
        assert "no information" in labels
        assert ax.get_xlabel() == "x"
        assert ax.get_ylabel() == "R(x)"
        plt.close(fig)

    def test_missing_baseline_warns(self, sweep_dir):
        text = (sweep_dir / "sweep.csv").read_text().splitlines()
        (sweep_dir / "sweep.csv").write_text(
            "\n".join(r for r in text if not r.startswith("baseline")) + "\n")
        with pytest.warns(UserWarning, match="no baseline"):
            fig = render(sweep_dir, "barrier")
        assert len(fig.axes[0].lines) == len(RHOS)
        plt.close(fig)


class TestLambdaFigure:
    def test_curve_counts_and_labels(self, sweep_dir):
        fig = render(sweep_dir, "lambda")
        ax = fig.axes[0]
        assert len(ax.lines) == len(RHOS) + 1
        assert ax.get_ylabel() == "lambda(x)"
        plt.close(fig)


class TestPriceFigure:
    def test_monotone_polyline_with_baseline(self, sweep_dir):
        fig = render(sweep_dir, "price")
        ax = fig.axes[0]
        poly = [ln for ln in ax.lines if ln.get_label() == "insider price"]
        assert len(poly) == 1
        ys = poly[0].get_ydata()
        assert len(ys) == len(RHOS)
        assert all(a >= b for a, b in zip(ys, ys[1:]))
        xs = poly[0].get_xdata()
        assert list(xs) == sorted(xs)
        base = [ln for ln in ax.lines if ln.get_label() == "no information"]
        assert len(base) == 1
        assert ax.get_xlabel() == "rho"
        plt.close(fig)


class TestCli:
    def test_writes_image(self, sweep_dir, tmp_path):
        out = tmp_path / "barrier.png"
        assert main(["--sweep", str(sweep_dir), "--figure", "barrier",
                     "--out", str(out)]) == 0
        assert out.stat().st_size > 0

    def test_deterministic_bytes(self, sweep_dir, tmp_path):
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            main(["--sweep", str(sweep_dir), "--figure", "price",
                  "--out", str(out)])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_empty_directory_fails(self, tmp_path):
        out = tmp_path / "x.png"
        code = main(["--sweep", str(tmp_path / "nothing"), "--figure",
                     "barrier", "--out", str(out)])
        assert code == 1
        assert not out.exists()

    def test_missing_columns_fail(self, sweep_dir, tmp_path):
        (sweep_dir / "sweep.csv").write_text("rho,total\n1,0.3\n")
        assert main(["--sweep", str(sweep_dir), "--figure", "price",
                     "--out", str(tmp_path / "y.png")]) == 1


def _has_consep():
    try:
        import consep  # noqa: F401
        return True
    except ImportError:
        return False


@pytest.mark.skipif(not _has_consep(), reason="solver package not installed")
def test_renders_real_sweep(tmp_path):
    """End-to-end: a tiny real sweep through the solver CLI."""
    import json
    from consep.cli import main as consep_main
    cfg = {"grid": {"x_min": -4.0, "x_max": 4.0, "nx": 161, "t_max": 4.0,
                    "nt": 201},
           "mc": {"n_paths": 500, "dt_sim": 0.02, "seed": 1}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    sweep_out = tmp_path / "sweep"
    assert consep_main(["sweep", "--config", str(cfg_path), "--out",
                        str(sweep_out), "--rho", "1,2", "--jobs", "1"]) == 0
    for figure in ("barrier", "lambda", "price"):
        out = tmp_path / f"{figure}.png"
        assert main(["--sweep", str(sweep_out), "--figure", figure,
                     "--out", str(out)]) == 0
        assert out.stat().st_size > 0
