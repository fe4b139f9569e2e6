"""plotkit tests, including the A11 acceptance flow.

The end-to-end tests drive the fusionloc CLI as a subprocess and consume only
its documented output files; the primary suite runs without plotkit installed.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from plotkit import FigureSpec, SchemaError, plot, read_aggregate_csv, read_power_map
from plotkit.cli import main as plotkit_main

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"

AGG_HEADER = "method,variable,value,runs,mse_mean,mse_std"


def _write_aggregate(path, variable, values, methods=("cmf-cd", "cmf-uot")):
    lines = ["# tool=fusionloc v0.1.0", "# config_hash=abc", "# seed=1", AGG_HEADER]
    rng = np.random.default_rng(0)
    for method in methods:
        for v in values:
            mean = float(rng.uniform(0.01, 0.5))
            std = float(rng.uniform(0.001, 0.05))
            lines.append(f"{method},{variable},{v!r},20,{mean!r},{std!r}")
    path.write_text("\n".join(lines) + "\n")


def _write_powermap(path, points_values, sources, peaks):
    lines = [
        "# fusionloc powermap v1",
        "# tool=fusionloc v0.1.0",
        "# method=cmf-uot",
        "# grid_step=0.05",
    ]
    for s in sources:
        lines.append("# source=" + ",".join(repr(float(v)) for v in s) + ",1.0")
    for p in peaks:
        lines.append("# peak=" + ",".join(repr(float(v)) for v in p) + ",1.0")
    lines.append("index,x,y,z,value")
    for i, (pt, val) in enumerate(points_values):
        lines.append(f"{i}," + ",".join(repr(float(v)) for v in pt) + f",{val!r}")
    path.write_text("\n".join(lines) + "\n")


def test_snr_curve_counts_two_methods_six_points(tmp_path):
    csv = tmp_path / "agg.csv"
    _write_aggregate(csv, "snr_db", [-10.0, -5.0, 0.0, 5.0, 10.0, 20.0])
    out = tmp_path / "fig.png"
    info = plot(FigureSpec(inputs=(str(csv),), kind="snr_curve", output=str(out)))
    assert out.is_file()
    assert [c["method"] for c in info["curves"]] == ["cmf-cd", "cmf-uot"]
    assert all(c["points"] == 6 for c in info["curves"])


def test_distance_curve_rejects_wrong_variable(tmp_path):
    csv = tmp_path / "agg.csv"
    _write_aggregate(csv, "snr_db", [0.0, 10.0])
    out = tmp_path / "fig.png"
    with pytest.raises(SchemaError, match="expects sweep variable"):
        plot(FigureSpec(inputs=(str(csv),), kind="distance_curve", output=str(out)))
    assert not out.is_file()


def test_empty_data_rows_error_and_no_file(tmp_path):
    csv = tmp_path / "agg.csv"
    csv.write_text(AGG_HEADER + "\n")
    out = tmp_path / "fig.png"
    with pytest.raises(SchemaError, match="no data rows"):
        plot(FigureSpec(inputs=(str(csv),), kind="snr_curve", output=str(out)))
    assert not out.is_file()


def test_schema_mismatch_cli_exit_with_column_diff(tmp_path, capsys):
    csv = tmp_path / "agg.csv"
    csv.write_text("method,value,mse\ncmf-cd,0.0,0.1\n")
    out = tmp_path / "fig.png"
    code = plotkit_main(["--in", str(csv), "--out", str(out), "--kind", "snr_curve"])
    assert code == 2
    err = capsys.readouterr().err
    assert "column mismatch" in err
    assert "mse_mean" in err  # names the missing columns
    assert not out.is_file()


def test_cli_rejects_missing_input(tmp_path, capsys):
    code = plotkit_main(
        ["--in", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "f.png"), "--kind", "snr_curve"]
    )
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_plot_never_mutates_input_and_is_idempotent(tmp_path):
    csv = tmp_path / "agg.csv"
    _write_aggregate(csv, "distance", [3.0, 4.5, 6.0])
    before = csv.read_bytes()
    out = tmp_path / "fig.png"
    info1 = plot(FigureSpec(inputs=(str(csv),), kind="distance_curve", output=str(out)))
    info2 = plot(FigureSpec(inputs=(str(csv),), kind="distance_curve", output=str(out)))
    assert csv.read_bytes() == before
    assert info1 == info2


def test_cloud3d_fabricated_exact_recovery(tmp_path):
    sources = [[0.5, -0.1, 0.0], [0.8, 0.1, -0.1]]
    peaks = [list(s) for s in sources]  # estimates coincide with truth
    pts = [(s, 1.0) for s in sources] + [([0.6, 0.0, 0.0], 0.002)]  # below 1% cut
    pm_path = tmp_path / "pm.csv"
    _write_powermap(pm_path, pts, sources, peaks)
    parsed = read_power_map(pm_path)
    assert np.array_equal(parsed.sources, parsed.peaks)
    out = tmp_path / "cloud.png"
    info = plot(FigureSpec(inputs=(str(pm_path),), kind="cloud3d", output=str(out)))
    assert out.is_file()
    assert info["rendered_points"] == 2  # the 0.002 point is below the 1% cut
    assert info["sources"] == 2 and info["peaks"] == 2


def _run_fusionloc(args, cwd):
    proc = subprocess.run(
        [sys.executable, "-m", "fusionloc.cli", *args],
        cwd=cwd,
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.mark.parametrize(
    "config,kind", [("desk_snr_sweep.json", "snr_curve"), ("desk_distance_sweep.json", "distance_curve")]
)
def test_A11_curves_from_real_sweep_csvs(tmp_path, config, kind):
    out_dir = tmp_path / "sweep"
    _run_fusionloc(
        ["sweep", "--config", str(CONFIG_DIR / config), "--runs", "2", "--out", str(out_dir)],
        cwd=tmp_path,
    )
    agg = out_dir / "aggregate.csv"
    rows = read_aggregate_csv(agg)
    assert len(rows) == 6  # 3 sweep values x 2 methods
    fig_path = tmp_path / f"{kind}.png"
    info = plot(FigureSpec(inputs=(str(agg),), kind=kind, output=str(fig_path)))
    assert fig_path.is_file()
    assert sorted(c["method"] for c in info["curves"]) == ["cmf-cd", "cmf-uot"]
    assert all(c["points"] == 3 for c in info["curves"])
    print(f"[PASS] A11/{kind}: 2 curves x 3 points with error bars from {config}")


def test_A11_cloud3d_from_real_solve(tmp_path):
    config = {
        "scene": str(CONFIG_DIR / "desk_scene.json"),
        "methods": ["cmf-uot"],
        "snapshots": 2048,
        "snr_db": None,
        "fusion": {"lambda": 200.0, "mu": 0.0005, "max_iters": 3000},
        "seed": 5,
        "out": str(tmp_path / "solve"),
    }
    cfg_path = tmp_path / "solve.json"
    cfg_path.write_text(json.dumps(config))
    _run_fusionloc(["solve", "--config", str(cfg_path)], cwd=tmp_path)
    pm_path = tmp_path / "solve" / "powermap_cmf-uot.csv"
    parsed = read_power_map(pm_path)
    assert len(parsed.sources) == 4 and len(parsed.peaks) == 4
    # noiseless solve: each extracted estimate sits on its ground-truth marker
    d = np.sqrt(((parsed.sources[:, None, :] - parsed.peaks[None, :, :]) ** 2).sum(-1))
    assert d.min(axis=1).max() < 1e-2
    out = tmp_path / "cloud.png"
    info = plot(FigureSpec(inputs=(str(pm_path),), kind="cloud3d", output=str(out)))
    assert out.is_file()
    assert info["sources"] == 4 and info["peaks"] == 4
    assert info["rendered_points"] >= 4
    worst = d.min(axis=1).max()
    print(f"[PASS] A11/cloud3d: estimates coincide with truth markers (worst {worst:.2e} m)")
