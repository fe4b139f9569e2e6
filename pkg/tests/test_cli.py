import json
import math

import numpy as np
import pytest

from fusionloc import (
    FusionParams,
    add_noise_for_snr,
    build_transfer_matrix,
    cmf_objective,
    cmf_solve_cd,
    empirical_covariance,
    load_scene,
    snapshots_for_scene,
)
from fusionloc.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, load_config, main

from conftest import random_array, small_grid


def _scene_dict(with_detections=True):
    array = random_array(12, seed=42)
    grid = small_grid()
    spec = {
        "frequency_hz": 4000.0,
        "sound_speed_mps": 343.0,
        "array": {"sensors": array.sensors.tolist()},
        "grid": {"origin": [0.5, -0.3, -0.2], "extents": [0.45, 0.45, 0.2], "step": 0.05},
        "sources": {
            "positions": [grid.points[10].tolist(), grid.points[250].tolist()],
            "powers": [1.0, 2.0],
        },
        "camera": {
            "position": [0.7, -1.2, 0.0],
            "plane_point": [0.7, -0.3, 0.0],
            "plane_normal": [0.0, 1.0, 0.0],
        },
    }
    if with_detections:
        spec["detections"] = {"mode": "project_sources"}
    return spec


def _write_setup(tmp_path, config_extra=None, scene_extra=None, with_detections=True):
    scene = _scene_dict(with_detections)
    if scene_extra:
        scene.update(scene_extra)
    (tmp_path / "scene.json").write_text(json.dumps(scene))
    config = {
        "scene": "scene.json",
        "methods": ["cmf-cd"],
        "snapshots": 64,
        "seed": 11,
        "out": str(tmp_path / "out"),
        "fusion": {"lambda": 50.0, "mu": 1e-3, "max_iters": 1500},
        "solver": {"cd_max_iters": 1500},
    }
    if config_extra:
        config.update(config_extra)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    return cfg_path


def _read_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return lines[0], lines[1:]


def test_solve_writes_powermap_and_consistent_summary(tmp_path):
    cfg_path = _write_setup(tmp_path)
    assert main(["solve", "--config", str(cfg_path)]) == EXIT_OK
    out = tmp_path / "out"
    pm_path = out / "powermap_cmf-cd.csv"
    assert pm_path.is_file()
    summary = json.loads((out / "solve_summary.json").read_text())
    reported = summary["methods"]["cmf-cd"]["objective"]

    # rebuild b from the sparse dump and re-evaluate the objective
    header, rows = _read_rows(pm_path)
    assert header == "index,x,y,z,value"
    scene = load_scene(tmp_path / "scene.json")
    b = np.zeros(scene.grid.size)
    for row in rows:
        parts = row.split(",")
        b[int(parts[0])] = float(parts[4])
        np.testing.assert_allclose(
            [float(p) for p in parts[1:4]], scene.grid.points[int(parts[0])], atol=1e-12
        )
    transfer = build_transfer_matrix(scene.array, scene.grid, scene.frequency_hz, scene.sound_speed)
    block = snapshots_for_scene(scene, 64, seed=[11, 0])
    block = add_noise_for_snr(block, math.inf, seed=[11, 1])
    cov = empirical_covariance(block)
    assert cmf_objective(transfer, b, cov) == pytest.approx(reported, rel=1e-9)


def test_solve_unknown_method_exits_2(tmp_path):
    cfg_path = _write_setup(tmp_path, config_extra={"methods": ["definitely-not-a-method"]})
    assert main(["solve", "--config", str(cfg_path)]) == EXIT_CONFIG


def test_solve_empty_prior_exits_3(tmp_path, capsys):
    cfg_path = _write_setup(
        tmp_path,
        config_extra={"methods": ["cmf-uot"]},
        scene_extra={"detections": {"anchors": []}},
    )
    assert main(["solve", "--config", str(cfg_path)]) == EXIT_RUNTIME
    assert "empty prior" in capsys.readouterr().err


def test_missing_config_and_scene_exit_2(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"scene": "missing_scene.json"}))
    assert main(["solve", "--config", str(cfg)]) == EXIT_CONFIG
    cfg.write_text("not json at all {")
    assert main(["solve", "--config", str(cfg)]) == EXIT_CONFIG


def test_cli_rejects_bad_sweep_config(tmp_path):
    cfg_path = _write_setup(tmp_path)  # no sweep block
    assert main(["sweep", "--config", str(cfg_path)]) == EXIT_CONFIG
    cfg_path = _write_setup(tmp_path, config_extra={"runs": 0})
    assert main(["sweep", "--config", str(cfg_path)]) == EXIT_CONFIG
    cfg_path = _write_setup(
        tmp_path, config_extra={"sweep": {"variable": "bogus", "values": [1.0]}}
    )
    assert main(["sweep", "--config", str(cfg_path)]) == EXIT_CONFIG


def test_sweep_row_counts_and_aggregates(tmp_path):
    cfg_path = _write_setup(
        tmp_path,
        config_extra={
            "methods": ["cmf-cd", "cmf-uot"],
            "sweep": {"variable": "snr_db", "values": [0.0, 10.0]},
            "runs": 2,
        },
    )
    assert main(["sweep", "--config", str(cfg_path)]) == EXIT_OK
    out = tmp_path / "out"
    _, rows = _read_rows(out / "results.csv")
    assert len(rows) == 8  # 2 values x 2 runs x 2 methods
    _, agg = _read_rows(out / "aggregate.csv")
    assert len(agg) == 4  # 2 values x 2 methods
    _, tim = _read_rows(out / "timings.csv")
    assert len(tim) == 8


def test_sweep_reruns_byte_identical(tmp_path):
    config_extra = {
        "methods": ["cmf-cd", "cmf-uot"],
        "sweep": {"variable": "snr_db", "values": [5.0]},
        "runs": 2,
    }
    cfg_path = _write_setup(tmp_path, config_extra=config_extra)
    assert main(["sweep", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["sweep", "--config", str(cfg_path), "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("results.csv", "aggregate.csv"):
        _, rows_a = _read_rows(tmp_path / "a" / name)
        _, rows_b = _read_rows(tmp_path / "b" / name)
        assert rows_a == rows_b


def test_flag_overrides_config_scalars(tmp_path):
    cfg_path = _write_setup(
        tmp_path,
        config_extra={"sweep": {"variable": "snr_db", "values": [5.0]}, "runs": 3},
    )
    out = tmp_path / "alt"
    code = main(
        [
            "sweep",
            "--config",
            str(cfg_path),
            "--runs",
            "1",
            "--seed",
            "99",
            "--out",
            str(out),
            "--method",
            "cmf-cd",
        ]
    )
    assert code == EXIT_OK
    _, rows = _read_rows(out / "results.csv")
    assert len(rows) == 1
    assert rows[0].split(",")[3] == "99"


def test_trace_objective_non_increasing(tmp_path):
    cfg_path = _write_setup(tmp_path, config_extra={"snr_db": 10.0})
    assert main(["trace", "--config", str(cfg_path)]) == EXIT_OK
    header, rows = _read_rows(tmp_path / "out" / "trace.csv")
    assert header == "iteration,m,n,delta,objective,fit,transport,mass"
    obj = [float(r.split(",")[4]) for r in rows]
    assert len(obj) > 0
    assert all(b <= a for a, b in zip(obj, obj[1:]))
    meta = (tmp_path / "out" / "trace.csv").read_text().splitlines()
    initial = [l for l in meta if l.startswith("# initial_objective=")]
    assert float(initial[0].split("=")[1]) >= obj[0]


def test_trace_with_zero_weights_matches_cmf_cd(tmp_path):
    cfg_path = _write_setup(
        tmp_path,
        config_extra={"fusion": {"lambda": 0.0, "mu": 0.0, "max_iters": 400}, "snr_db": 0.0},
    )
    assert main(["trace", "--config", str(cfg_path)]) == EXIT_OK
    _, rows = _read_rows(tmp_path / "out" / "trace.csv")

    scene = load_scene(tmp_path / "scene.json")
    transfer = build_transfer_matrix(scene.array, scene.grid, scene.frequency_hz, scene.sound_speed)
    block = snapshots_for_scene(scene, 64, seed=[11, 0])
    block = add_noise_for_snr(block, 0.0, seed=[11, 1])
    cov = empirical_covariance(block)
    _, trace_cd = cmf_solve_cd(transfer, cov, max_iters=400)
    assert len(rows) == trace_cd.iterations
    for row, m, delta, obj in zip(rows, trace_cd.m, trace_cd.delta, trace_cd.objective):
        parts = row.split(",")
        assert int(parts[1]) == m
        assert float(parts[3]) == delta  # repr round-trips exactly
        assert float(parts[4]) == obj


def test_outputs_carry_metadata_headers(tmp_path):
    cfg_path = _write_setup(
        tmp_path,
        config_extra={"sweep": {"variable": "snr_db", "values": [5.0]}, "runs": 1},
    )
    assert main(["sweep", "--config", str(cfg_path)]) == EXIT_OK
    for name in ("results.csv", "aggregate.csv", "timings.csv"):
        text = (tmp_path / "out" / name).read_text()
        assert "# tool=fusionloc v" in text
        assert "# config_hash=" in text
        assert "# seed=11" in text


def test_load_config_parses_fusion_and_solver_blocks(tmp_path):
    cfg_path = _write_setup(
        tmp_path,
        config_extra={
            "fusion": {"lambda": 123.0, "mu": 0.25, "max_iters": 77, "tol": 1e-9},
            "solver": {"cd_max_iters": 88, "gram_cap": 4096, "nnls_max_grid": 600},
            "peaks": {"count": 3, "merge_radius": 0.2},
        },
    )
    cfg = load_config(cfg_path, {})
    assert cfg.fusion == FusionParams(lam=123.0, mu=0.25, max_iters=77, tol=1e-9)
    assert cfg.cd_max_iters == 88 and cfg.gram_cap == 4096 and cfg.nnls_max_grid == 600
    assert cfg.peak_count == 3 and cfg.merge_radius == 0.2
    assert len(cfg.config_hash) == 12


def test_covariance_file_input(tmp_path):
    from fusionloc.signals import save_covariance

    scene_dict = _scene_dict()
    (tmp_path / "scene.json").write_text(json.dumps(scene_dict))
    scene = load_scene(tmp_path / "scene.json")
    block = snapshots_for_scene(scene, 32, seed=[7, 0])
    cov = empirical_covariance(block)
    save_covariance(cov, tmp_path / "cov.npz")
    cfg = {
        "scene": "scene.json",
        "covariance": "cov.npz",
        "methods": ["cmf-cd"],
        "solver": {"cd_max_iters": 800},
        "out": str(tmp_path / "out"),
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["solve", "--config", str(cfg_path)]) == EXIT_OK
    summary = json.loads((tmp_path / "out" / "solve_summary.json").read_text())
    assert "cmf-cd" in summary["methods"]


def test_cli_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["not-a-command"])
    assert exc.value.code == 2
