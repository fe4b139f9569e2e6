"""Command-line entry point: single solves, Monte-Carlo sweeps, and solver
traces, driven by a JSON config file (schema in README).

Exit codes: 0 success, 2 config error, 3 runtime/solver error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .evaluate import (
    KNOWN_METHODS,
    SWEEP_VARIABLES,
    Scenario,
    build_sweep_context,
    extract_peaks,
    run_monte_carlo,
    solve_method,
    write_aggregate_csv,
    write_results_csv,
    write_timings_csv,
)
from .scene import Scene, load_scene
from .signals import (
    add_noise_for_snr,
    empirical_covariance,
    load_covariance,
    snapshots_for_scene,
)
from .uot import FusionParams, solve_cmf_uot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    scene_path: Path
    scene: Scene
    methods: list[str]
    snapshots: int = 513
    snr_db: float = math.inf
    covariance_path: Optional[Path] = None
    fusion: FusionParams = field(default_factory=FusionParams)
    cd_max_iters: int = 5000
    cd_tol: Optional[float] = None
    gram_cap: int = 2048
    nnls_max_grid: int = 5000
    peak_count: Optional[int] = None
    merge_radius: Optional[float] = None
    miss_penalty: Optional[float] = None
    sweep_variable: Optional[str] = None
    sweep_values: list[float] = field(default_factory=list)
    runs: int = 1
    seed: int = 0
    out_dir: Path = Path("out")
    workers: int = 1
    config_hash: str = ""

    def scenario(self) -> Scenario:
        return Scenario(
            scene=self.scene,
            snapshots=self.snapshots,
            snr_db=self.snr_db,
            fusion=self.fusion,
            cd_max_iters=self.cd_max_iters,
            cd_tol=self.cd_tol,
            gram_cap=self.gram_cap,
            nnls_max_grid=self.nnls_max_grid,
            peak_count=self.peak_count,
            merge_radius=self.merge_radius,
            miss_penalty=self.miss_penalty,
        )


def _hash_config(resolved: dict) -> str:
    canonical = json.dumps(resolved, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse + validate a config file; ``overrides`` holds CLI flag values."""
    overrides = overrides or {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    resolved = dict(raw)
    for key in ("seed", "runs", "out", "methods"):
        if overrides.get(key) is not None:
            resolved[key] = overrides[key]

    scene_rel = resolved.get("scene")
    if not scene_rel:
        raise ConfigError("config must name a scene file")
    scene_path = (path.parent / scene_rel).resolve()
    if not scene_path.is_file():
        raise ConfigError(f"scene file not found: {scene_path}")
    try:
        scene = load_scene(scene_path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad scene file: {exc}") from exc

    if resolved.get("detections"):
        det_path = (path.parent / resolved["detections"]).resolve()
        if not det_path.is_file():
            raise ConfigError(f"detections file not found: {det_path}")
        det = json.loads(det_path.read_text(encoding="utf-8"))
        scene = Scene(
            array=scene.array,
            grid=scene.grid,
            sources=scene.sources,
            camera=scene.camera,
            detections=det,
            frequency_hz=scene.frequency_hz,
            sound_speed=scene.sound_speed,
        )

    covariance_path = None
    if resolved.get("covariance"):
        covariance_path = (path.parent / resolved["covariance"]).resolve()
        if not covariance_path.is_file():
            raise ConfigError(f"covariance file not found: {covariance_path}")

    methods = resolved.get("methods", ["cmf-cd"])
    if isinstance(methods, str):
        methods = [methods]
    if not methods:
        raise ConfigError("at least one method is required")
    for m in methods:
        if m not in KNOWN_METHODS:
            raise ConfigError(f"unknown method {m!r}; known: {', '.join(KNOWN_METHODS)}")

    fus = resolved.get("fusion", {})
    try:
        fusion = FusionParams(
            lam=float(fus.get("lambda", 200.0)),
            mu=float(fus.get("mu", 5e-4)),
            max_iters=int(fus.get("max_iters", 5000)),
            tol=None if fus.get("tol") is None else float(fus["tol"]),
            trace=bool(fus.get("trace", True)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad fusion params: {exc}") from exc

    solver = resolved.get("solver", {})
    peaks = resolved.get("peaks", {})
    sweep = resolved.get("sweep") or {}
    sweep_variable = sweep.get("variable")
    sweep_values = [float(v) for v in sweep.get("values", [])]
    if sweep_variable is not None and sweep_variable not in SWEEP_VARIABLES:
        raise ConfigError(f"unknown sweep variable {sweep_variable!r}")
    if any(not math.isfinite(v) for v in sweep_values):
        raise ConfigError("sweep values must be finite")

    runs = int(resolved.get("runs", 1))
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    snapshots = int(resolved.get("snapshots", 513))
    if snapshots < 1:
        raise ConfigError("snapshots must be >= 1")
    snr_db = resolved.get("snr_db")
    snr_db = math.inf if snr_db is None else float(snr_db)

    return ExperimentConfig(
        scene_path=scene_path,
        scene=scene,
        methods=list(methods),
        snapshots=snapshots,
        snr_db=snr_db,
        covariance_path=covariance_path,
        fusion=fusion,
        cd_max_iters=int(solver.get("cd_max_iters", 5000)),
        cd_tol=None if solver.get("cd_tol") is None else float(solver["cd_tol"]),
        gram_cap=int(solver.get("gram_cap", 2048)),
        nnls_max_grid=int(solver.get("nnls_max_grid", 5000)),
        peak_count=None if peaks.get("count") is None else int(peaks["count"]),
        merge_radius=None if peaks.get("merge_radius") is None else float(peaks["merge_radius"]),
        miss_penalty=None if peaks.get("miss_penalty") is None else float(peaks["miss_penalty"]),
        sweep_variable=sweep_variable,
        sweep_values=sweep_values,
        runs=runs,
        seed=int(resolved.get("seed", 0)),
        out_dir=Path(resolved.get("out", "out")),
        workers=int(resolved.get("workers", 1)),
        config_hash=_hash_config(resolved),
    )


def _meta(cfg: ExperimentConfig) -> dict:
    return {"tool": f"fusionloc v{__version__}", "config_hash": cfg.config_hash, "seed": cfg.seed}


def _r(x) -> str:
    return repr(float(x))


def write_power_map(path, cfg: ExperimentConfig, method: str, pm, objective: float, peaks, scene: Scene) -> None:
    """Sparse power-map dump: metadata header plus index,x,y,z,value rows."""
    grid = scene.grid
    values = pm.values
    idx = np.nonzero(values > 0.0)[0]
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# fusionloc powermap v1\n")
        for key, val in _meta(cfg).items():
            handle.write(f"# {key}={val}\n")
        handle.write(f"# method={method}\n")
        handle.write(f"# objective={_r(objective)}\n")
        handle.write(f"# grid_origin={','.join(_r(v) for v in grid.origin)}\n")
        handle.write(f"# grid_extents={','.join(_r(v) for v in grid.extents)}\n")
        handle.write(f"# grid_step={_r(grid.step)}\n")
        handle.write(f"# grid_counts={','.join(str(int(c)) for c in grid.counts)}\n")
        for pos, power in zip(scene.sources.positions, scene.sources.powers):
            handle.write(f"# source={','.join(_r(v) for v in pos)},{_r(power)}\n")
        for pos, power in zip(peaks.positions, peaks.powers):
            handle.write(f"# peak={','.join(_r(v) for v in pos)},{_r(power)}\n")
        handle.write("index,x,y,z,value\n")
        for m in idx:
            x, y, z = grid.points[m]
            handle.write(f"{m},{_r(x)},{_r(y)},{_r(z)},{_r(values[m])}\n")


def cmd_solve(cfg: ExperimentConfig) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    scenario = cfg.scenario()
    ctx = build_sweep_context(cfg.scene, scenario, need_prior="cmf-uot" in cfg.methods, strict_prior=True)
    if cfg.covariance_path is not None:
        cov = load_covariance(cfg.covariance_path)
    else:
        block = snapshots_for_scene(cfg.scene, cfg.snapshots, seed=[cfg.seed, 0])
        block = add_noise_for_snr(block, cfg.snr_db, seed=[cfg.seed, 1])
        cov = empirical_covariance(block)
    summary = {"config_hash": cfg.config_hash, "seed": cfg.seed, "version": __version__, "methods": {}}
    for method in cfg.methods:
        start = time.perf_counter()
        pm, iterations, objective = solve_method(method, ctx, cov, scenario)
        wall = time.perf_counter() - start
        peaks = extract_peaks(pm, cfg.scene.grid, ctx.peak_count, ctx.merge_radius)
        out_path = cfg.out_dir / f"powermap_{method}.csv"
        write_power_map(out_path, cfg, method, pm, objective, peaks, cfg.scene)
        summary["methods"][method] = {
            "objective": objective,
            "wall_time_s": wall,
            "iterations": iterations,
            "power_map": out_path.name,
            "peaks": [
                {"position": list(map(float, p)), "power": float(w)}
                for p, w in zip(peaks.positions, peaks.powers)
            ],
        }
        print(f"method={method} objective={objective:.6e} wall={wall:.3f}s iters={iterations}")
        for entry in summary["methods"][method]["peaks"]:
            x, y, z = entry["position"]
            print(f"  peak ({x:+.3f}, {y:+.3f}, {z:+.3f}) power={entry['power']:.4g}")
    (cfg.out_dir / "solve_summary.json").write_text(
        json.dumps(summary, indent=2), encoding="utf-8"
    )
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if cfg.sweep_variable is None or not cfg.sweep_values:
        raise ConfigError("sweep command needs a sweep block with variable and values")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    results = run_monte_carlo(
        cfg.scenario(),
        cfg.methods,
        cfg.sweep_variable,
        cfg.sweep_values,
        cfg.runs,
        cfg.seed,
        workers=cfg.workers,
    )
    if not results:
        raise RuntimeError("all sweep records failed")
    meta = _meta(cfg)
    write_results_csv(results, cfg.out_dir / "results.csv", meta)
    write_aggregate_csv(results, cfg.out_dir / "aggregate.csv", meta)
    write_timings_csv(results, cfg.out_dir / "timings.csv", meta)
    from .evaluate import aggregate_results

    for row in aggregate_results(results):
        print(
            f"{row['method']:>9} {row['variable']}={row['value']:g} "
            f"mse={row['mse_mean']:.4g} +/- {row['mse_std']:.4g} ({row['runs']} runs)"
        )
    return EXIT_OK


def cmd_trace(cfg: ExperimentConfig) -> int:
    """Single traced cmf-uot solve; writes per-update trace.csv."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    scenario = cfg.scenario()
    ctx = build_sweep_context(cfg.scene, scenario, need_prior=True, strict_prior=True)
    block = snapshots_for_scene(cfg.scene, cfg.snapshots, seed=[cfg.seed, 0])
    block = add_noise_for_snr(block, cfg.snr_db, seed=[cfg.seed, 1])
    cov = empirical_covariance(block)
    start = time.perf_counter()
    _, _, trace = solve_cmf_uot(
        ctx.transfer, cov, ctx.cost, ctx.prior.weights, scenario.fusion,
        gram_cap=scenario.gram_cap,
    )
    wall = time.perf_counter() - start
    path = cfg.out_dir / "trace.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for key, val in _meta(cfg).items():
            handle.write(f"# {key}={val}\n")
        handle.write(f"# initial_objective={_r(trace.initial_objective)}\n")
        handle.write("iteration,m,n,delta,objective,fit,transport,mass\n")
        for i in range(trace.rows):
            handle.write(
                f"{i + 1},{trace.m[i]},{trace.n[i]},{_r(trace.delta[i])},"
                f"{_r(trace.objective[i])},{_r(trace.fit[i])},{_r(trace.transport[i])},{_r(trace.mass[i])}\n"
            )
    print(
        f"trace: {trace.rows} updates in {wall:.3f}s, objective "
        f"{trace.initial_objective:.6e} -> {trace.final_objective:.6e}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusionloc",
        description="Array-camera fused 3D source localization: solves, sweeps, traces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "run one solve per method, write power maps"),
        ("sweep", "Monte-Carlo sweep over SNR or distance, write CSVs"),
        ("trace", "single traced cmf-uot solve, write per-update CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override base seed")
        p.add_argument("--runs", type=int, default=None, help="override run count")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument(
            "--method",
            action="append",
            default=None,
            help="override method list (repeatable)",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "runs": args.runs,
        "out": args.out,
        "methods": args.method,
    }
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    command = {"solve": cmd_solve, "sweep": cmd_sweep, "trace": cmd_trace}[args.command]
    try:
        return command(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
