"""Benchmark machinery: peak extraction from power maps, optimal-assignment
MSE against ground truth, and the seeded Monte-Carlo sweep driver."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .camera import DetectionPrior, angular_cost, resolve_detections
from .cmf import PowerMap, cmf_objective, cmf_solve_cd, cmf_solve_nnls
from .scene import Grid, Scene, build_transfer_matrix
from .signals import (
    add_noise_for_snr,
    empirical_covariance,
    source_steering,
    synthesize_snapshots,
)
from .uot import FusionParams, solve_cmf_uot

KNOWN_METHODS = ("cmf-nnls", "cmf-cd", "cmf-uot")
SWEEP_VARIABLES = ("snr_db", "distance")


@dataclass(frozen=True)
class EstimateSet:
    """Discrete source estimates: positions (K, 3) and matched powers (K,)."""

    positions: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        pw = np.asarray(self.powers, dtype=float).reshape(-1)
        if len(pos) != len(pw):
            raise ValueError("positions and powers disagree in length")
        if np.any(pw <= 0.0):
            raise ValueError("estimate powers must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "powers", pw)

    @property
    def count(self) -> int:
        return len(self.powers)


@dataclass(frozen=True)
class SweepResult:
    """One Monte-Carlo record."""

    method: str
    variable: str
    value: float
    seed: int
    sq_errors: tuple[float, ...]
    mse: float
    wall_time_s: float
    iterations: int
    objective: float
    n_estimates: int

    def __post_init__(self):
        if not math.isfinite(self.mse) or any(not math.isfinite(e) for e in self.sq_errors):
            raise ValueError("sweep result must be finite")


@dataclass
class Scenario:
    """Everything run_monte_carlo needs besides the sweep itself."""

    scene: Scene
    snapshots: int = 513
    snr_db: float = math.inf  # operating point when the sweep variable is distance
    fusion: FusionParams = field(default_factory=FusionParams)
    cd_max_iters: int = 5000
    cd_tol: Optional[float] = None
    gram_cap: int = 2048
    nnls_max_grid: int = 5000
    peak_count: Optional[int] = None  # None -> number of true sources
    merge_radius: Optional[float] = None  # None -> 3 * grid step
    miss_penalty: Optional[float] = None  # None -> squared grid diagonal


def extract_peaks(power, grid: Grid, count: int, merge_radius: float) -> EstimateSet:
    """Greedy cluster extraction from a power map.

    Repeatedly takes the largest remaining value, groups every grid point
    within ``merge_radius`` of it into one cluster, reports the power-weighted
    centroid and summed power, and suppresses the cluster; stops after
    ``count`` clusters or when no positive mass remains.
    """
    values = power.values if isinstance(power, PowerMap) else np.asarray(power, dtype=float)
    if count < 1:
        raise ValueError("peak count must be >= 1")
    if merge_radius < grid.step:
        raise ValueError("merge radius must be at least the grid step")
    work = values.copy()
    r2 = merge_radius * merge_radius
    positions = []
    powers = []
    for _ in range(count):
        idx = int(np.argmax(work))
        if work[idx] <= 0.0:
            break
        center = grid.points[idx]
        mask = np.sum((grid.points - center) ** 2, axis=1) <= r2
        cluster_power = float(work[mask].sum())
        # offset form: a lone spike yields its grid point exactly
        offsets = grid.points[mask] - center
        centroid = center + (work[mask][:, None] * offsets).sum(axis=0) / cluster_power
        positions.append(centroid)
        powers.append(cluster_power)
        work[mask] = 0.0
    if not positions:
        return EstimateSet(np.empty((0, 3)), np.empty(0))
    return EstimateSet(np.asarray(positions), np.asarray(powers))


def match_mse(
    estimated_positions,
    truth_positions,
    miss_penalty: float,
) -> tuple[np.ndarray, float]:
    """Optimal one-to-one matching of estimates to truths.

    Returns the per-truth squared distances (missed truths get
    ``miss_penalty``) and their mean. Exceeding estimates are ignored.
    """
    est = np.asarray(estimated_positions, dtype=float).reshape(-1, 3)
    truth = np.asarray(truth_positions, dtype=float).reshape(-1, 3)
    if len(truth) == 0:
        return np.empty(0), 0.0
    errors = np.full(len(truth), float(miss_penalty))
    if len(est) > 0:
        d2 = np.sum((truth[:, None, :] - est[None, :, :]) ** 2, axis=-1)
        rows, cols = linear_sum_assignment(d2)
        errors[rows] = d2[rows, cols]
    return errors, float(errors.mean())


@dataclass
class SweepContext:
    """Per-sweep-value immutable solve inputs, shared across runs/threads."""

    scene: Scene
    transfer: object
    steering: np.ndarray
    prior: Optional[DetectionPrior]
    cost: Optional[np.ndarray]
    merge_radius: float
    peak_count: int
    miss_penalty: float
    prior_error: Optional[str] = None


def build_sweep_context(
    scene: Scene, scenario: Scenario, need_prior: bool, strict_prior: bool = False
) -> SweepContext:
    transfer = build_transfer_matrix(
        scene.array, scene.grid, scene.frequency_hz, scene.sound_speed
    )
    prior = None
    cost = None
    prior_error = None
    if need_prior:
        # a broken prior fails only the methods that need it; the sweep and the
        # remaining methods continue
        try:
            prior = resolve_detections(scene)
            if scene.camera is None:
                raise ValueError("cmf-uot needs a camera pose for the angular cost")
            cost = angular_cost(scene.grid, prior, scene.camera.position)
        except ValueError as exc:
            if strict_prior:
                raise
            prior_error = str(exc)
    return SweepContext(
        scene=scene,
        transfer=transfer,
        steering=source_steering(scene),
        prior=prior,
        cost=cost,
        merge_radius=(
            scenario.merge_radius if scenario.merge_radius is not None else 3.0 * scene.grid.step
        ),
        peak_count=(
            scenario.peak_count if scenario.peak_count is not None else scene.sources.count
        ),
        miss_penalty=(
            scenario.miss_penalty if scenario.miss_penalty is not None else scene.grid.diagonal**2
        ),
        prior_error=prior_error,
    )


def solve_method(method: str, ctx: SweepContext, cov, scenario: Scenario):
    """Run one solver; returns (PowerMap, iterations, final_objective)."""
    if method == "cmf-nnls":
        pm = cmf_solve_nnls(ctx.transfer, cov, max_grid=scenario.nnls_max_grid)
        return pm, 0, cmf_objective(ctx.transfer, pm.values, cov)
    if method == "cmf-cd":
        pm, trace = cmf_solve_cd(
            ctx.transfer,
            cov,
            max_iters=scenario.cd_max_iters,
            tol=scenario.cd_tol,
            gram_cap=scenario.gram_cap,
        )
        return pm, trace.iterations, trace.final_objective
    if method == "cmf-uot":
        if ctx.cost is None:
            raise ValueError(ctx.prior_error or "empty prior: use cmf_solve_cd")
        _, pm, trace = solve_cmf_uot(
            ctx.transfer,
            cov,
            ctx.cost,
            ctx.prior.weights,
            scenario.fusion,
            gram_cap=scenario.gram_cap,
        )
        return pm, trace.iterations, trace.final_objective
    raise ValueError(f"unknown method {method!r}")


def _run_single(
    ctx: SweepContext,
    scenario: Scenario,
    methods: Sequence[str],
    variable: str,
    value: float,
    seed: int,
) -> tuple[list[SweepResult], list[tuple[str, float, int, str]]]:
    block = synthesize_snapshots(
        ctx.steering, ctx.scene.sources.powers, scenario.snapshots, seed=[seed, 0]
    )
    snr = value if variable == "snr_db" else scenario.snr_db
    block = add_noise_for_snr(block, snr, seed=[seed, 1])
    cov = empirical_covariance(block)
    records = []
    failures = []
    for method in methods:
        start = time.perf_counter()
        try:
            pm, iterations, objective = solve_method(method, ctx, cov, scenario)
        except (ValueError, RuntimeError) as exc:
            failures.append((method, float(value), seed, str(exc)))
            continue
        wall = time.perf_counter() - start
        peaks = extract_peaks(pm, ctx.scene.grid, ctx.peak_count, ctx.merge_radius)
        sq_errors, mse = match_mse(
            peaks.positions, ctx.scene.sources.positions, ctx.miss_penalty
        )
        records.append(
            SweepResult(
                method=method,
                variable=variable,
                value=float(value),
                seed=seed,
                sq_errors=tuple(float(e) for e in sq_errors),
                mse=mse,
                wall_time_s=wall,
                iterations=iterations,
                objective=objective,
                n_estimates=peaks.count,
            )
        )
    return records, failures


def run_monte_carlo(
    scenario: Scenario,
    methods: Sequence[str],
    sweep_variable: str,
    sweep_values: Sequence[float],
    runs: int,
    base_seed: int,
    workers: int = 1,
) -> list[SweepResult]:
    """Seeded sweep: for each value and each run seed base_seed + r, synthesize
    snapshots, inject noise, solve every method on the same covariance, and
    score localization MSE. Deterministic for a fixed base seed regardless of
    ``workers``; results are ordered by (value, run, method).

    Solver failures are reported per record and skipped, the sweep continues.
    """
    for method in methods:
        if method not in KNOWN_METHODS:
            raise ValueError(f"unknown method {method!r}; known: {KNOWN_METHODS}")
    if sweep_variable not in SWEEP_VARIABLES:
        raise ValueError(f"unknown sweep variable {sweep_variable!r}")
    if runs < 1:
        raise ValueError("need at least one run")
    values = [float(v) for v in sweep_values]
    if not all(math.isfinite(v) for v in values):
        raise ValueError("sweep values must be finite")
    need_prior = "cmf-uot" in methods

    contexts = []
    for value in values:
        scene = (
            scenario.scene
            if sweep_variable == "snr_db"
            else scenario.scene.translated_to_distance(value)
        )
        contexts.append(build_sweep_context(scene, scenario, need_prior))

    jobs = [(vi, r) for vi in range(len(values)) for r in range(runs)]

    def job(args):
        vi, r = args
        return _run_single(
            contexts[vi], scenario, methods, sweep_variable, values[vi], base_seed + r
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, jobs))
    else:
        outcomes = [job(j) for j in jobs]

    results: list[SweepResult] = []
    failures: list[tuple[str, float, int, str]] = []
    for records, fails in outcomes:
        results.extend(records)
        failures.extend(fails)
    if failures:
        import warnings

        for method, value, seed, message in failures:
            warnings.warn(
                f"{method} failed at value={value} seed={seed}: {message}", RuntimeWarning
            )
    return results


def aggregate_results(results: Sequence[SweepResult]):
    """Per (method, value) mean and stddev (population) of the MSE, preserving
    first-appearance order. Returns a list of dict rows."""
    order: list[tuple[str, float]] = []
    groups: dict[tuple[str, float], list[SweepResult]] = {}
    for r in results:
        key = (r.method, r.value)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    rows = []
    for method, value in order:
        bucket = groups[(method, value)]
        mses = np.array([r.mse for r in bucket])
        rows.append(
            {
                "method": method,
                "variable": bucket[0].variable,
                "value": value,
                "runs": len(bucket),
                "mse_mean": float(mses.mean()),
                "mse_std": float(mses.std()),
            }
        )
    return rows


def _write_csv(path, meta: dict, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for key, val in meta.items():
            handle.write(f"# {key}={val}\n")
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(row) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_results_csv(results: Sequence[SweepResult], path, meta: dict) -> None:
    """Per-run rows; deterministic columns only (timing lives in timings.csv)."""
    rows = [
        [
            r.method,
            r.variable,
            _fmt(r.value),
            str(r.seed),
            str(r.iterations),
            _fmt(r.objective),
            str(r.n_estimates),
            _fmt(r.mse),
            ";".join(_fmt(e) for e in r.sq_errors),
        ]
        for r in results
    ]
    _write_csv(
        path,
        meta,
        ["method", "variable", "value", "seed", "iterations", "objective", "n_estimates", "mse", "sq_errors"],
        rows,
    )


def write_aggregate_csv(results: Sequence[SweepResult], path, meta: dict) -> None:
    rows = [
        [
            a["method"],
            a["variable"],
            _fmt(a["value"]),
            str(a["runs"]),
            _fmt(a["mse_mean"]),
            _fmt(a["mse_std"]),
        ]
        for a in aggregate_results(results)
    ]
    _write_csv(path, meta, ["method", "variable", "value", "runs", "mse_mean", "mse_std"], rows)


def write_timings_csv(results: Sequence[SweepResult], path, meta: dict) -> None:
    rows = [
        [r.method, r.variable, _fmt(r.value), str(r.seed), _fmt(r.wall_time_s), str(r.iterations)]
        for r in results
    ]
    _write_csv(path, meta, ["method", "variable", "value", "seed", "wall_time_s", "iterations"], rows)
