"""Figure rendering from fusionloc output files.

Consumes only the documented file formats: the aggregate sweep CSV
(method,variable,value,runs,mse_mean,mse_std) for MSE curves and the sparse
power-map CSV (index,x,y,z,value with # source=/# peak= header lines) for 3D
point clouds. Inputs are never modified; rerunning on the same files yields
the same figure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("snr_curve", "distance_curve", "cloud3d")

AGGREGATE_COLUMNS = ["method", "variable", "value", "runs", "mse_mean", "mse_std"]
POWERMAP_COLUMNS = ["index", "x", "y", "z", "value"]

# power-map points below this fraction of the maximum are dropped for visibility
CLOUD_THRESHOLD = 0.01


class SchemaError(ValueError):
    """Input file does not match the documented CSV contract."""


@dataclass(frozen=True)
class FigureSpec:
    inputs: tuple[str, ...]
    kind: str
    output: str
    title: Optional[str] = None
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None
    xlim: Optional[tuple[float, float]] = None
    ylim: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise SchemaError("at least one input file is required")
        for path in self.inputs:
            if not Path(path).is_file():
                raise SchemaError(f"input file not found: {path}")


def _split_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l]
    rows = [l for l in lines if not l.startswith("#")]
    if not rows:
        raise SchemaError(f"{path}: no header row found")
    return rows[0].split(","), [r.split(",") for r in rows[1:]]


def _check_columns(path, header: list[str], expected: list[str]) -> None:
    if header != expected:
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        raise SchemaError(
            f"{path}: column mismatch; expected {expected}, found {header}"
            f" (missing {missing or 'none'}, unexpected {extra or 'none'})"
        )


def read_aggregate_csv(path) -> list[dict]:
    """Rows of the aggregate sweep CSV as dicts with typed fields."""
    header, raw = _split_csv(path)
    _check_columns(path, header, AGGREGATE_COLUMNS)
    rows = []
    for parts in raw:
        if len(parts) != len(header):
            raise SchemaError(f"{path}: ragged row {parts}")
        rows.append(
            {
                "method": parts[0],
                "variable": parts[1],
                "value": float(parts[2]),
                "runs": int(parts[3]),
                "mse_mean": float(parts[4]),
                "mse_std": float(parts[5]),
            }
        )
    return rows


@dataclass
class PowerMapFile:
    points: np.ndarray  # (n, 3)
    values: np.ndarray  # (n,)
    sources: np.ndarray  # (k, 3) ground-truth markers from the header
    peaks: np.ndarray  # (k', 3) extracted estimates from the header
    meta: dict = field(default_factory=dict)


def read_power_map(path) -> PowerMapFile:
    """Sparse power-map file: # metadata header plus index,x,y,z,value rows."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    meta = {}
    sources = []
    peaks = []
    data_lines = []
    for line in lines:
        if line.startswith("# source="):
            sources.append([float(v) for v in line.split("=", 1)[1].split(",")][:3])
        elif line.startswith("# peak="):
            peaks.append([float(v) for v in line.split("=", 1)[1].split(",")][:3])
        elif line.startswith("# "):
            if "=" in line:
                key, val = line[2:].split("=", 1)
                meta[key] = val
        elif line:
            data_lines.append(line)
    if not data_lines:
        raise SchemaError(f"{path}: no header row found")
    header = data_lines[0].split(",")
    _check_columns(path, header, POWERMAP_COLUMNS)
    pts = []
    vals = []
    for row in data_lines[1:]:
        parts = row.split(",")
        if len(parts) != 5:
            raise SchemaError(f"{path}: ragged row {parts}")
        pts.append([float(parts[1]), float(parts[2]), float(parts[3])])
        vals.append(float(parts[4]))
    return PowerMapFile(
        points=np.asarray(pts, dtype=float).reshape(-1, 3),
        values=np.asarray(vals, dtype=float),
        sources=np.asarray(sources, dtype=float).reshape(-1, 3),
        peaks=np.asarray(peaks, dtype=float).reshape(-1, 3),
        meta=meta,
    )


def _plot_curves(spec: FigureSpec, expected_variable: str) -> dict:
    rows = []
    for path in spec.inputs:
        rows.extend(read_aggregate_csv(path))
    if not rows:
        raise SchemaError("no data rows in input; refusing to render an empty figure")
    variables = sorted({r["variable"] for r in rows})
    if variables != [expected_variable]:
        raise SchemaError(
            f"{spec.kind} expects sweep variable {expected_variable!r}, found {variables}"
        )
    methods = []
    for r in rows:
        if r["method"] not in methods:
            methods.append(r["method"])

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    curves = []
    for method in methods:
        pts = sorted((r["value"], r["mse_mean"], r["mse_std"]) for r in rows if r["method"] == method)
        x = [p[0] for p in pts]
        y = [p[1] for p in pts]
        err = [p[2] for p in pts]
        ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=method)
        curves.append({"method": method, "points": len(pts)})
    if all(r["mse_mean"] > 0.0 for r in rows):
        ax.set_yscale("log")
    ax.set_xlabel(spec.xlabel or ("SNR (dB)" if expected_variable == "snr_db" else "source distance (m)"))
    ax.set_ylabel(spec.ylabel or "MSE (m^2)")
    if spec.title:
        ax.set_title(spec.title)
    if spec.xlim:
        ax.set_xlim(*spec.xlim)
    if spec.ylim:
        ax.set_ylim(*spec.ylim)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)
    return {"kind": spec.kind, "curves": curves, "output": spec.output}


def _plot_cloud(spec: FigureSpec) -> dict:
    if len(spec.inputs) != 1:
        raise SchemaError("cloud3d takes exactly one power-map file")
    pmap = read_power_map(spec.inputs[0])
    if len(pmap.values) == 0:
        raise SchemaError("no data rows in input; refusing to render an empty figure")
    keep = pmap.values >= CLOUD_THRESHOLD * pmap.values.max()
    pts = pmap.points[keep]
    vals = pmap.values[keep]

    fig = plt.figure(figsize=(7.0, 5.5))
    ax = fig.add_subplot(projection="3d")
    sc = ax.scatter(
        pts[:, 0], pts[:, 1], pts[:, 2],
        c=vals, s=18.0 + 60.0 * vals / vals.max(), cmap="viridis", alpha=0.8,
        label="power map",
    )
    if len(pmap.sources):
        ax.scatter(
            pmap.sources[:, 0], pmap.sources[:, 1], pmap.sources[:, 2],
            marker="x", s=120.0, c="red", linewidths=2.5, label="ground truth",
        )
    if len(pmap.peaks):
        ax.scatter(
            pmap.peaks[:, 0], pmap.peaks[:, 1], pmap.peaks[:, 2],
            marker="^", s=70.0, facecolors="none", edgecolors="black", label="estimates",
        )
    fig.colorbar(sc, ax=ax, shrink=0.6, label="power")
    ax.set_xlabel(spec.xlabel or "x (m)")
    ax.set_ylabel(spec.ylabel or "y (m)")
    ax.set_zlabel("z (m)")
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)
    return {
        "kind": spec.kind,
        "rendered_points": int(keep.sum()),
        "sources": len(pmap.sources),
        "peaks": len(pmap.peaks),
        "output": spec.output,
    }


def plot(spec: FigureSpec) -> dict:
    """Render the figure described by ``spec``; returns a summary dict.

    Raises SchemaError (and writes nothing) when the input does not match the
    documented CSV contract or holds no data rows.
    """
    if spec.kind == "snr_curve":
        return _plot_curves(spec, "snr_db")
    if spec.kind == "distance_curve":
        return _plot_curves(spec, "distance")
    return _plot_cloud(spec)
