"""Scene geometry: sensor array, search grid, ground-truth sources, camera,
and the free-field transfer matrix linking grid points to sensors.

All positions are in meters, frequencies in Hz. The propagation model is a
free-field monopole exp(-j*k*r)/r with wavenumber k = 2*pi*f/c; the 1/(4*pi)
constant is dropped since it only rescales estimated powers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def _as_points(x, name: str, dim: int = 3) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ValueError(f"{name} must be an (n, {dim}) array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} contains non-finite values")
    return pts


@dataclass(frozen=True)
class ArrayGeometry:
    """Sensor positions, shape (I, 3)."""

    sensors: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.sensors, "sensors")
        if len(pts) < 2:
            raise ValueError("array needs at least two sensors")
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        if d2.min() <= 0.0:
            raise ValueError("sensors must be pairwise distinct")
        object.__setattr__(self, "sensors", pts)

    @property
    def count(self) -> int:
        return len(self.sensors)

    @property
    def centroid(self) -> np.ndarray:
        return self.sensors.mean(axis=0)


@dataclass(frozen=True)
class Grid:
    """Axis-aligned candidate grid.

    Each axis holds ceil(extent/step + 1) nodes spanning [origin, origin+extent]
    inclusive; when extent/step is integral the node spacing equals ``step``,
    otherwise the spacing shrinks to keep every node inside the box. Flat
    indexing is row-major with x fastest: m = ix + nx*(iy + ny*iz).
    """

    origin: np.ndarray
    extents: np.ndarray
    step: float
    counts: np.ndarray = field(init=False)
    points: np.ndarray = field(init=False)

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        extents = np.asarray(self.extents, dtype=float).reshape(3)
        step = float(self.step)
        if not (np.all(np.isfinite(origin)) and np.all(np.isfinite(extents))):
            raise ValueError("grid origin/extents must be finite")
        if np.any(extents <= 0.0) or step <= 0.0:
            raise ValueError("grid extents and step must be positive")
        counts = np.array(
            [int(math.ceil(e / step + 1.0 - 1e-9)) for e in extents], dtype=int
        )
        axes = [
            np.linspace(origin[k], origin[k] + extents[k], counts[k])
            for k in range(3)
        ]
        zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "step", step)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def flat_index(self, i: int, j: int, k: int) -> int:
        nx, ny, nz = self.counts
        if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
            raise IndexError(f"lattice index {(i, j, k)} out of range {tuple(self.counts)}")
        return i + nx * (j + ny * k)

    def lattice_index(self, m: int) -> tuple[int, int, int]:
        nx, ny, nz = self.counts
        if not 0 <= m < self.size:
            raise IndexError(f"flat index {m} out of range {self.size}")
        return m % nx, (m // nx) % ny, m // (nx * ny)

    def nearest_index(self, point) -> int:
        """Flat index of the grid node closest to ``point``."""
        p = np.asarray(point, dtype=float).reshape(3)
        return int(np.argmin(np.sum((self.points - p) ** 2, axis=1)))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extents))


@dataclass(frozen=True)
class SourceSet:
    """Ground-truth sources: positions (K, 3) and linear powers (K,)."""

    positions: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.positions, "source positions")
        pw = np.asarray(self.powers, dtype=float).reshape(-1)
        if len(pts) < 1:
            raise ValueError("need at least one source")
        if len(pw) != len(pts):
            raise ValueError("positions and powers disagree in length")
        if np.any(pw <= 0.0) or not np.all(np.isfinite(pw)):
            raise ValueError("source powers must be positive and finite")
        object.__setattr__(self, "positions", pts)
        object.__setattr__(self, "powers", pw)

    @property
    def count(self) -> int:
        return len(self.powers)


@dataclass(frozen=True)
class CameraPose:
    """Camera center plus the reference plane used for pixel projection."""

    position: np.ndarray
    plane_point: np.ndarray
    plane_normal: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        pp = np.asarray(self.plane_point, dtype=float).reshape(3)
        pn = np.asarray(self.plane_normal, dtype=float).reshape(3)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(pp)) and np.all(np.isfinite(pn))):
            raise ValueError("camera pose must be finite")
        nrm = np.linalg.norm(pn)
        if nrm == 0.0:
            raise ValueError("plane normal must be nonzero")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "plane_point", pp)
        object.__setattr__(self, "plane_normal", pn / nrm)


def _monopole(dists: np.ndarray, wavenumber: float) -> np.ndarray:
    """Free-field monopole response exp(-j*k*r)/r for an array of distances."""
    return np.exp(-1j * wavenumber * dists) / dists


@dataclass(frozen=True)
class TransferMatrix:
    """Complex I x M propagation matrix with cached per-column norms.

    ``col_power[m]`` is ||g_m||^2 and ``col_power4[m]`` is ||g_m||^4; both are
    consumed heavily by the coordinate-descent solvers.
    """

    matrix: np.ndarray
    frequency_hz: float
    sound_speed: float
    col_power: np.ndarray
    col_power4: np.ndarray
    grid: Optional[Grid] = None

    def validate(self, rtol: float = 1e-12) -> None:
        fresh = np.einsum("im,im->m", self.matrix.conj(), self.matrix).real
        if np.any(fresh <= 0.0):
            raise ValueError("transfer matrix has a zero column")
        if np.max(np.abs(fresh - self.col_power) / fresh) > rtol:
            raise ValueError("cached column norms drifted from recomputation")
        if np.max(np.abs(fresh**2 - self.col_power4) / fresh**2) > rtol:
            raise ValueError("cached fourth-power norms drifted from recomputation")

    @property
    def n_sensors(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_points(self) -> int:
        return self.matrix.shape[1]


def build_transfer_matrix(
    array: ArrayGeometry,
    grid: Grid,
    frequency_hz: float,
    sound_speed: float = 343.0,
) -> TransferMatrix:
    """Build the sensor-to-grid transfer matrix under the monopole model.

    Parameters
    ----------
    array : ArrayGeometry
        I sensor positions.
    grid : Grid
        M candidate points.
    frequency_hz : float
        Narrowband frequency of interest, > 0.
    sound_speed : float
        Propagation speed in m/s, > 0.

    Returns
    -------
    TransferMatrix
        Entry (i, m) = exp(-j*k*r_im)/r_im with k = 2*pi*f/c.

    Raises
    ------
    ValueError
        If f or c is nonpositive, or any sensor coincides with a grid point.
    """
    if frequency_hz <= 0.0 or sound_speed <= 0.0:
        raise ValueError("frequency and sound speed must be positive")
    diff = array.sensors[:, None, :] - grid.points[None, :, :]
    dists = np.sqrt(np.sum(diff * diff, axis=-1))
    if np.any(dists <= 0.0):
        raise ValueError("degenerate geometry: sensor coincides with a grid point")
    k = 2.0 * math.pi * frequency_hz / sound_speed
    g = _monopole(dists, k)
    col_power = np.sum(1.0 / (dists * dists), axis=0)
    return TransferMatrix(
        matrix=g,
        frequency_hz=float(frequency_hz),
        sound_speed=float(sound_speed),
        col_power=col_power,
        col_power4=col_power**2,
        grid=grid,
    )


def steering_for_point(
    array: ArrayGeometry,
    point,
    frequency_hz: float,
    sound_speed: float = 343.0,
) -> np.ndarray:
    """Steering vector (length I) for one arbitrary, possibly off-grid point."""
    if frequency_hz <= 0.0 or sound_speed <= 0.0:
        raise ValueError("frequency and sound speed must be positive")
    p = np.asarray(point, dtype=float).reshape(3)
    dists = np.linalg.norm(array.sensors - p, axis=1)
    if np.any(dists <= 0.0):
        raise ValueError("degenerate geometry: sensor coincides with the point")
    k = 2.0 * math.pi * frequency_hz / sound_speed
    return _monopole(dists, k)


@dataclass(frozen=True)
class Scene:
    """Full synthetic-scene description.

    ``detections`` keeps the raw detection block (anchors, pixels plus
    correspondences, or a derivation mode); see camera.resolve_detections for
    how it turns into a DetectionPrior.
    """

    array: ArrayGeometry
    grid: Grid
    sources: SourceSet
    camera: Optional[CameraPose] = None
    detections: Optional[dict] = None
    frequency_hz: float = 4000.0
    sound_speed: float = 343.0

    def translated_to_distance(self, distance: float) -> "Scene":
        """Rigidly translate sources, grid, camera, and explicit anchors so the
        source centroid sits ``distance`` meters from the array centroid."""
        if distance <= 0.0:
            raise ValueError("target distance must be positive")
        axis = self.sources.positions.mean(axis=0) - self.array.centroid
        d0 = float(np.linalg.norm(axis))
        if d0 == 0.0:
            raise ValueError("source centroid coincides with array centroid")
        shift = (distance - d0) * (axis / d0)
        camera = self.camera
        if camera is not None:
            camera = CameraPose(
                camera.position + shift,
                camera.plane_point + shift,
                camera.plane_normal,
            )
        detections = self.detections
        if detections is not None and "anchors" in detections:
            anchors = np.asarray(detections["anchors"], dtype=float) + shift
            detections = {**detections, "anchors": anchors.tolist()}
        elif detections is not None and "pixels" in detections:
            raise ValueError(
                "distance sweep needs 3D anchors or derived detections, not raw pixels"
            )
        return Scene(
            array=self.array,
            grid=Grid(self.grid.origin + shift, self.grid.extents, self.grid.step),
            sources=SourceSet(self.sources.positions + shift, self.sources.powers),
            camera=camera,
            detections=detections,
            frequency_hz=self.frequency_hz,
            sound_speed=self.sound_speed,
        )


def scene_from_dict(spec: dict) -> Scene:
    try:
        array = ArrayGeometry(np.asarray(spec["array"]["sensors"], dtype=float))
        g = spec["grid"]
        grid = Grid(
            np.asarray(g["origin"], dtype=float),
            np.asarray(g["extents"], dtype=float),
            float(g["step"]),
        )
        s = spec["sources"]
        sources = SourceSet(
            np.asarray(s["positions"], dtype=float),
            np.asarray(s["powers"], dtype=float),
        )
    except KeyError as exc:
        raise ValueError(f"scene file missing required key: {exc}") from exc
    camera = None
    if "camera" in spec:
        c = spec["camera"]
        camera = CameraPose(
            np.asarray(c["position"], dtype=float),
            np.asarray(c["plane_point"], dtype=float),
            np.asarray(c["plane_normal"], dtype=float),
        )
    return Scene(
        array=array,
        grid=grid,
        sources=sources,
        camera=camera,
        detections=spec.get("detections"),
        frequency_hz=float(spec.get("frequency_hz", 4000.0)),
        sound_speed=float(spec.get("sound_speed_mps", 343.0)),
    )


def load_scene(path) -> Scene:
    """Read a scene description from a JSON file (schema in README)."""
    with open(path, "r", encoding="utf-8") as handle:
        return scene_from_dict(json.load(handle))
