import numpy as np
import pytest

from fusionloc import (
    ArrayGeometry,
    CameraPose,
    Grid,
    Scene,
    SourceSet,
    build_transfer_matrix,
    model_covariance,
)


def random_array(n_sensors: int, seed: int, scale: float = 0.25) -> ArrayGeometry:
    rng = np.random.default_rng(seed)
    return ArrayGeometry(rng.normal(size=(n_sensors, 3)) * scale)


def small_grid() -> Grid:
    # 10 x 10 x 5 = 500 nodes, desk scale
    return Grid([0.5, -0.3, -0.2], [0.45, 0.45, 0.2], 0.05)


def random_fit_instance(seed: int, n_sensors=6, n_points=20, noisy=True):
    """Small random (G, cov) pair for solver/gradient tests."""
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(n_sensors, n_points)) + 1j * rng.normal(size=(n_sensors, n_points))
    b_true = np.zeros(n_points)
    support = rng.choice(n_points, size=3, replace=False)
    b_true[support] = rng.uniform(0.5, 2.0, size=3)
    cov = (g * b_true) @ g.conj().T
    if noisy:
        w = rng.normal(size=(n_sensors, n_sensors)) + 1j * rng.normal(size=(n_sensors, n_sensors))
        cov = cov + 0.05 * (w + w.conj().T)
    cov = 0.5 * (cov + cov.conj().T)
    return g, b_true, cov


@pytest.fixture
def exact_scene():
    """32-sensor random array, 500-node grid, 3 on-grid sources, camera off to
    the side; model covariance with sigma^2 = 0 admits exact recovery."""
    array = random_array(32, seed=7)
    grid = small_grid()
    src_idx = [10, 120, 400]
    sources = SourceSet(grid.points[src_idx], [1.0, 2.0, 0.5])
    camera = CameraPose([0.7, -1.2, 0.0], [0.7, -0.3, 0.0], [0.0, 1.0, 0.0])
    scene = Scene(
        array, grid, sources, camera=camera, detections={"mode": "project_sources"}
    )
    transfer = build_transfer_matrix(array, grid, scene.frequency_hz, scene.sound_speed)
    b_true = np.zeros(grid.size)
    b_true[src_idx] = sources.powers
    cov = model_covariance(transfer, b_true, 0.0)
    return scene, transfer, src_idx, b_true, cov
