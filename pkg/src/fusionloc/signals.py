"""Snapshot synthesis, noise injection at a target SNR, and covariance forming.

Source amplitudes are i.i.d. circular complex Gaussian per snapshot with
variance equal to the source power, so distinct sources are uncorrelated and
the sample covariance converges to G diag(p) G^H. Every stochastic operation
takes an explicit seed and is bit-reproducible via numpy's default generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import Scene, TransferMatrix, steering_for_point


@dataclass(frozen=True)
class SnapshotBlock:
    """Complex I x L sensor amplitudes plus the seed that produced them."""

    data: np.ndarray
    seed: object = None

    def __post_init__(self):
        x = np.asarray(self.data, dtype=complex)
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValueError("snapshot block must be a complex (I, L>=1) matrix")
        if not np.all(np.isfinite(x)):
            raise ValueError("snapshot block contains non-finite entries")
        object.__setattr__(self, "data", x)

    @property
    def n_sensors(self) -> int:
        return self.data.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Covariance:
    """Hermitian I x I covariance and the snapshot count used to form it
    (0 for model-derived covariances)."""

    matrix: np.ndarray
    snapshots: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("covariance must be square")
        object.__setattr__(self, "matrix", m)

    def validate(self, herm_tol: float = 1e-12, psd_tol: float = 1e-10) -> None:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise ValueError("covariance is not Hermitian within tolerance")
        trace = float(np.trace(m).real)
        eigs = np.linalg.eigvalsh(m)
        if eigs.min() < -psd_tol * max(trace, 1e-300):
            raise ValueError("covariance is not positive semidefinite within tolerance")

    @property
    def n_sensors(self) -> int:
        return self.matrix.shape[0]


def _complex_gaussian(rng: np.random.Generator, shape, variance) -> np.ndarray:
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def source_steering(scene: Scene) -> np.ndarray:
    """Steering matrix (I, K) for the scene's true sources (off-grid allowed)."""
    cols = [
        steering_for_point(scene.array, p, scene.frequency_hz, scene.sound_speed)
        for p in scene.sources.positions
    ]
    return np.column_stack(cols)


def synthesize_snapshots(
    steering: np.ndarray,
    powers,
    n_snapshots: int,
    seed,
) -> SnapshotBlock:
    """Draw L noiseless snapshots x_l = sum_j g_j s_jl.

    ``steering`` is the (I, K) matrix of per-source steering vectors and
    ``powers`` the K source variances. K = 0 yields an all-zero block.
    """
    a = np.asarray(steering, dtype=complex)
    if a.ndim != 2:
        raise ValueError("steering must be an (I, K) matrix")
    pw = np.asarray(powers, dtype=float).reshape(-1)
    if len(pw) != a.shape[1]:
        raise ValueError("steering columns and powers disagree")
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    rng = np.random.default_rng(seed)
    amps = _complex_gaussian(rng, (a.shape[1], n_snapshots), pw[:, None])
    x = a @ amps if a.shape[1] else np.zeros((a.shape[0], n_snapshots), dtype=complex)
    return SnapshotBlock(data=x, seed=seed)


def snapshots_for_scene(scene: Scene, n_snapshots: int, seed) -> SnapshotBlock:
    return synthesize_snapshots(
        source_steering(scene), scene.sources.powers, n_snapshots, seed
    )


def add_noise_for_snr(block: SnapshotBlock, snr_db: float, seed) -> SnapshotBlock:
    """Add i.i.d. circular complex Gaussian noise reaching a target SNR.

    The SNR reference is the mean per-entry power of the noiseless block,
    sigma^2 = mean(|X|^2) * 10^(-snr_db/10). ``snr_db = +inf`` is the
    noiseless sentinel and returns the block unchanged.

    Raises
    ------
    ValueError
        If the block is all-zero and snr_db is finite (no power reference).
    """
    if math.isinf(snr_db) and snr_db > 0:
        return block
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    x = block.data
    ref = float(np.mean(np.abs(x) ** 2))
    if ref == 0.0:
        raise ValueError("undefined SNR reference: signal block is all-zero")
    sigma2 = ref * 10.0 ** (-snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = _complex_gaussian(rng, x.shape, sigma2)
    return SnapshotBlock(data=x + noise, seed=seed)


def empirical_covariance(block: SnapshotBlock) -> Covariance:
    """Sample covariance (1/L) sum_l x_l x_l^H, symmetrized against rounding."""
    x = block.data
    s = x @ x.conj().T / x.shape[1]
    s = 0.5 * (s + s.conj().T)
    return Covariance(matrix=s, snapshots=x.shape[1])


def model_covariance(transfer, powers, noise_var: float = 0.0) -> Covariance:
    """Theoretical covariance R = G diag(b) G^H + sigma^2 I."""
    g = transfer.matrix if isinstance(transfer, TransferMatrix) else np.asarray(transfer)
    b = np.asarray(powers, dtype=float).reshape(-1)
    if np.any(b < 0.0):
        raise ValueError("powers must be nonnegative")
    if noise_var < 0.0:
        raise ValueError("noise variance must be nonnegative")
    if len(b) != g.shape[1]:
        raise ValueError("power vector length must match transfer columns")
    r = (g * b) @ g.conj().T + noise_var * np.eye(g.shape[0])
    r = 0.5 * (r + r.conj().T)
    return Covariance(matrix=r, snapshots=0)


def save_covariance(cov: Covariance, path) -> None:
    """Binary dump (npz: matrix, snapshots) for solver-only reruns."""
    np.savez(path, matrix=cov.matrix, snapshots=np.array(cov.snapshots))


def load_covariance(path) -> Covariance:
    with np.load(path) as data:
        return Covariance(matrix=data["matrix"], snapshots=int(data["snapshots"]))
