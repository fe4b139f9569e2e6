"""Covariance-matrix-fitting baseline: minimize ||G diag(b) G^H - S||_F^2
over nonnegative grid powers b.

Two solvers are provided. ``cmf_solve_nnls`` rewrites the fit as a real
nonnegative least-squares problem over the stacked rank-1 design matrix and
runs an active-set (Lawson-Hanson) solve; it is exact but needs the dense
M-column design, so it is capped to small grids. ``cmf_solve_cd`` is greedy
coordinate descent with maximal improvement: at each update the closed-form
step for every coordinate is scored and the largest objective decrease wins.
The gradient bookkeeping vector d (d_m = g_m^H (R(b) - S) g_m) is maintained
incrementally, d_k += delta * |g_k^H g_m|^2, with periodic full refreshes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import nnls as _scipy_nnls

from .scene import Grid, TransferMatrix
from .signals import Covariance


@dataclass(frozen=True)
class PowerMap:
    """Nonnegative per-grid-point power estimate."""

    values: np.ndarray
    grid: Optional[Grid] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if np.any(v < 0.0) or not np.all(np.isfinite(v)):
            raise ValueError("power map must be nonnegative and finite")
        object.__setattr__(self, "values", v)

    @property
    def total(self) -> float:
        return float(self.values.sum())


@dataclass
class SolveTrace:
    """Per-update record of a coordinate-descent run.

    ``objective`` holds the value after each update; ``initial_objective`` the
    value at the starting point. ``fit``, ``transport`` and ``mass`` carry the
    objective decomposition (transport and mass stay zero for plain CMF).
    ``max_cache_drift`` is the worst relative disagreement seen between the
    incremental gradient caches and a from-scratch recomputation.
    """

    initial_objective: float = 0.0
    rows: int = 0
    m: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    n: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    delta: np.ndarray = field(default_factory=lambda: np.empty(0))
    objective: np.ndarray = field(default_factory=lambda: np.empty(0))
    fit: np.ndarray = field(default_factory=lambda: np.empty(0))
    transport: np.ndarray = field(default_factory=lambda: np.empty(0))
    mass: np.ndarray = field(default_factory=lambda: np.empty(0))
    converged: bool = False
    max_cache_drift: float = 0.0

    @property
    def iterations(self) -> int:
        return self.rows

    @property
    def final_objective(self) -> float:
        return float(self.objective[-1]) if self.rows else self.initial_objective

    def objective_sequence(self) -> np.ndarray:
        """Initial value followed by the per-update objective values."""
        return np.concatenate([[self.initial_objective], self.objective])


class _TraceBuilder:
    def __init__(self, initial_objective: float):
        self.initial = initial_objective
        self.m: list[int] = []
        self.n: list[int] = []
        self.delta: list[float] = []
        self.objective: list[float] = []
        self.fit: list[float] = []
        self.transport: list[float] = []
        self.mass: list[float] = []

    def add(self, m, n, delta, objective, fit, transport, mass):
        self.m.append(m)
        self.n.append(n)
        self.delta.append(delta)
        self.objective.append(objective)
        self.fit.append(fit)
        self.transport.append(transport)
        self.mass.append(mass)

    def build(self, converged: bool, max_cache_drift: float) -> SolveTrace:
        return SolveTrace(
            initial_objective=self.initial,
            rows=len(self.m),
            m=np.asarray(self.m, dtype=int),
            n=np.asarray(self.n, dtype=int),
            delta=np.asarray(self.delta),
            objective=np.asarray(self.objective),
            fit=np.asarray(self.fit),
            transport=np.asarray(self.transport),
            mass=np.asarray(self.mass),
            converged=converged,
            max_cache_drift=max_cache_drift,
        )


def _transfer_parts(transfer) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(transfer, TransferMatrix):
        return transfer.matrix, transfer.col_power, transfer.col_power4
    g = np.asarray(transfer, dtype=complex)
    col_power = np.einsum("im,im->m", g.conj(), g).real
    return g, col_power, col_power**2


def _cov_matrix(cov) -> np.ndarray:
    return cov.matrix if isinstance(cov, Covariance) else np.asarray(cov, dtype=complex)


def cmf_objective(transfer, powers, cov) -> float:
    """Frobenius fit ||G diag(b) G^H - S||_F^2 (dense evaluation)."""
    g, _, _ = _transfer_parts(transfer)
    b = powers.values if isinstance(powers, PowerMap) else np.asarray(powers, dtype=float)
    s = _cov_matrix(cov)
    e = (g * b) @ g.conj().T - s
    return float(np.vdot(e, e).real)


class CmfWorkspace:
    """Incremental state for coordinate descent on the covariance fit.

    Keeps the residual matrix E = G diag(b) G^H - S (I x I, cheap to update
    by a rank-1 term), the coupling vector d with d_m = g_m^H E g_m, and, for
    grids up to ``gram_cap`` columns, the dense Gram-magnitude cache
    K[k, m] = |g_k^H g_m|^2 (K is M^2 floats, hence the cap).
    """

    def __init__(self, transfer, cov, powers=None, gram_cap: int = 2048):
        g, col_power, col_power4 = _transfer_parts(transfer)
        self.matrix = g
        self.col_power = col_power
        self.col_power4 = col_power4
        self.cov = _cov_matrix(cov)
        m_count = g.shape[1]
        if powers is None:
            self.b = np.zeros(m_count)
            self.residual = -self.cov.copy()
        else:
            self.b = np.asarray(powers, dtype=float).copy()
            self.residual = (g * self.b) @ g.conj().T - self.cov
        self.gram = None
        if m_count <= gram_cap:
            self.gram = np.abs(g.conj().T @ g) ** 2
        self.d = self._recompute_d()
        self._updates_since_refresh = 0
        self.max_drift = 0.0

    def _recompute_d(self) -> np.ndarray:
        t = self.residual @ self.matrix
        # Re(conj(G) * T) summed over sensors, without materializing conj(G)
        return (
            np.einsum("im,im->m", self.matrix.real, t.real)
            + np.einsum("im,im->m", self.matrix.imag, t.imag)
        )

    @property
    def objective(self) -> float:
        return float(np.vdot(self.residual, self.residual).real)

    def apply_step(self, m: int, delta: float, refresh_every: int = 1000) -> None:
        g = self.matrix[:, m]
        self.b[m] += delta
        self.residual += delta * np.outer(g, g.conj())
        if self.gram is not None:
            self.d += delta * self.gram[m]
        else:
            # |g_k^H g_m|^2 without materializing conj(G): |G^T conj(g)| = |G^H g|
            self.d += delta * np.abs(self.matrix.T @ g.conj()) ** 2
        self._updates_since_refresh += 1
        if self._updates_since_refresh >= refresh_every:
            self.refresh()

    def refresh(self) -> float:
        """Recompute d from the residual; returns the relative drift absorbed."""
        fresh = self._recompute_d()
        scale = max(float(np.max(np.abs(fresh))), 1e-300)
        drift = float(np.max(np.abs(fresh - self.d)) / scale)
        self.d = fresh
        self.max_drift = max(self.max_drift, drift)
        self._updates_since_refresh = 0
        return drift


def cmf_gradient(workspace: CmfWorkspace) -> np.ndarray:
    """Gradient of the fit objective: 2 d_m = 2 Re(g_m^H (R(b) - S) g_m)."""
    return 2.0 * workspace.d


def default_tolerance(cov, scale: float = 1e-10) -> float:
    """Improvement threshold 1e-10 * ||S||_F^2 used by both CD solvers."""
    s = _cov_matrix(cov)
    return scale * float(np.vdot(s, s).real)


def cmf_solve_cd(
    transfer,
    cov,
    max_iters: int = 5000,
    tol: Optional[float] = None,
    workspace: Optional[CmfWorkspace] = None,
    gram_cap: int = 2048,
    refresh_every: int = 1000,
) -> tuple[PowerMap, SolveTrace]:
    """Greedy maximal-improvement coordinate descent on the CMF objective.

    For every coordinate the constrained step delta_m = max(-b_m, -d_m/||g_m||^4)
    and its improvement Delta_m = -(2 d_m delta + ||g_m||^4 delta^2) are scored;
    the best coordinate (ties to the lowest index) is updated until the best
    improvement drops below ``tol`` (default 1e-10 * ||S||_F^2) or the budget
    runs out. The recorded objective sequence is non-increasing.
    """
    ws = workspace if workspace is not None else CmfWorkspace(transfer, cov, gram_cap=gram_cap)
    if tol is None:
        tol = default_tolerance(cov)
    n4 = ws.col_power4
    trace = _TraceBuilder(ws.objective)
    converged = False
    for _ in range(max_iters):
        delta = np.maximum(-ws.b, -ws.d / n4)
        impr = -delta * (2.0 * ws.d + n4 * delta)
        m = int(np.argmax(impr))
        if not impr[m] > tol:
            converged = True
            break
        ws.apply_step(m, float(delta[m]), refresh_every=refresh_every)
        obj = ws.objective
        trace.add(m, -1, float(delta[m]), obj, obj, 0.0, 0.0)
    grid = transfer.grid if isinstance(transfer, TransferMatrix) else None
    return PowerMap(ws.b.copy(), grid), trace.build(converged, ws.max_drift)


def nnls_design_matrix(transfer) -> np.ndarray:
    """Real-stacked design A with columns [Re vec(g_m g_m^H); Im vec(...)],
    so that ||A b - y||^2 equals the Frobenius fit for y = [Re vec S; Im vec S]."""
    g, _, _ = _transfer_parts(transfer)
    n_i, n_m = g.shape
    cols = np.einsum("im,jm->ijm", g, g.conj()).reshape(n_i * n_i, n_m)
    return np.vstack([cols.real, cols.imag])


def _stacked_target(cov_matrix: np.ndarray) -> np.ndarray:
    v = cov_matrix.reshape(-1)
    return np.concatenate([v.real, v.imag])


def cmf_solve_nnls(
    transfer,
    cov,
    tol: Optional[float] = None,
    max_grid: int = 5000,
) -> PowerMap:
    """Reference active-set NNLS solve of the CMF problem (small grids only).

    Builds the dense design whose columns are the stacked rank-1 responses and
    solves min_{b>=0} ||A b - vec(S)||^2 with Lawson-Hanson NNLS. The KKT
    residual of the returned point is verified against ``tol``.

    Raises
    ------
    ValueError
        If the grid exceeds ``max_grid`` columns (use cmf_solve_cd instead).
    RuntimeError
        If the NNLS solution misses the KKT tolerance.
    """
    g, _, _ = _transfer_parts(transfer)
    if g.shape[1] > max_grid:
        raise ValueError(
            f"grid too large for dense NNLS (M={g.shape[1]} > cap {max_grid}); "
            "use cmf_solve_cd"
        )
    a = nnls_design_matrix(transfer)
    y = _stacked_target(_cov_matrix(cov))
    b, _ = _scipy_nnls(a, y, maxiter=max(30 * a.shape[1], 1000))
    grad = a.T @ (a @ b - y)
    scale = max(float(np.max(np.abs(a.T @ y))), 1e-300)
    if tol is None:
        tol = 1e-8 * scale
    kkt = max(
        float(np.max(np.abs(grad[b > 0.0]), initial=0.0)),
        float(max(0.0, -np.min(grad, initial=0.0))),
    )
    if kkt > tol:
        raise RuntimeError(f"NNLS KKT residual {kkt:.3e} exceeds tolerance {tol:.3e}")
    grid = transfer.grid if isinstance(transfer, TransferMatrix) else None
    return PowerMap(b, grid)
