"""Fused covariance-fit / unbalanced-transport objective over a plan P and its
greedy maximal-improvement coordinate-descent solver.

The objective in the plan P (M x N, nonnegative) is

    F(P) = ||G diag(P 1_N) G^H - S||_F^2 + lam * <C, P>
           + (mu / 2) * ||a - P^T 1_M||^2

where C is the angular cost between grid points and detection anchors and a
the anchor weights. Row sums b = P 1_N are the estimated power map; column
sums c = P^T 1_M are the mass attributed to each detection. The problem is
quadratic in P with coordinate curvature h_mn = 2 ||g_m||^4 + mu, so each
coordinate has a closed-form constrained step. The solver starts from P = 0,
scores every coordinate's step, and applies the one with the largest
objective decrease until the best improvement falls below tolerance.

A balanced-transport evaluator (exact marginals, tiny instances) is included
as a verification utility only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .cmf import PowerMap, SolveTrace, _TraceBuilder, _cov_matrix, _transfer_parts, default_tolerance
from .scene import TransferMatrix


@dataclass(frozen=True)
class FusionParams:
    """Weights and budget for the fused solve.

    ``lam`` scales the transport term, ``mu`` the marginal relaxation
    (mu = lam * beta in the derivation). ``tol = None`` selects the default
    improvement threshold 1e-10 * ||S||_F^2. One iteration is one coordinate
    update.
    """

    lam: float = 200.0
    mu: float = 5e-4
    max_iters: int = 5000
    tol: Optional[float] = None
    trace: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError("lam must be finite and >= 0")
        if not (np.isfinite(self.mu) and self.mu >= 0.0):
            raise ValueError("mu must be finite and >= 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass(frozen=True)
class TransportPlan:
    """Sparse nonnegative M x N plan: coordinate list plus cached marginals."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple[int, int]
    row_sums: np.ndarray
    col_sums: np.ndarray

    @classmethod
    def from_dense(cls, plan: np.ndarray) -> "TransportPlan":
        plan = np.asarray(plan, dtype=float)
        rows, cols = np.nonzero(plan > 0.0)
        return cls(
            rows=rows,
            cols=cols,
            values=plan[rows, cols],
            shape=plan.shape,
            row_sums=plan.sum(axis=1),
            col_sums=plan.sum(axis=0),
        )

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape)
        dense[self.rows, self.cols] = self.values
        return dense

    @property
    def nnz(self) -> int:
        return len(self.values)

    def validate(self, rtol: float = 1e-10) -> None:
        if np.any(self.values <= 0.0):
            raise ValueError("stored plan entries must be strictly positive")
        dense = self.to_dense()
        for cached, fresh, name in (
            (self.row_sums, dense.sum(axis=1), "row sums"),
            (self.col_sums, dense.sum(axis=0), "column sums"),
        ):
            scale = max(float(np.max(np.abs(fresh))), 1e-300)
            if np.max(np.abs(cached - fresh)) > rtol * scale:
                raise ValueError(f"cached {name} drifted from recomputation")


class FusedWorkspace:
    """Mutable solver state: dense plan, marginals, residual, and gradient
    caches. The coupling vector d (d_m = g_m^H (R(b) - S) g_m) is maintained
    incrementally and refreshed from scratch every ``refresh_every`` updates;
    the worst relative drift absorbed by a refresh is kept in ``max_drift``."""

    def __init__(
        self,
        transfer,
        cov,
        cost,
        weights,
        lam: float,
        mu: float,
        gram_cap: int = 2048,
        refresh_every: int = 1000,
    ):
        g, col_power, col_power4 = _transfer_parts(transfer)
        cost = np.asarray(cost, dtype=float)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if cost.ndim != 2 or cost.shape[0] != g.shape[1]:
            raise ValueError("cost matrix must be (M, N) with M matching the transfer")
        if cost.shape[1] != len(weights):
            raise ValueError("cost columns must match the number of anchor weights")
        if len(weights) == 0:
            raise ValueError("empty prior: use cmf_solve_cd")
        self.matrix = g
        self.cov = _cov_matrix(cov)
        self.cost = cost
        self.weights = weights
        self.lam = float(lam)
        self.mu = float(mu)
        self.col_power4 = col_power4
        self.h = 2.0 * col_power4 + self.mu
        m_count, n_count = cost.shape
        self.P = np.zeros((m_count, n_count))
        self.b = np.zeros(m_count)
        self.c = np.zeros(n_count)
        self.residual = -self.cov.copy()
        self.gram = None
        if m_count <= gram_cap:
            self.gram = np.abs(g.conj().T @ g) ** 2
        self.d = self._recompute_d()
        self.transport = 0.0
        self.refresh_every = refresh_every
        self._updates_since_refresh = 0
        self.max_drift = 0.0

    def _recompute_d(self) -> np.ndarray:
        t = self.residual @ self.matrix
        # Re(conj(G) * T) summed over sensors, without materializing conj(G)
        return (
            np.einsum("im,im->m", self.matrix.real, t.real)
            + np.einsum("im,im->m", self.matrix.imag, t.imag)
        )

    def objective_terms(self) -> tuple[float, float, float, float]:
        fit = float(np.vdot(self.residual, self.residual).real)
        mass = 0.5 * self.mu * float(np.sum((self.weights - self.c) ** 2))
        total = fit + self.transport + mass
        return total, fit, self.transport, mass

    def scan_best(self) -> tuple[int, int, float, float]:
        """Best coordinate under the closed-form step: (m, n, delta, improvement).
        Ties resolve to the lowest flat (row-major) index."""
        grad = 2.0 * self.d[:, None] + self.lam * self.cost - self.mu * (self.weights - self.c)[None, :]
        delta = np.maximum(-self.P, -grad / self.h[:, None])
        impr = -delta * (grad + 0.5 * self.h[:, None] * delta)
        flat = int(np.argmax(impr))
        m, n = divmod(flat, impr.shape[1])
        return m, n, float(delta[m, n]), float(impr[m, n])

    def apply_step(self, m: int, n: int, delta: float) -> None:
        g = self.matrix[:, m]
        self.P[m, n] += delta
        self.b[m] += delta
        self.c[n] += delta
        self.transport += self.lam * self.cost[m, n] * delta
        self.residual += delta * np.outer(g, g.conj())
        if self.gram is not None:
            self.d += delta * self.gram[m]
        else:
            self.d += delta * np.abs(self.matrix.T @ g.conj()) ** 2
        self._updates_since_refresh += 1
        if self._updates_since_refresh >= self.refresh_every:
            self.refresh()

    def refresh(self) -> float:
        """Recompute d, b, c, and the transport term from scratch; returns and
        absorbs the worst relative drift."""
        drift = 0.0
        fresh_d = self._recompute_d()
        scale = max(float(np.max(np.abs(fresh_d))), 1e-300)
        drift = max(drift, float(np.max(np.abs(fresh_d - self.d))) / scale)
        self.d = fresh_d
        fresh_b = self.P.sum(axis=1)
        scale = max(float(np.max(fresh_b)), 1e-300)
        drift = max(drift, float(np.max(np.abs(fresh_b - self.b))) / scale)
        self.b = fresh_b
        fresh_c = self.P.sum(axis=0)
        scale = max(float(np.max(fresh_c)), 1e-300)
        drift = max(drift, float(np.max(np.abs(fresh_c - self.c))) / scale)
        self.c = fresh_c
        fresh_t = self.lam * float(np.einsum("mn,mn->", self.cost, self.P))
        drift = max(drift, abs(fresh_t - self.transport) / max(abs(fresh_t), 1e-300))
        self.transport = fresh_t
        self.max_drift = max(self.max_drift, drift)
        self._updates_since_refresh = 0
        return drift


def fused_objective(transfer, cov, cost, weights, plan, lam: float, mu: float):
    """Evaluate the fused objective at a plan; returns (total, fit, transport, mass)."""
    g, _, _ = _transfer_parts(transfer)
    s = _cov_matrix(cov)
    cost = np.asarray(cost, dtype=float)
    a = np.asarray(weights, dtype=float).reshape(-1)
    p = plan.to_dense() if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    if np.any(p < 0.0):
        raise ValueError("plan must be nonnegative")
    b = p.sum(axis=1)
    e = (g * b) @ g.conj().T - s
    fit = float(np.vdot(e, e).real)
    transport = lam * float(np.einsum("mn,mn->", cost, p))
    mass = 0.5 * mu * float(np.sum((a - p.sum(axis=0)) ** 2))
    return fit + transport + mass, fit, transport, mass


def coordinate_gradient(m: int, n: int, workspace: FusedWorkspace) -> float:
    """Partial derivative of the fused objective in P[m, n]:
    2 d_m + lam * C[m, n] - mu * (a_n - c_n)."""
    ws = workspace
    return float(2.0 * ws.d[m] + ws.lam * ws.cost[m, n] - ws.mu * (ws.weights[n] - ws.c[n]))


def coordinate_step(m: int, n: int, workspace: FusedWorkspace) -> tuple[float, float]:
    """Constrained minimizer along coordinate (m, n) and its improvement.

    delta* = max(-P[m,n], -grad/h) with curvature h = 2||g_m||^4 + mu;
    the improvement -(grad*delta + h*delta^2/2) is always >= 0.
    """
    ws = workspace
    grad = coordinate_gradient(m, n, ws)
    h = float(ws.h[m])
    if h <= 0.0:
        raise ValueError("coordinate curvature must be positive")
    delta = max(-float(ws.P[m, n]), -grad / h)
    impr = -delta * (grad + 0.5 * h * delta)
    return delta, impr


def solve_cmf_uot(
    transfer,
    cov,
    cost,
    weights,
    params: Optional[FusionParams] = None,
    gram_cap: int = 2048,
    refresh_every: int = 1000,
) -> tuple[TransportPlan, PowerMap, SolveTrace]:
    """Greedy maximal-improvement coordinate descent on the fused objective.

    Parameters
    ----------
    transfer : TransferMatrix or complex (I, M) array
    cov : Covariance or complex (I, I) array
    cost : (M, N) angular cost matrix
    weights : (N,) anchor weights (uniform 1/N for camera priors)
    params : FusionParams
        lam/mu weights, iteration budget, tolerance, trace flag.

    Returns
    -------
    (TransportPlan, PowerMap, SolveTrace)
        The sparse plan, its row sums b as a power map, and the per-update
        trace (objective column non-increasing).

    Raises
    ------
    ValueError
        If the prior is empty (N = 0): use cmf_solve_cd instead.
    """
    params = params if params is not None else FusionParams()
    ws = FusedWorkspace(
        transfer, cov, cost, weights, params.lam, params.mu,
        gram_cap=gram_cap, refresh_every=refresh_every,
    )
    tol = params.tol if params.tol is not None else default_tolerance(cov)
    trace = _TraceBuilder(ws.objective_terms()[0])
    converged = False
    for _ in range(params.max_iters):
        m, n, delta, impr = ws.scan_best()
        if not impr > tol:
            converged = True
            break
        ws.apply_step(m, n, delta)
        if params.trace:
            total, fit, transport, mass = ws.objective_terms()
            trace.add(m, n, delta, total, fit, transport, mass)
    ws.refresh()
    plan = TransportPlan.from_dense(ws.P)
    grid = transfer.grid if isinstance(transfer, TransferMatrix) else None
    return plan, PowerMap(plan.row_sums, grid), trace.build(converged, ws.max_drift)


def balanced_ot_cost(weights_a, weights_b, cost) -> float:
    """Optimal balanced transport cost <C, P> under exact marginals
    P 1_N = b, P^T 1_M = a (verification utility; sizes capped at 10).

    ``weights_a`` has N entries, ``weights_b`` M entries, ``cost`` is M x N.
    """
    a = np.asarray(weights_a, dtype=float).reshape(-1)
    b = np.asarray(weights_b, dtype=float).reshape(-1)
    c = np.asarray(cost, dtype=float)
    if len(a) > 10 or len(b) > 10:
        raise ValueError("balanced OT utility is for tiny instances (sizes <= 10)")
    if c.shape != (len(b), len(a)):
        raise ValueError("cost must have shape (len(b), len(a))")
    if np.any(a < 0.0) or np.any(b < 0.0):
        raise ValueError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-9 * max(a.sum(), b.sum(), 1.0):
        raise ValueError("marginal mass mismatch: sum(a) must equal sum(b)")
    m_count, n_count = c.shape
    a_eq = np.zeros((m_count + n_count, m_count * n_count))
    for m in range(m_count):
        a_eq[m, m * n_count : (m + 1) * n_count] = 1.0
    for n in range(n_count):
        a_eq[m_count + n, n::n_count] = 1.0
    res = linprog(
        c.ravel(),
        A_eq=a_eq,
        b_eq=np.concatenate([b, a]),
        bounds=(0.0, None),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"balanced OT solve failed: {res.message}")
    return float(res.fun)
