"""Penalized objective and curve mass matrices.

The total cost is J1 (the observation-region integral of the cost
integrand) plus (1/eps) * Y^T N(Z_c) Y summed over the zero-set
components, where N(Z) is the mass matrix of the P1 hats along the
traced polygon weighted by the constant per-segment speed |Z'|.

All curve integrals use the same 3-point Gauss rule per time interval;
per-interval pieces (the time-hat weighted N_k, N_{k+1} and the plain
R_k) share the quadrature samples of N, so the cross-identities between
them hold to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .expr import Expr
from .fem import midpoints, values_at_midpoints
from .levelset import Trajectory, VariationPath
from .mesh import LABEL_E, Mesh, locate_point

# 3-point Gauss on [0, 1]
_GAUSS_TAU = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass
class CurveMatrices:
    """Curve mass matrix and its per-interval pieces for one component.

    The packed arrays hold, per interval k and Gauss point q, the three
    vertex indices of the containing triangle and the 3x3 hat outer
    products already scaled by L_k * w_q; everything else is a reweighting
    of those samples.
    """

    mesh: Mesh
    Z: Trajectory
    qverts: np.ndarray          # (m, 3, 3) int
    qouter: np.ndarray          # (m, 3, 3, 3) scaled outer products
    qtris: np.ndarray           # (m, 3) containing-triangle ids
    qlam: np.ndarray            # (m, 3, 3) barycentric coordinates
    seg_lengths: np.ndarray     # (m,)
    N_full: sp.csr_matrix = field(repr=False)       # n x n
    N: sp.csr_matrix = field(repr=False)            # n0 x n0

    @property
    def m(self) -> int:
        return len(self.seg_lengths)

    def _rows_cols(self, k=slice(None)):
        v = self.qverts[k]
        rows = np.repeat(v, 3, axis=-1)
        cols = np.tile(v, (1,) * (v.ndim - 1) + (3,))
        return rows.reshape(-1), cols.reshape(-1)

    def _matrix(self, vals, rows, cols, restrict_rows=True, restrict_cols=False):
        n = self.mesh.n
        out = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        if restrict_rows:
            out = out[self.mesh.interior, :]
        if restrict_cols:
            out = out[:, self.mesh.interior]
        return out.tocsr()

    def Nk(self, k: int) -> sp.csr_matrix:
        """Interval piece weighted by the time hat psi_k, n0 x n."""
        vals = (self.qouter[k] * (1.0 - _GAUSS_TAU)[:, None, None]).reshape(-1)
        return self._matrix(vals, *self._rows_cols(k))

    def Nk1(self, k: int) -> sp.csr_matrix:
        """Interval piece weighted by the time hat psi_{k+1}, n0 x n."""
        vals = (self.qouter[k] * _GAUSS_TAU[:, None, None]).reshape(-1)
        return self._matrix(vals, *self._rows_cols(k))

    def Rk(self, k: int) -> sp.csr_matrix:
        """Unweighted interval piece of N, n0 x n0."""
        vals = self.qouter[k].reshape(-1)
        return self._matrix(vals, *self._rows_cols(k), restrict_cols=True)


def assemble_curve_matrices(mesh: Mesh, Z: Trajectory) -> CurveMatrices:
    """Sample the 3-point Gauss rule along the closed polygon Z and build
    the curve mass matrix; |Z'| is L_k/dt, constant per segment."""
    pts = Z.points
    dz = np.diff(pts, axis=0)
    lengths = np.sqrt((dz ** 2).sum(axis=1))
    if np.any(lengths <= 0.0):
        raise ValueError("degenerate (zero-length) trajectory segment")
    m = len(lengths)
    qverts = np.empty((m, 3, 3), dtype=np.int64)
    qouter = np.empty((m, 3, 3, 3))
    qtris = np.empty((m, 3), dtype=np.int64)
    qlam = np.empty((m, 3, 3))
    hint = 0
    for k in range(m):
        for q, (tau, w) in enumerate(zip(_GAUSS_TAU, _GAUSS_W)):
            p = pts[k] + tau * dz[k]
            t, lam = locate_point(mesh, p, hint)
            hint = t
            qtris[k, q] = t
            qlam[k, q] = lam
            qverts[k, q] = mesh.triangles[t]
            qouter[k, q] = (lengths[k] * w) * np.outer(lam, lam)

    rows = np.repeat(qverts, 3, axis=-1).reshape(-1)
    cols = np.tile(qverts, (1, 1, 3)).reshape(-1)
    n = mesh.n
    N_full = sp.coo_matrix((qouter.reshape(-1), (rows, cols)),
                           shape=(n, n)).tocsr()
    N = N_full[mesh.interior, :][:, mesh.interior].tocsr()
    return CurveMatrices(mesh=mesh, Z=Z, qverts=qverts, qouter=qouter,
                         qtris=qtris, qlam=qlam, seg_lengths=lengths,
                         N_full=N_full, N=N)


@dataclass
class CostBreakdown:
    J1: float
    penalty_per_component: list[float]
    total: float
    eps: float


def eval_J1(mesh: Mesh, Y: np.ndarray, j: Expr) -> float:
    """Integral of j(x, y_h) over the E-labelled triangles (3-point rule)."""
    y_full = mesh.extend_interior(np.asarray(Y))
    mid = midpoints(mesh)
    yq = values_at_midpoints(mesh, y_full)
    e = mesh.labels == LABEL_E
    jq = np.asarray(j(mid[e, :, 0], mid[e, :, 1], yq[e]), dtype=float)
    if jq.ndim == 0:
        jq = np.full((int(e.sum()), 3), float(jq))
    return float(((mesh.areas[e] / 3.0)[:, None] * jq).sum())


def eval_cost(mesh: Mesh, Y: np.ndarray, curves: list[CurveMatrices],
              eps: float, j: Expr) -> CostBreakdown:
    """Penalized cost J = J1 + (1/eps) sum_c Y^T N(Z_c) Y."""
    Y = np.asarray(Y)
    j1 = eval_J1(mesh, Y, j)
    pen = [float(Y @ (c.N @ Y)) for c in curves]
    return CostBreakdown(J1=j1, penalty_per_component=pen,
                         total=j1 + sum(pen) / eps, eps=eps)


def apply_T1_T2(curve: CurveMatrices, W: VariationPath):
    """Weighted sums sum_k (W_k N_k + W_{k+1} N_{k+1}) for both components
    of the variation path; returns two n0 x n matrices."""
    if W.m != curve.m:
        raise ValueError(f"variation path has {W.m} intervals, "
                         f"trajectory has {curve.m}")
    rows, cols = curve._rows_cols()
    # linear-in-time interpolation of W at the Gauss points of each interval
    w0 = W.points[:-1]          # (m, 2)
    w1 = W.points[1:]
    out = []
    for comp in range(2):
        wq = (np.outer(w0[:, comp], 1.0 - _GAUSS_TAU)
              + np.outer(w1[:, comp], _GAUSS_TAU))          # (m, 3)
        vals = (curve.qouter * wq[:, :, None, None]).reshape(-1)
        out.append(curve._matrix(vals, rows, cols))
    return out[0], out[1]


def apply_T3(curve: CurveMatrices, Z: Trajectory, W: VariationPath) -> sp.csr_matrix:
    """sum_k ((Z_{k+1}-Z_k).(W_{k+1}-W_k) / L_k^2) R_k, n0 x n0."""
    if W.m != curve.m:
        raise ValueError(f"variation path has {W.m} intervals, "
                         f"trajectory has {curve.m}")
    dz = np.diff(Z.points, axis=0)
    dw = np.diff(W.points, axis=0)
    coef = (dz * dw).sum(axis=1) / curve.seg_lengths ** 2    # (m,)
    vals = (curve.qouter * coef[:, None, None, None]).reshape(-1)
    rows, cols = curve._rows_cols()
    return curve._matrix(vals, rows, cols, restrict_cols=True)
