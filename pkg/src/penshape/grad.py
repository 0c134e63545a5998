"""Discrete directional derivative of the penalized cost and the three
descent-direction constructions.

Two equivalent-up-to-quadrature forms of the derivative are provided:

* ``dJ_assembled`` sums the five matrix terms built from the variation
  state Q, the variation path W and the curve matrices.
* ``dJ_operator`` eliminates Q and W via the adjoint state P and the
  stacked orbit operators B2/B3, collapsing the curve factors onto
  interval-exact per-node weights.

The assembled form is checked against finite differences of the cost;
the operator form agrees with it to rounding and yields the exact slope
identity of the full-gradient direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import CurveMatrices, apply_T3
from .expr import Expr
from .fem import assemble_MED
from .levelset import (OrbitOperators, Trajectory, VariationPath,
                       _element_jacobian)
from .mesh import DiscreteDerivativeOps, Mesh, locate_point


def eval_L(mesh: Mesh, Y: np.ndarray, j2: Expr | None, yd: Expr | None) -> np.ndarray:
    """Nodal derivative of the cost integrand in y at the E vertices.

    ``j2`` is an expression for d j / d y in (x1, x2, y); when omitted the
    default tracking integrand j = (y - yd)^2 is assumed, giving
    L_i = 2 (y_h(A_i) - yd(A_i)).
    """
    y_full = mesh.extend_interior(np.asarray(Y))
    pts = mesh.vertices[mesh.e_nodes]
    ye = y_full[mesh.e_nodes]
    if j2 is not None:
        return np.asarray(j2(pts[:, 0], pts[:, 1], ye), dtype=float)
    if yd is None:
        raise ValueError("either j2 or yd must be given")
    return 2.0 * (ye - np.asarray(yd(pts[:, 0], pts[:, 1]), dtype=float))


def _curve_samples(mesh: Mesh, curve: CurveMatrices, y_full: np.ndarray):
    """y and its per-triangle gradient at the Gauss points of the curve."""
    vy = y_full[curve.qverts]                                 # (m, 3, 3)
    qy = np.einsum("mqv,mqv->mq", vy, curve.qlam)
    qg = np.einsum("mqvd,mqv->mqd", mesh.bary_coef[curve.qtris][:, :, :, :2], vy)
    return qy, qg


def dJ_assembled(mesh: Mesh, pih: DiscreteDerivativeOps, Y: np.ndarray,
                 Q: np.ndarray, L: np.ndarray, curves: list[CurveMatrices],
                 Ws: list[VariationPath], eps: float,
                 med=None) -> float:
    """Directional derivative as the five-term matrix sum.

    Q is the variation state for the direction, Ws the variation paths
    (one per zero-set component, matching ``curves``).  The third/fourth
    terms sample grad(y_h) in the triangle containing each quadrature
    point: y_h kinks across the penalized boundary, so the smoothed nodal
    gradient is O(1) wrong exactly there and would break the
    finite-difference identity this function is tested against.
    """
    if len(curves) != len(Ws):
        raise ValueError("one variation path per curve component required")
    if med is None:
        med = assemble_MED(mesh, "E")
    Y = np.asarray(Y)
    Q = np.asarray(Q)
    y_full = mesh.extend_interior(Y)
    from .cost import _GAUSS_TAU as tau, _GAUSS_W as wq
    out = float(np.asarray(L) @ (med @ Q))
    for curve, W in zip(curves, Ws):
        out += (2.0 / eps) * float(Y @ (curve.N @ Q))
        qy, qg = _curve_samples(mesh, curve, y_full)
        # variation-path value at each Gauss point (linear in time)
        wt = ((1.0 - tau)[None, :, None] * W.points[:-1, None, :]
              + tau[None, :, None] * W.points[1:, None, :])
        out += (2.0 / eps) * float(
            (curve.seg_lengths[:, None] * wq[None, :]
             * qy * np.einsum("mqd,mqd->mq", qg, wt)).sum())
        out += (1.0 / eps) * float(Y @ (apply_T3(curve, curve.Z, W) @ Y))
    return out


@dataclass
class LambdaVectors:
    """Curve-sample functionals for the operator-form derivative.

    l1_* and l3_* are indexed by the orbit nodes 1..m (node 0 is dropped,
    the variation path vanishes there); l2_* live on the mesh nodes via
    hat-function samples along the orbit.  Weights are interval-exact:
    the y grad(y) factor is integrated by the same segment Gauss rule as
    the curve matrices, and the tangent/curvature factors substitute the
    explicit Euler increment of the variation path, so the operator form
    reproduces the assembled derivative identically.
    """

    l1_1: np.ndarray
    l1_2: np.ndarray
    l3_1: np.ndarray
    l3_2: np.ndarray
    l2_1: np.ndarray
    l2_2: np.ndarray


def build_lambda_vectors(mesh: Mesh, pih: DiscreteDerivativeOps, G: np.ndarray,
                         Y: np.ndarray, curve: CurveMatrices) -> LambdaVectors:
    """Collapse the curve terms of the derivative onto per-node weights.

    l1: coefficients of W collecting 2 y grad(y) |Z'| over both adjacent
    intervals (Gauss-in-interval, linear time interpolation of W).
    l2/l3: the length-variation term with the Euler increment of W
    substituted; l2 carries the direction part (hat samples times the
    segment tangent), l3 the orbit-curvature part built from the element
    Jacobian of the traced fields.
    """
    from .cost import _GAUSS_TAU as tau, _GAUSS_W as wq
    y_full = mesh.extend_interior(np.asarray(Y))
    d1 = pih.p1 @ np.asarray(G)
    d2 = pih.p2 @ np.asarray(G)

    Z = curve.Z
    pts = Z.points
    m = Z.m
    dt = Z.dt
    n = mesh.n
    dz = np.diff(pts, axis=0)
    lengths = curve.seg_lengths

    qy, qg = _curve_samples(mesh, curve, y_full)              # (m,3), (m,3,2)
    # y^2 weight of each interval: the interval piece Y^T R_k Y
    rho = (lengths * (wq[None, :] * qy ** 2).sum(axis=1)) / lengths ** 2

    # l1: 2 L_k w_q y grad(y) split onto the two interval endpoints by the
    # linear-in-time weight of W at each Gauss point
    coef = 2.0 * lengths[:, None] * wq[None, :] * qy          # (m, 3)
    a_part = np.einsum("mq,mqd->md", coef * (1.0 - tau)[None, :], qg)  # W_k
    b_part = np.einsum("mq,mqd->md", coef * tau[None, :], qg)          # W_{k+1}
    l1 = np.zeros((m, 2))                # slot j-1 holds node j, j = 1..m
    l1 += b_part                         # node k+1 of interval k -> slot k
    l1[:-1] += a_part[1:]                # node k of interval k -> slot k-1
    l1_1, l1_2 = l1[:, 0].copy(), l1[:, 1].copy()

    l3_1 = np.zeros(m)
    l3_2 = np.zeros(m)
    l2_1 = np.zeros(n)
    l2_2 = np.zeros(n)
    hint = 0
    for k in range(m):
        t, lam = locate_point(mesh, pts[k], hint)
        hint = t
        v = mesh.triangles[t]
        # direction part: dt rho_k dz_k . (hat samples at Z_k)
        l2_1[v] += dt * rho[k] * dz[k, 0] * lam
        l2_2[v] += dt * rho[k] * dz[k, 1] * lam
        if k > 0:
            zp = dz[k] / dt                                   # Euler velocity
            a11, a12, a21, a22 = _element_jacobian(mesh, d1, d2, t)
            c1 = -zp[0] * a12 + zp[1] * a11
            c2 = -zp[0] * a22 + zp[1] * a21
            l3_1[k - 1] += dt * dt * rho[k] * c1
            l3_2[k - 1] += dt * dt * rho[k] * c2
    return LambdaVectors(l1_1=l1_1, l1_2=l1_2, l3_1=l3_1, l3_2=l3_2,
                         l2_1=l2_1, l2_2=l2_2)


def dJ_operator(mesh: Mesh, pih: DiscreteDerivativeOps, P: np.ndarray,
                B1, C1, lambdas: list[LambdaVectors],
                ops: list[OrbitOperators], eps: float,
                R: np.ndarray, V: np.ndarray) -> float:
    """Directional derivative with Q and W eliminated: the adjoint state P
    covers the first two terms, the stacked orbit operators and the
    interval-exact curve weights the remaining three."""
    R = np.asarray(R)
    V = np.asarray(V)
    out = float(np.asarray(P) @ (B1 @ V + C1 @ R))
    d1r = pih.p1 @ R
    d2r = pih.p2 @ R
    for lv, op in zip(lambdas, ops):
        w1 = op.b2 @ R
        w2 = op.b3 @ R
        out += (lv.l1_1 @ w1 + lv.l1_2 @ w2
                - lv.l2_1 @ d2r + lv.l2_2 @ d1r
                + lv.l3_1 @ w1 + lv.l3_2 @ w2) / eps
    return out


@dataclass
class DescentDirection:
    R: np.ndarray
    V: np.ndarray
    kind: str
    slope: float


def direction_adjoint_41(mesh: Mesh, P: np.ndarray, U: np.ndarray,
                         B1, C1) -> DescentDirection:
    """R = -p u, V = -p (extended by zero on the boundary); the predicted
    slope covers the first two derivative terms only and is nonpositive
    by construction."""
    p_full = mesh.extend_interior(np.asarray(P))
    R = -p_full * np.asarray(U)
    V = -p_full
    slope = float(np.asarray(P) @ (B1 @ V + C1 @ R))
    return DescentDirection(R=R, V=V, kind="adjoint41", slope=slope)


def direction_operator_Rstar(P: np.ndarray, B1, C1) -> DescentDirection:
    """V* = -B1^T P, R* = -C1^T P; the first-two-term slope is exactly
    -|V*|^2 - |R*|^2."""
    P = np.asarray(P)
    V = -(B1.T @ P)
    R = -(C1.T @ P)
    slope = -float(V @ V) - float(R @ R)
    return DescentDirection(R=R, V=V, kind="rstar", slope=slope)


def direction_full_42(mesh: Mesh, pih: DiscreteDerivativeOps, P: np.ndarray,
                      B1, C1, lambdas: list[LambdaVectors],
                      ops: list[OrbitOperators], eps: float) -> DescentDirection:
    """V* as in the operator direction; R** collects the transposed curve
    terms so that the full operator-form slope is exactly
    -|V*|^2 - |R**|^2."""
    P = np.asarray(P)
    V = -(B1.T @ P)
    R = -(C1.T @ P)
    for lv, op in zip(lambdas, ops):
        R -= (op.b2.T @ (lv.l1_1 + lv.l3_1)
              + op.b3.T @ (lv.l1_2 + lv.l3_2)
              - pih.p2.T @ lv.l2_1 + pih.p1.T @ lv.l2_2) / eps
    slope = -float(V @ V) - float(R @ R)
    return DescentDirection(R=R, V=V, kind="full42", slope=slope)
