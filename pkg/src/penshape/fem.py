"""P1 assembly on the hold-all mesh and the three elliptic solves.

All weighted mass matrices use the 3-point edge-midpoint quadrature rule
(exact for quadratic integrands); the positive part in the control weight
is applied pointwise at the quadrature nodes.

Matrix shapes follow the discrete problem: the stiffness matrix K is
n0 x n0 (interior nodes), the control masses B1/C1 are n0 x n, and the
observation overlap M_ED is n_e x n0.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import LABEL_E, Mesh

# values of the three local hats at the three edge midpoints
_PHI_MID = np.array([[0.0, 0.5, 0.5],
                     [0.5, 0.0, 0.5],
                     [0.5, 0.5, 0.0]])
# outer products phi_i(q) phi_j(q) per midpoint
_PHI_OUTER = np.einsum("qi,qj->qij", _PHI_MID, _PHI_MID)


class SolverError(RuntimeError):
    pass


def midpoints(mesh: Mesh) -> np.ndarray:
    """Edge midpoints per triangle, shape (nt, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    return 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])


def values_at_midpoints(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    """P1 values of a full-length nodal vector at the edge midpoints, (nt, 3)."""
    v = np.asarray(nodal)[mesh.triangles]          # (nt, 3)
    return v @ _PHI_MID.T


def _weighted_mass(mesh: Mesh, weights: np.ndarray) -> sp.csr_matrix:
    """n x n matrix with entries sum_T sum_q (area/3) w_q phi_i(q) phi_j(q)."""
    tri = mesh.triangles
    nt = len(tri)
    contrib = np.einsum("t,tq,qij->tij", mesh.areas / 3.0, weights, _PHI_OUTER)
    rows = np.repeat(tri, 3).reshape(-1)
    cols = np.tile(tri, (1, 3)).reshape(-1)
    return sp.coo_matrix((contrib.reshape(-1), (rows, cols)),
                         shape=(mesh.n, mesh.n)).tocsr()


def mass_matrix(mesh: Mesh, only_e: bool = False) -> sp.csr_matrix:
    w = np.ones((mesh.num_triangles, 3))
    if only_e:
        w[mesh.labels != LABEL_E] = 0.0
    return _weighted_mass(mesh, w)


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """K_ij = int_D grad(phi_j) . grad(phi_i), restricted to interior nodes."""
    tri = mesh.triangles
    g = mesh.bary_coef[:, :, :2]                  # (nt, 3, 2) hat gradients
    contrib = np.einsum("t,tid,tjd->tij", mesh.areas, g, g)
    rows = np.repeat(tri, 3).reshape(-1)
    cols = np.tile(tri, (1, 3)).reshape(-1)
    full = sp.coo_matrix((contrib.reshape(-1), (rows, cols)),
                         shape=(mesh.n, mesh.n)).tocsr()
    idx = mesh.interior
    return full[idx, :][:, idx].tocsr()


def assemble_load(mesh: Mesh, f) -> np.ndarray:
    """F_i = int_D f phi_i for interior i; f is an Expr or a callable."""
    mid = midpoints(mesh)
    fq = np.asarray(f(mid[:, :, 0], mid[:, :, 1]), dtype=float)
    if fq.ndim == 0:
        fq = np.full((mesh.num_triangles, 3), float(fq))
    contrib = np.einsum("t,tq,qi->ti", mesh.areas / 3.0, fq, _PHI_MID)
    out = np.zeros(mesh.n)
    np.add.at(out, mesh.triangles.ravel(), contrib.ravel())
    return out[mesh.interior]


def control_weight(mesh: Mesh, G: np.ndarray, eps: float) -> np.ndarray:
    """(g_h + eps)_+ at the quadrature nodes, (nt, 3)."""
    return np.clip(values_at_midpoints(mesh, G) + eps, 0.0, None)


def assemble_B1(mesh: Mesh, G: np.ndarray, eps: float) -> sp.csr_matrix:
    """B1_ij = int_D (g_h+eps)_+^2 phi_j phi_i, i interior, j in I."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = control_weight(mesh, G, eps) ** 2
    return _weighted_mass(mesh, w)[mesh.interior, :].tocsr()


def assemble_C1(mesh: Mesh, G: np.ndarray, eps: float, U: np.ndarray) -> sp.csr_matrix:
    """C1_ij = int_D 2 (g_h+eps)_+ u_h phi_j phi_i, i interior, j in I."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = 2.0 * control_weight(mesh, G, eps) * values_at_midpoints(mesh, U)
    return _weighted_mass(mesh, w)[mesh.interior, :].tocsr()


def assemble_MED(mesh: Mesh, domain: str = "D") -> sp.csr_matrix:
    """Observation overlap (int phi_i phi_j), rows i in I_E, cols j interior.

    The integral runs over all of D by default; ``domain='E'`` restricts it
    to the E-labelled triangles.
    """
    if domain not in ("D", "E"):
        raise ValueError("domain must be 'D' or 'E'")
    m = mass_matrix(mesh, only_e=(domain == "E"))
    return m[mesh.e_nodes, :][:, mesh.interior].tocsr()


def solve_spd(K: sp.spmatrix, b: np.ndarray, rtol: float = 1e-10,
              max_iter: int | None = None,
              x0: np.ndarray | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients for an SPD system."""
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    n = K.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    dinv = 1.0 / K.diagonal()
    M = spla.LinearOperator(K.shape, matvec=lambda r: dinv * r)
    x, info = spla.cg(K, b, rtol=rtol, atol=0.0, maxiter=max_iter, M=M, x0=x0)
    if info != 0:
        raise SolverError(f"CG failed to converge within {max_iter} iterations "
                          f"(info={info})")
    return x


def solve_state(mesh: Mesh, G: np.ndarray, U: np.ndarray, eps: float, f,
                K: sp.spmatrix | None = None,
                F: np.ndarray | None = None,
                B1: sp.spmatrix | None = None) -> np.ndarray:
    """Solve K Y = F + B1(G, eps) U for the interior state vector Y."""
    if K is None:
        K = assemble_stiffness(mesh)
    if F is None:
        F = assemble_load(mesh, f)
    if B1 is None:
        B1 = assemble_B1(mesh, G, eps)
    return solve_spd(K, F + B1 @ np.asarray(U))


def solve_variation(mesh: Mesh, G: np.ndarray, U: np.ndarray, eps: float,
                    R: np.ndarray, V: np.ndarray,
                    K: sp.spmatrix | None = None,
                    B1: sp.spmatrix | None = None,
                    C1: sp.spmatrix | None = None) -> np.ndarray:
    """Solve K Q = B1 V + C1 R (linearized state in direction (R, V))."""
    if K is None:
        K = assemble_stiffness(mesh)
    if B1 is None:
        B1 = assemble_B1(mesh, G, eps)
    if C1 is None:
        C1 = assemble_C1(mesh, G, eps, U)
    return solve_spd(K, B1 @ np.asarray(V) + C1 @ np.asarray(R))


def solve_adjoint(mesh: Mesh, Y: np.ndarray, N_list, eps: float, L: np.ndarray,
                  K: sp.spmatrix | None = None,
                  med: sp.spmatrix | None = None) -> np.ndarray:
    """Solve K P = M_ED^T L + (2/eps) sum_c N_c Y.

    ``N_list`` holds one curve mass matrix (n0 x n0) per boundary component
    and ``L`` the nodal derivative of the cost integrand on I_E.
    """
    if K is None:
        K = assemble_stiffness(mesh)
    if med is None:
        med = assemble_MED(mesh)
    rhs = med.T @ np.asarray(L)
    for N in N_list:
        rhs = rhs + (2.0 / eps) * (N @ Y)
    return solve_spd(K, rhs)
