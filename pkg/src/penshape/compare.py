"""Post-run comparison solves.

After an optimization run, the penalized state is compared against the
classical Dirichlet solutions on two triangle-subset approximations of
the computed shape: the negativity region of the level-set function, and
the positivity region of the penalized state (the domain bounded by its
zero level curves).  Both solves use homogeneous Dirichlet data on the
submesh boundary and report the observation-region tracking error.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .cost import eval_J1
from .expr import Expr
from .mesh import LABEL_E, Mesh


class EmptySubmeshError(RuntimeError):
    pass


def _component_of(mesh: Mesh, selected: np.ndarray, start: int) -> np.ndarray:
    """Triangle ids of the adjacency component of ``selected`` containing
    ``start`` (breadth-first over shared edges)."""
    seen = np.zeros(mesh.num_triangles, dtype=bool)
    queue = deque([start])
    seen[start] = True
    nbr = mesh.neighbors
    while queue:
        t = queue.popleft()
        for s in nbr[t]:
            if s >= 0 and selected[s] and not seen[s]:
                seen[s] = True
                queue.append(s)
    return np.flatnonzero(seen)


def negativity_triangles(mesh: Mesh, G: np.ndarray) -> np.ndarray:
    """Triangles fully inside {g_h < 0}, restricted to the connected
    component containing the observation region."""
    G = np.asarray(G)
    selected = (G[mesh.triangles] < 0.0).all(axis=1)
    e_tris = np.flatnonzero((mesh.labels == LABEL_E) & selected)
    if len(e_tris) == 0:
        raise EmptySubmeshError(
            "no observation-region triangle lies inside {g_h < 0}")
    return _component_of(mesh, selected, int(e_tris[0]))


def positivity_triangles(mesh: Mesh, Y: np.ndarray) -> np.ndarray:
    """Triangles fully inside {y_h > 0}, restricted to the component
    holding the strongest observation-region state value; errors when the
    component reaches the outer boundary (no bounding zero level curve)."""
    y_full = mesh.extend_interior(np.asarray(Y))
    selected = (y_full[mesh.triangles] > 0.0).all(axis=1)
    e_tris = np.flatnonzero((mesh.labels == LABEL_E) & selected)
    if len(e_tris) == 0:
        raise EmptySubmeshError(
            "the penalized state is nonpositive on the observation region")
    start = int(e_tris[np.argmax(np.abs(y_full[mesh.triangles[e_tris]]).max(axis=1))])
    comp = _component_of(mesh, selected, start)
    comp_nodes = np.unique(mesh.triangles[comp])
    if mesh.boundary[comp_nodes].any():
        raise EmptySubmeshError(
            "the positivity region of the state reaches the outer boundary; "
            "its zero level set does not bound a domain")
    return comp


def solve_on_triangles(mesh: Mesh, tri_ids: np.ndarray, f: Expr) -> np.ndarray:
    """Homogeneous-Dirichlet Poisson solve on a triangle subset.

    Nodes on the relative boundary of the subset (and on the hold-all
    boundary) are fixed at zero; returns a full-length nodal field that
    vanishes outside the subset.
    """
    tri_ids = np.asarray(tri_ids)
    if len(tri_ids) == 0:
        raise EmptySubmeshError("empty triangle subset")
    tris = mesh.triangles[tri_ids]
    used = np.unique(tris)
    # interior nodes of the submesh: every incident triangle is selected
    sel = np.zeros(mesh.num_triangles, dtype=bool)
    sel[tri_ids] = True
    inner = np.array([sel[mesh.star_of(v)].all() for v in used])
    free = used[inner & ~mesh.boundary[used]]
    if len(free) == 0:
        raise EmptySubmeshError("triangle subset has no interior nodes")

    g = mesh.bary_coef[tri_ids][:, :, :2]
    contrib = np.einsum("t,tid,tjd->tij", mesh.areas[tri_ids], g, g)
    rows = np.repeat(tris, 3).reshape(-1)
    cols = np.tile(tris, (1, 3)).reshape(-1)
    K = sp.coo_matrix((contrib.reshape(-1), (rows, cols)),
                      shape=(mesh.n, mesh.n)).tocsr()[free, :][:, free]

    mid = 0.5 * (mesh.vertices[tris][:, [1, 2, 0]] + mesh.vertices[tris][:, [2, 0, 1]])
    fq = np.asarray(f(mid[:, :, 0], mid[:, :, 1]), dtype=float)
    if fq.ndim == 0:
        fq = np.full((len(tri_ids), 3), float(fq))
    from .fem import _PHI_MID
    load = np.einsum("t,tq,qi->ti", mesh.areas[tri_ids] / 3.0, fq, _PHI_MID)
    b_full = np.zeros(mesh.n)
    np.add.at(b_full, tris.ravel(), load.ravel())

    out = np.zeros(mesh.n)
    out[free] = fem.solve_spd(K.tocsr(), b_full[free])
    return out


@dataclass
class ComparisonReport:
    cost_levelset_domain: float      # Dirichlet solve on {g_h < 0}
    cost_state_domain: float         # Dirichlet solve on {y_h > 0}
    triangles_levelset: int
    triangles_state: int


def compare_costs(mesh: Mesh, G: np.ndarray, Y: np.ndarray, f: Expr,
                  j: Expr) -> ComparisonReport:
    """Observation-region cost of the classical Dirichlet solutions on the
    two submesh approximations of the computed shape."""
    tg = negativity_triangles(mesh, G)
    ty = positivity_triangles(mesh, Y)
    y1 = solve_on_triangles(mesh, tg, f)
    y2 = solve_on_triangles(mesh, ty, f)
    c1 = eval_J1(mesh, y1[mesh.interior], j)
    c2 = eval_J1(mesh, y2[mesh.interior], j)
    return ComparisonReport(cost_levelset_domain=c1, cost_state_domain=c2,
                            triangles_levelset=len(tg),
                            triangles_state=len(ty))
