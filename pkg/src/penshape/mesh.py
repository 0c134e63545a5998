"""Triangulations of the hold-all domain D.

Conventions used throughout the package:

* vertices are numbered 0..n-1; ``boundary`` marks nodes on the outer
  boundary of D, the complement is the interior index set ``interior``
  (size n0).
* every triangle carries a region label: ``LABEL_E`` for triangles inside
  the observation region E, ``LABEL_D`` for the rest of D.  The discrete
  observation region is the union of E-labelled triangles; ``e_nodes`` is
  the set of vertices touched by them (size n_e).
* nodal fields come in two lengths: "full" vectors of length n and
  "interior" vectors of length n0 (implicitly zero on the boundary of D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

LABEL_D = 0
LABEL_E = 1

_LABEL_TOKENS = {"D": LABEL_D, "E": LABEL_E}
_TOKEN_OF_LABEL = {LABEL_D: "D", LABEL_E: "E"}


class MeshError(ValueError):
    pass


class PointOutsideDomain(Exception):
    """Raised by locate_point for query points not covered by the mesh."""

    def __init__(self, point):
        self.point = tuple(point)
        super().__init__(f"point {self.point} is outside the mesh")


@dataclass
class Mesh:
    vertices: np.ndarray          # (n, 2) float64
    triangles: np.ndarray         # (nt, 3) int
    labels: np.ndarray            # (nt,) int, LABEL_E / LABEL_D
    boundary: np.ndarray          # (n,) bool

    # derived, filled by __post_init__
    interior: np.ndarray = field(init=False)     # sorted interior vertex ids
    e_nodes: np.ndarray = field(init=False)      # sorted vertex ids touching E
    full_to_interior: np.ndarray = field(init=False)  # -1 on boundary nodes
    areas: np.ndarray = field(init=False)        # (nt,)
    h: float = field(init=False)                 # max edge length

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.boundary = np.asarray(self.boundary, dtype=bool)
        self._validate()

        n = len(self.vertices)
        self.interior = np.flatnonzero(~self.boundary)
        self.full_to_interior = np.full(n, -1, dtype=np.int64)
        self.full_to_interior[self.interior] = np.arange(len(self.interior))
        e_mask = np.zeros(n, dtype=bool)
        e_mask[self.triangles[self.labels == LABEL_E].ravel()] = True
        self.e_nodes = np.flatnonzero(e_mask)

        p = self.vertices[self.triangles]           # (nt, 3, 2)
        e0 = p[:, 1] - p[:, 0]
        e1 = p[:, 2] - p[:, 0]
        self.areas = 0.5 * (e0[:, 0] * e1[:, 1] - e0[:, 1] * e1[:, 0])
        edges = np.concatenate([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1],
                                p[:, 0] - p[:, 2]])
        self.h = float(np.sqrt((edges ** 2).sum(axis=1).max()))

        self._build_adjacency()
        self._build_buckets()

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def n0(self) -> int:
        return len(self.interior)

    @property
    def n_e(self) -> int:
        return len(self.e_nodes)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def extend_interior(self, y_interior: np.ndarray) -> np.ndarray:
        """Interior-length vector -> full-length vector, zero on boundary."""
        out = np.zeros(self.n)
        out[self.interior] = y_interior
        return out

    def restrict(self, y_full: np.ndarray) -> np.ndarray:
        return np.asarray(y_full)[self.interior]

    # ------------------------------------------------------------------
    # validation / derived structure
    # ------------------------------------------------------------------
    def _validate(self):
        n = len(self.vertices)
        tri = self.triangles
        if tri.min(initial=0) < 0 or tri.max(initial=-1) >= n:
            bad = tri[(tri < 0) | (tri >= n)]
            raise MeshError(f"triangle vertex index out of range: {bad[0]}")
        p = self.vertices[tri]
        area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                 - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        if np.any(area2 <= 0):
            t = int(np.flatnonzero(area2 <= 0)[0])
            raise MeshError(f"triangle {t} has nonpositive area (bad orientation?)")
        if not np.all(np.isin(self.labels, (LABEL_D, LABEL_E))):
            t = int(np.flatnonzero(~np.isin(self.labels, (LABEL_D, LABEL_E)))[0])
            raise MeshError(f"triangle {t} carries no valid region label")

    def _build_adjacency(self):
        nt = len(self.triangles)
        # vertex -> incident triangles (CSR-like layout, ascending per vertex)
        counts = np.zeros(self.n, dtype=np.int64)
        for t in range(nt):
            for v in self.triangles[t]:
                counts[v] += 1
        self.star_ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=self.star_ptr[1:])
        self.star = np.empty(self.star_ptr[-1], dtype=np.int64)
        cursor = self.star_ptr[:-1].copy()
        for t in range(nt):
            for v in self.triangles[t]:
                self.star[cursor[v]] = t
                cursor[v] += 1

        # neighbour triangle across each local edge; -1 on the mesh boundary.
        # local edge i is opposite local vertex i.
        edge_map: dict[tuple[int, int], tuple[int, int]] = {}
        self.neighbors = np.full((nt, 3), -1, dtype=np.int64)
        for t in range(nt):
            a, b, c = self.triangles[t]
            for loc, (u, v) in enumerate(((b, c), (c, a), (a, b))):
                key = (u, v) if u < v else (v, u)
                if key in edge_map:
                    s, sloc = edge_map.pop(key)
                    if self.neighbors[t, loc] != -1 or self.neighbors[s, sloc] != -1:
                        raise MeshError("mesh is not edge-conforming")
                    self.neighbors[t, loc] = s
                    self.neighbors[s, sloc] = t
                else:
                    edge_map[key] = (t, loc)
        # remaining edges are boundary edges of the triangulation
        self.boundary_edges = np.array(sorted(edge_map.keys()), dtype=np.int64)

        # unique undirected edges, ascending (used by the level-set seed scan)
        seen = set()
        edges = []
        for t in range(nt):
            a, b, c = self.triangles[t]
            for u, v in ((a, b), (b, c), (c, a)):
                key = (u, v) if u < v else (v, u)
                if key not in seen:
                    seen.add(key)
                    edges.append(key)
        self.edges = np.array(sorted(edges), dtype=np.int64)

        # per-triangle barycentric coefficients:
        # l_i(p) = bary_c[t, i, 0]*px + bary_c[t, i, 1]*py + bary_c[t, i, 2]
        p = self.vertices[self.triangles]
        det = 2.0 * self.areas
        coef = np.empty((len(self.triangles), 3, 3))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            coef[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / det
            coef[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / det
            coef[:, i, 2] = (p[:, j, 0] * p[:, k, 1] - p[:, k, 0] * p[:, j, 1]) / det
        self.bary_coef = coef
        # flat python lists for the scalar walk loop (cheaper than ndarray indexing)
        self._coef_flat = coef.reshape(len(self.triangles), 9).tolist()
        self._tri_list = self.triangles.tolist()
        self._nbr_list = self.neighbors.tolist()

    def _build_buckets(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        self.bbox = (lo, hi)
        nb = max(1, int(math.sqrt(len(self.triangles) / 2.0)))
        self._nb = nb
        span = np.maximum(hi - lo, 1e-300)
        self._bucket_scale = nb / span
        buckets: list[list[int]] = [[] for _ in range(nb * nb)]
        p = self.vertices[self.triangles]
        tlo = np.clip(((p.min(axis=1) - lo) * self._bucket_scale).astype(int), 0, nb - 1)
        thi = np.clip(((p.max(axis=1) - lo) * self._bucket_scale).astype(int), 0, nb - 1)
        for t in range(len(self.triangles)):
            for ix in range(tlo[t, 0], thi[t, 0] + 1):
                for iy in range(tlo[t, 1], thi[t, 1] + 1):
                    buckets[ix * nb + iy].append(t)
        self._buckets = buckets

    def _bucket_of(self, x: float, y: float) -> list[int]:
        lo, _ = self.bbox
        ix = int((x - lo[0]) * self._bucket_scale[0])
        iy = int((y - lo[1]) * self._bucket_scale[1])
        nb = self._nb
        if ix < 0 or iy < 0 or ix >= nb or iy >= nb:
            return []
        return self._buckets[ix * nb + iy]

    def star_of(self, v: int) -> np.ndarray:
        return self.star[self.star_ptr[v]:self.star_ptr[v + 1]]


# ----------------------------------------------------------------------
# point location
# ----------------------------------------------------------------------
_LOC_TOL = 1e-12


def _bary(mesh: Mesh, t: int, x: float, y: float):
    c = mesh._coef_flat[t]
    l0 = c[0] * x + c[1] * y + c[2]
    l1 = c[3] * x + c[4] * y + c[5]
    l2 = c[6] * x + c[7] * y + c[8]
    return l0, l1, l2


def locate_point(mesh: Mesh, p, hint: int = 0):
    """Find the triangle containing ``p`` and its barycentric coordinates.

    Walks the mesh from ``hint``; falls back to a uniform bucket grid when
    the walk leaves the triangulation.  Points on shared edges/vertices are
    resolved to the lowest containing triangle index, so curve integrals
    are reproducible.

    Raises PointOutsideDomain if no triangle contains ``p``.
    """
    x, y = float(p[0]), float(p[1])
    lo, hi = mesh.bbox
    if not (lo[0] - _LOC_TOL <= x <= hi[0] + _LOC_TOL
            and lo[1] - _LOC_TOL <= y <= hi[1] + _LOC_TOL):
        raise PointOutsideDomain(p)

    tol = _LOC_TOL * max(1.0, abs(x), abs(y))
    t = hint if 0 <= hint < len(mesh.triangles) else 0
    found = -1
    nbr = mesh._nbr_list
    for _ in range(4 * len(mesh.triangles)):
        l0, l1, l2 = _bary(mesh, t, x, y)
        worst = 0
        lmin = l0
        if l1 < lmin:
            worst, lmin = 1, l1
        if l2 < lmin:
            worst, lmin = 2, l2
        if lmin >= -tol:
            found = t
            break
        nxt = nbr[t][worst]
        if nxt < 0:
            break
        t = nxt
    if found < 0:
        # bucket fallback, ascending triangle ids (deterministic tie-break)
        for cand in mesh._bucket_of(x, y):
            l0, l1, l2 = _bary(mesh, cand, x, y)
            if min(l0, l1, l2) >= -tol:
                found = cand
                break
        if found < 0:
            raise PointOutsideDomain(p)

    l = _bary(mesh, found, x, y)
    if min(l) < tol:
        # p touches an edge or vertex: pick the lowest-index containing
        # triangle among the stars of the touched vertices.
        cands: set[int] = set()
        tv = mesh._tri_list[found]
        for i in range(3):
            if l[i] > tol:
                cands.update(mesh.star_of(tv[i]).tolist())
        for cand in sorted(cands):
            lc = _bary(mesh, cand, x, y)
            if min(lc) >= -tol:
                found = cand
                l = lc
                break
    lam = np.clip(np.array(l), 0.0, 1.0)
    lam /= lam.sum()
    return found, lam


def interpolate(mesh: Mesh, values: np.ndarray, p, hint: int = 0):
    """P1 interpolation of a full-length nodal vector at a point."""
    t, lam = locate_point(mesh, p, hint)
    v = mesh.triangles[t]
    return float(values[v[0]] * lam[0] + values[v[1]] * lam[1] + values[v[2]] * lam[2]), t


# ----------------------------------------------------------------------
# generators / IO
# ----------------------------------------------------------------------
def _points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon test, vectorized over points."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    px, py = poly[:, 0], poly[:, 1]
    nv = len(poly)
    for i in range(nv):
        j = (i - 1) % nv
        crosses = (py[i] > y) != (py[j] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (px[j] - px[i]) * (y - py[i]) / (py[j] - py[i]) + px[i]
        inside ^= crosses & (x < xint)
    return inside


def ngon(center, radius: float, sides: int = 32) -> np.ndarray:
    """Regular polygon approximating a circle, CCW."""
    ang = 2 * np.pi * np.arange(sides) / sides
    return np.column_stack([center[0] + radius * np.cos(ang),
                            center[1] + radius * np.sin(ang)])


def generate_rect_mesh(bounds, resolution, e_polygon=None) -> Mesh:
    """Structured triangulation of the rectangle ``bounds``.

    bounds = (x0, y0, x1, y1); resolution = cells per axis, an int or a
    pair (nx, ny).  Each cell is split along its lower-left/upper-right
    diagonal.  A triangle is labelled E iff its barycenter lies inside
    ``e_polygon``, i.e. E is replaced by the union of labelled triangles.
    """
    x0, y0, x1, y1 = bounds
    if np.isscalar(resolution):
        nx = ny = int(resolution)
    else:
        nx, ny = (int(r) for r in resolution)
    if nx < 1 or ny < 1:
        raise MeshError("resolution must be at least 1 cell (2 nodes) per axis")
    if x1 <= x0 or y1 <= y0:
        raise MeshError("degenerate bounds")

    if e_polygon is not None:
        e_polygon = np.asarray(e_polygon, dtype=float)
        if (e_polygon[:, 0].min() <= x0 or e_polygon[:, 0].max() >= x1
                or e_polygon[:, 1].min() <= y0 or e_polygon[:, 1].max() >= y1):
            raise MeshError("E polygon must lie strictly inside the bounds")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    triangles = np.array(tris, dtype=np.int64)

    if e_polygon is not None:
        bary = vertices[triangles].mean(axis=1)
        labels = np.where(_points_in_polygon(bary, e_polygon), LABEL_E, LABEL_D)
    else:
        labels = np.full(len(triangles), LABEL_D)

    bmask = np.zeros(len(vertices), dtype=bool)
    on_edge = ((vertices[:, 0] == x0) | (vertices[:, 0] == x1)
               | (vertices[:, 1] == y0) | (vertices[:, 1] == y1))
    bmask[on_edge] = True
    return Mesh(vertices, triangles, labels, bmask)


def generate_disk_mesh(radius: float, rings: int, sectors: int,
                       e_radius: float | None = None) -> Mesh:
    """Polar triangulation of a polygonal disk (regular ``sectors``-gon).

    Triangles whose barycenter lies within ``e_radius`` of the center are
    labelled E.  Used for manufactured-solution convergence studies.
    """
    if rings < 1 or sectors < 3:
        raise MeshError("need at least 1 ring and 3 sectors")
    verts = [(0.0, 0.0)]
    for r in range(1, rings + 1):
        rr = radius * r / rings
        for s in range(sectors):
            a = 2 * np.pi * s / sectors
            verts.append((rr * np.cos(a), rr * np.sin(a)))
    vertices = np.array(verts)

    def rid(r, s):
        return 1 + (r - 1) * sectors + (s % sectors)

    tris = []
    for s in range(sectors):
        tris.append((0, rid(1, s), rid(1, s + 1)))
    for r in range(1, rings):
        for s in range(sectors):
            a, b = rid(r, s), rid(r, s + 1)
            c, d = rid(r + 1, s), rid(r + 1, s + 1)
            tris.append((a, d, b))
            tris.append((a, c, d))
    triangles = np.array(tris, dtype=np.int64)
    bary = vertices[triangles].mean(axis=1)
    if e_radius is not None:
        labels = np.where((bary ** 2).sum(axis=1) < e_radius ** 2, LABEL_E, LABEL_D)
    else:
        labels = np.full(len(triangles), LABEL_D)
    bmask = np.zeros(len(vertices), dtype=bool)
    bmask[rid(rings, 0):rid(rings, 0) + sectors] = True
    return Mesh(vertices, triangles, labels, bmask)


def load_mesh(path) -> Mesh:
    """Read the plain-text mesh format (see save_mesh)."""
    with open(path) as fh:
        tokens = fh.read().split()
    pos = 0

    def take(k):
        nonlocal pos
        if pos + k > len(tokens):
            raise MeshError(f"{path}: truncated mesh file")
        out = tokens[pos:pos + k]
        pos += k
        return out

    nv = int(take(1)[0])
    verts = np.empty((nv, 2))
    bmask = np.zeros(nv, dtype=bool)
    for i in range(nv):
        x, y, flag = take(3)
        verts[i] = (float(x), float(y))
        bmask[i] = int(flag) != 0
    nt = int(take(1)[0])
    tris = np.empty((nt, 3), dtype=np.int64)
    labels = np.empty(nt, dtype=np.int64)
    for t in range(nt):
        i, j, k, lab = take(4)
        tris[t] = (int(i), int(j), int(k))
        if lab not in _LABEL_TOKENS:
            raise MeshError(f"{path}: triangle {t} has unknown region label {lab!r}")
        labels[t] = _LABEL_TOKENS[lab]
    return Mesh(verts, tris, labels, bmask)


def save_mesh(mesh: Mesh, path):
    """Write the plain-text format: vertex count, 'x y flag' lines,
    triangle count, 'i j k label' lines."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n}\n")
        for (x, y), b in zip(mesh.vertices, mesh.boundary):
            fh.write(f"{float(x)!r} {float(y)!r} {int(b)}\n")
        fh.write(f"{mesh.num_triangles}\n")
        for (i, j, k), lab in zip(mesh.triangles, mesh.labels):
            fh.write(f"{i} {j} {k} {_TOKEN_OF_LABEL[int(lab)]}\n")


def write_vtk(mesh: Mesh, path, point_data: dict[str, np.ndarray] | None = None):
    """Legacy-VTK ASCII export of the triangulation with optional nodal fields."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\npenshape mesh\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        nt = mesh.num_triangles
        fh.write(f"CELLS {nt} {4 * nt}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"3 {i} {j} {k}\n")
        fh.write(f"CELL_TYPES {nt}\n")
        fh.write("5\n" * nt)
        fh.write(f"CELL_DATA {nt}\nSCALARS region int 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(str(int(l)) for l in mesh.labels) + "\n")
        if point_data:
            fh.write(f"POINT_DATA {mesh.n}\n")
            for name, values in point_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in np.asarray(values, dtype=float):
                    fh.write(f"{float(v)!r}\n")


def read_vtk(path):
    """Read back the legacy-VTK files produced by write_vtk.

    Returns (mesh, point_data) where point_data maps field names to
    full-length nodal arrays.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    i = 0

    def seek(prefix):
        nonlocal i
        while i < len(lines) and not lines[i].startswith(prefix):
            i += 1
        if i == len(lines):
            raise MeshError(f"{path}: missing {prefix} section")
        return lines[i].split()

    head = seek("POINTS")
    n = int(head[1])
    i += 1
    verts = np.array([[float(t) for t in lines[i + k].split()[:2]]
                      for k in range(n)])
    i += n
    head = seek("CELLS")
    nt = int(head[1])
    i += 1
    tris = np.array([[int(t) for t in lines[i + k].split()[1:4]]
                     for k in range(nt)], dtype=np.int64)
    i += nt
    seek("CELL_DATA")
    seek("SCALARS region")
    i += 2
    labels = np.array([int(lines[i + k]) for k in range(nt)], dtype=np.int64)
    i += nt
    point_data = {}
    while i < len(lines):
        if lines[i].startswith("SCALARS"):
            name = lines[i].split()[1]
            i += 2
            point_data[name] = np.array([float(lines[i + k]) for k in range(n)])
            i += n
        else:
            i += 1
    # boundary nodes from topology: endpoints of edges used by one triangle
    raw = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    raw.sort(axis=1)
    uniq, counts = np.unique(raw, axis=0, return_counts=True)
    bmask = np.zeros(n, dtype=bool)
    bmask[uniq[counts == 1].ravel()] = True
    mesh = Mesh(vertices=verts, triangles=tris, labels=labels, boundary=bmask)
    return mesh, point_data


# ----------------------------------------------------------------------
# discrete derivative operators
# ----------------------------------------------------------------------
@dataclass
class DiscreteDerivativeOps:
    """Nodal discrete-derivative matrices.

    Row i averages the constant per-triangle P1 gradients over the
    triangles incident to vertex i, weighted by triangle area.  Applied to
    the nodal vector of an affine function the operators return its exact
    gradient at every vertex.
    """

    p1: sp.csr_matrix    # n x n, d/dx1
    p2: sp.csr_matrix    # n x n, d/dx2


def build_pih(mesh: Mesh) -> DiscreteDerivativeOps:
    tri = mesh.triangles
    nt, n = len(tri), mesh.n
    # gradient of local hat v on triangle t: rows of bary_coef (x,y parts)
    gx = mesh.bary_coef[:, :, 0]     # (nt, 3)
    gy = mesh.bary_coef[:, :, 1]
    # for triangle t, entry (i=v_a, j=v_b) carries area_t * d phi_b / dx
    rows = np.repeat(tri, 3).reshape(-1)
    cols = np.tile(tri, (1, 3)).reshape(-1)
    vals1 = (mesh.areas[:, None, None] * np.broadcast_to(gx[:, None, :], (nt, 3, 3))).reshape(-1)
    vals2 = (mesh.areas[:, None, None] * np.broadcast_to(gy[:, None, :], (nt, 3, 3))).reshape(-1)

    wsum = np.zeros(n)
    np.add.at(wsum, tri.ravel(), np.repeat(mesh.areas, 3))
    inv_w = 1.0 / wsum

    p1 = sp.coo_matrix((vals1, (rows, cols)), shape=(n, n)).tocsr()
    p2 = sp.coo_matrix((vals2, (rows, cols)), shape=(n, n)).tocsr()
    scale = sp.diags(inv_w)
    return DiscreteDerivativeOps(p1=(scale @ p1).tocsr(), p2=(scale @ p2).tocsr())
