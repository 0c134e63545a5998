"""Zero level set machinery: seed detection, Hamiltonian orbit tracing,
linearized variation paths and the stacked orbit operators.

The boundary of the current shape is the zero level set of the P1
function g_h.  Each connected component is traced as a periodic orbit of
the Hamiltonian field (-d2 g, d1 g) using forward Euler, where the
derivatives are the nodal discrete-derivative fields interpolated at the
current point.  Closure is detected by returning to the section through
the seed and the last point is then pinned back onto the seed, so traced
orbits are exactly closed polygons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .mesh import (DiscreteDerivativeOps, Mesh, PointOutsideDomain,
                   interpolate, locate_point)

STAGNATION_SPEED = 1e-12


class TraceError(RuntimeError):
    pass


class EscapeError(TraceError):
    """The orbit left the hold-all domain."""


class StagnationError(TraceError):
    """The Hamiltonian velocity dropped below the nondegeneracy threshold."""


class ClosureError(TraceError):
    """No periodic closure within the step budget."""


class EmptyZeroSetError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """Closed polygonal orbit; points has shape (m+1, 2) with
    points[m] == points[0] imposed.  The time partition is uniform."""

    points: np.ndarray
    dt: float
    component: int = 0

    @property
    def m(self) -> int:
        return len(self.points) - 1

    @property
    def period(self) -> float:
        return self.m * self.dt

    @property
    def seed(self) -> np.ndarray:
        return self.points[0]

    def segment_lengths(self) -> np.ndarray:
        d = np.diff(self.points, axis=0)
        return np.sqrt((d ** 2).sum(axis=1))

    def length(self) -> float:
        return float(self.segment_lengths().sum())


@dataclass
class VariationPath:
    """Linearized orbit response W_k to a level-set direction r; (m+1, 2),
    starts at zero and is generally not closed."""

    points: np.ndarray

    @property
    def m(self) -> int:
        return len(self.points) - 1


@dataclass
class OrbitOperators:
    """Per-step recursion matrices and their stacked closed forms.

    b2 @ R and b3 @ R give the horizontal/vertical variation-path samples
    (W_1 .. W_m) for any level-set direction R.
    """

    m2: np.ndarray      # (m, 2, 2)
    b2: np.ndarray      # (m, n)
    b3: np.ndarray      # (m, n)


def _field_value(mesh: Mesh, values, p, hint):
    val, t = interpolate(mesh, values, p, hint)
    return val, t


def trace_orbit_fields(mesh: Mesh, d1: np.ndarray, d2: np.ndarray, seed,
                       dt: float, max_steps: int = 200_000,
                       min_steps: int = 10, closure_factor: float = 10.0,
                       component: int = 0) -> Trajectory:
    """Forward-Euler orbit of the field (-d2, d1) from ``seed``.

    d1, d2 are full-length nodal vectors (the discrete partial derivatives
    of g_h).  Closure is declared once, after ``min_steps`` steps, the
    path crosses the section through the seed (normal to the launch
    velocity) in the forward sense within ``closure_factor * dt * |v0|``
    of the seed; the final point is then replaced by the seed.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = np.array([float(seed[0]), float(seed[1])])
    hint = 0
    try:
        v1, hint = _field_value(mesh, d2, z, hint)
        v2, hint = _field_value(mesh, d1, z, hint)
    except PointOutsideDomain as e:
        raise EscapeError(f"seed {tuple(z)} outside the domain") from e
    v0 = np.array([-v1, v2])
    speed0 = float(np.hypot(*v0))
    if speed0 < STAGNATION_SPEED:
        raise StagnationError(f"zero velocity at seed {tuple(z)}")
    normal = v0 / speed0
    radius = closure_factor * dt * speed0

    pts = [z.copy()]
    s_prev = 0.0
    for k in range(max_steps):
        a, hint = _field_value(mesh, d2, z, hint)
        b, hint = _field_value(mesh, d1, z, hint)
        vel = np.array([-a, b])
        speed = float(np.hypot(*vel))
        if speed < STAGNATION_SPEED:
            raise StagnationError(f"stagnation at {tuple(z)} after {k} steps")
        z = z + dt * vel
        try:
            # advance the hint so the next interpolation walks locally
            _, hint = _field_value(mesh, d1, z, hint)
        except PointOutsideDomain as e:
            raise EscapeError(f"orbit escaped the domain at {tuple(z)}") from e
        pts.append(z.copy())
        s = float((z - pts[0]) @ normal)
        if (k + 1 >= min_steps and s_prev < 0.0 <= s
                and np.hypot(*(z - pts[0])) < radius):
            pts[-1] = pts[0].copy()
            return Trajectory(points=np.array(pts), dt=dt, component=component)
        s_prev = s
    raise ClosureError(f"no closure within {max_steps} steps")


def trace_orbit(mesh: Mesh, G: np.ndarray, pih: DiscreteDerivativeOps, seed,
                dt: float, max_steps: int = 200_000, **kw) -> Trajectory:
    """Trace the orbit of g_h through ``seed`` (see trace_orbit_fields)."""
    d1 = pih.p1 @ np.asarray(G)
    d2 = pih.p2 @ np.asarray(G)
    return trace_orbit_fields(mesh, d1, d2, seed, dt, max_steps, **kw)


def trace_fixed_steps(mesh: Mesh, G: np.ndarray, pih: DiscreteDerivativeOps,
                      seed, dt: float, m: int, component: int = 0) -> Trajectory:
    """Exactly ``m`` Euler steps from ``seed`` with no closure detection and
    no endpoint pinning.  Used by derivative checks, where the cost must
    depend smoothly on the level-set function."""
    d1 = pih.p1 @ np.asarray(G)
    d2 = pih.p2 @ np.asarray(G)
    z = np.array([float(seed[0]), float(seed[1])])
    hint = 0
    pts = [z.copy()]
    for _ in range(m):
        a, hint = _field_value(mesh, d2, z, hint)
        b, hint = _field_value(mesh, d1, z, hint)
        vel = np.array([-a, b])
        if float(np.hypot(*vel)) < STAGNATION_SPEED:
            raise StagnationError(f"stagnation at {tuple(z)}")
        z = z + dt * vel
        try:
            _, hint = _field_value(mesh, d1, z, hint)
        except PointOutsideDomain as e:
            raise EscapeError(f"orbit escaped the domain at {tuple(z)}") from e
        pts.append(z.copy())
    return Trajectory(points=np.array(pts), dt=dt, component=component)


def trace_orbit_fixed_m(mesh: Mesh, G: np.ndarray, pih: DiscreteDerivativeOps,
                        seed, m: int, pilot_dt: float,
                        max_steps: int = 200_000, component: int = 0) -> Trajectory:
    """Fixed-partition mode: a pilot trace estimates the period, the orbit
    is then retraced with exactly ``m`` Euler steps of size T/m and the
    endpoint is pinned to the seed."""
    pilot = trace_orbit(mesh, G, pih, seed, pilot_dt, max_steps,
                        component=component)
    dt = pilot.period / m
    d1 = pih.p1 @ np.asarray(G)
    d2 = pih.p2 @ np.asarray(G)
    z = np.array([float(seed[0]), float(seed[1])])
    hint = 0
    pts = [z.copy()]
    for _ in range(m - 1):
        a, hint = _field_value(mesh, d2, z, hint)
        b, hint = _field_value(mesh, d1, z, hint)
        vel = np.array([-a, b])
        if float(np.hypot(*vel)) < STAGNATION_SPEED:
            raise StagnationError(f"stagnation at {tuple(z)}")
        z = z + dt * vel
        try:
            _, hint = _field_value(mesh, d1, z, hint)
        except PointOutsideDomain as e:
            raise EscapeError(f"orbit escaped the domain at {tuple(z)}") from e
        pts.append(z.copy())
    pts.append(pts[0].copy())      # impose Z_m = Z_0
    return Trajectory(points=np.array(pts), dt=dt, component=component)


def _edge_crossings(mesh: Mesh, G: np.ndarray):
    """Zero crossings of g_h on mesh edges, ordered by edge index."""
    G = np.asarray(G)
    a, b = mesh.edges[:, 0], mesh.edges[:, 1]
    ga, gb = G[a], G[b]
    mask = ga * gb < 0.0
    idx = np.flatnonzero(mask)
    theta = ga[mask] / (ga[mask] - gb[mask])
    pts = mesh.vertices[a[mask]] + theta[:, None] * (
        mesh.vertices[b[mask]] - mesh.vertices[a[mask]])
    return idx, pts


def _crossing_groups(mesh: Mesh, G: np.ndarray):
    """Group the zero crossings by boundary curve.

    Nodes are split into sign components over the mesh edge graph (edges
    whose endpoints share a sign); each crossing edge is keyed by the pair
    (negative-side component, positive-side component).  A closed curve of
    the zero set separates exactly one such pair, so each key collects the
    crossings of one curve regardless of tracer drift.
    """
    idx, pts = _edge_crossings(mesh, G)
    if len(pts) == 0:
        raise EmptyZeroSetError("the zero level set of g_h is empty")
    G = np.asarray(G)
    a, b = mesh.edges[:, 0], mesh.edges[:, 1]
    neg = G < 0.0
    same = neg[a] == neg[b]
    graph = sp.coo_matrix((np.ones(int(same.sum())), (a[same], b[same])),
                          shape=(mesh.n, mesh.n))
    _, labels = connected_components(graph, directed=False)
    ca, cb = a[idx], b[idx]
    neg_lab = np.where(neg[ca], labels[ca], labels[cb])
    pos_lab = np.where(neg[ca], labels[cb], labels[ca])
    keys = neg_lab * (labels.max() + 1) + pos_lab
    groups = [pts[keys == k] for k in np.unique(keys)]
    return groups


def trace_components(mesh: Mesh, G: np.ndarray, pih: DiscreteDerivativeOps,
                     dt: float, max_steps: int = 200_000,
                     fixed_m: int | None = None) -> list[Trajectory]:
    """Trace every connected component of the zero level set, one orbit
    per boundary curve of the sign pattern of g_h."""
    out: list[Trajectory] = []
    for comp, group in enumerate(_crossing_groups(mesh, G)):
        seed = group[0]
        if fixed_m is None:
            traj = trace_orbit(mesh, G, pih, seed, dt, max_steps,
                               component=comp)
        else:
            traj = trace_orbit_fixed_m(mesh, G, pih, seed, fixed_m, dt,
                                       max_steps, component=comp)
        out.append(traj)
    return out


def find_seeds(mesh: Mesh, G: np.ndarray) -> list[np.ndarray]:
    """One seed point per connected component of the zero level set."""
    return [group[0] for group in _crossing_groups(mesh, G)]


@dataclass
class AdmissibilityReport:
    positive_on_boundary: bool
    negative_on_e: bool
    gradient_nondegenerate: bool
    min_boundary_value: float
    max_e_value: float
    min_zero_set_gradient: float

    @property
    def ok(self) -> bool:
        return (self.positive_on_boundary and self.negative_on_e
                and self.gradient_nondegenerate)

    def failures(self) -> list[str]:
        out = []
        if not self.positive_on_boundary:
            out.append("g_h is not positive on the boundary of D")
        if not self.negative_on_e:
            out.append("g_h is not negative on the observation region")
        if not self.gradient_nondegenerate:
            out.append("grad g_h degenerates on the zero level set")
        return out


def validate_admissible(mesh: Mesh, G: np.ndarray,
                        grad_threshold: float = 1e-8) -> AdmissibilityReport:
    """Check the admissibility conditions: g_h > 0 on the boundary nodes,
    g_h < 0 on the E nodes, and a nondegenerate gradient on every triangle
    crossed by the zero level set."""
    G = np.asarray(G)
    bvals = G[mesh.boundary]
    evals = G[mesh.e_nodes]
    min_b = float(bvals.min()) if len(bvals) else np.inf
    max_e = float(evals.max()) if len(evals) else -np.inf

    tv = G[mesh.triangles]
    crossing = (tv.min(axis=1) < 0.0) & (tv.max(axis=1) > 0.0)
    if crossing.any():
        gx = np.einsum("ti,ti->t", mesh.bary_coef[:, :, 0], tv)
        gy = np.einsum("ti,ti->t", mesh.bary_coef[:, :, 1], tv)
        min_grad = float(np.sqrt(gx[crossing] ** 2 + gy[crossing] ** 2).min())
    else:
        min_grad = 0.0
    return AdmissibilityReport(
        positive_on_boundary=min_b > 0.0,
        negative_on_e=max_e < 0.0,
        gradient_nondegenerate=min_grad > grad_threshold,
        min_boundary_value=min_b,
        max_e_value=max_e,
        min_zero_set_gradient=min_grad,
    )


def _element_jacobian(mesh: Mesh, d1: np.ndarray, d2: np.ndarray, t: int):
    """Exact spatial derivatives of the P1 fields (d1, d2) on triangle t.

    Returns (a11, a12, a21, a22) with a_ab the elementwise derivative
    d_a of the field d^b; this is the true Jacobian of the traced
    velocity field inside the triangle (the smoothed composition
    Pi^a(Pi^b G) is O(1) wrong wherever g_h kinks, which breaks the
    finite-difference identity of the derivative forms).
    """
    v = mesh.triangles[t]
    bx = mesh.bary_coef[t, :, 0]
    by = mesh.bary_coef[t, :, 1]
    return (float(d1[v] @ bx), float(d2[v] @ bx),
            float(d1[v] @ by), float(d2[v] @ by))


def variation_path(mesh: Mesh, G: np.ndarray, pih: DiscreteDerivativeOps,
                   Z: Trajectory, R: np.ndarray) -> VariationPath:
    """Explicit Euler recursion for the linearized orbit in direction R.

    W_{k+1} = W_k + dt * (-(grad d2 g) . W_k - d2 r, (grad d1 g) . W_k + d1 r)
    evaluated at Z_k, starting from W_0 = 0; the gradients are the exact
    element Jacobian of the traced fields.
    """
    d1 = pih.p1 @ np.asarray(G)
    d2 = pih.p2 @ np.asarray(G)
    r1 = pih.p1 @ np.asarray(R)
    r2 = pih.p2 @ np.asarray(R)
    dt = Z.dt
    m = Z.m
    W = np.zeros((m + 1, 2))
    hint = 0
    for k in range(m):
        zk = Z.points[k]
        t, lam = locate_point(mesh, zk, hint)
        hint = t
        a11, a12, a21, a22 = _element_jacobian(mesh, d1, d2, t)
        verts = mesh.triangles[t]
        b1 = float(r1[verts] @ lam)
        b2 = float(r2[verts] @ lam)
        w1, w2 = W[k]
        W[k + 1, 0] = w1 - dt * (a12 * w1 + a22 * w2) - dt * b2
        W[k + 1, 1] = w2 + dt * (a11 * w1 + a21 * w2) + dt * b1
    return VariationPath(points=W)


def build_orbit_operators(mesh: Mesh, G: np.ndarray,
                          pih: DiscreteDerivativeOps,
                          Z: Trajectory) -> OrbitOperators:
    """Assemble the per-step matrices of the variation recursion and the
    stacked m x n operators mapping R to the path samples W_1..W_m."""
    d1 = pih.p1 @ np.asarray(G)
    d2 = pih.p2 @ np.asarray(G)
    dt = Z.dt
    m = Z.m
    n = mesh.n
    m2 = np.empty((m, 2, 2))
    b2 = np.empty((m, n))
    b3 = np.empty((m, n))
    s = np.zeros((2, n))
    hint = 0
    p1, p2 = pih.p1, pih.p2
    for k in range(m):
        zk = Z.points[k]
        t, lam = locate_point(mesh, zk, hint)
        hint = t
        verts = mesh.triangles[t]
        a11, a12, a21, a22 = _element_jacobian(mesh, d1, d2, t)
        m2[k] = [[1.0 - dt * a12, -dt * a22],
                 [dt * a11, 1.0 + dt * a21]]
        # N2(k) rows: -dt * Phi(Z_k)^T Pi^2 and +dt * Phi(Z_k)^T Pi^1
        row1 = np.zeros(n)
        row2 = np.zeros(n)
        for v, w in zip(verts, lam):
            r = p2.indptr[v], p2.indptr[v + 1]
            row1[p2.indices[r[0]:r[1]]] -= dt * w * p2.data[r[0]:r[1]]
            r = p1.indptr[v], p1.indptr[v + 1]
            row2[p1.indices[r[0]:r[1]]] += dt * w * p1.data[r[0]:r[1]]
        if k == 0:
            s[0] = row1
            s[1] = row2
        else:
            s = m2[k] @ s
            s[0] += row1
            s[1] += row2
        b2[k] = s[0]
        b3[k] = s[1]
    return OrbitOperators(m2=m2, b2=b2, b3=b3)


def orbits_to_csv(trajectories: list[Trajectory], path):
    """Dump orbits as CSV rows (component, t, x1, x2)."""
    with open(path, "w") as fh:
        fh.write("component,t,x1,x2\n")
        for traj in trajectories:
            for k, (x, y) in enumerate(traj.points):
                fh.write(f"{traj.component},{k * traj.dt!r},{x!r},{y!r}\n")
