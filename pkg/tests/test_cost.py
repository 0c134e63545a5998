import numpy as np
import pytest

from penshape import fem
from penshape.cost import (apply_T1_T2, apply_T3, assemble_curve_matrices,
                           eval_J1, eval_cost)
from penshape.expr import parse
from penshape.levelset import Trajectory, VariationPath, trace_fixed_steps
from penshape.mesh import build_pih, generate_rect_mesh, ngon


@pytest.fixture(scope="module")
def square_mesh():
    return generate_rect_mesh((-2, -2, 2, 2), 32, ngon((0, 0), 0.4, 12))


def _circle_trajectory(m=200, r=1.0):
    t = np.linspace(0.0, 2 * np.pi, m + 1)
    pts = np.column_stack([r * np.cos(t), r * np.sin(t)])
    pts[-1] = pts[0]
    return Trajectory(points=pts, dt=2 * np.pi / m, component=0)


def test_curve_matrix_partition_of_unity(square_mesh):
    Z = _circle_trajectory()
    curve = assemble_curve_matrices(square_mesh, Z)
    ones = np.ones(square_mesh.n)
    # hats sum to one, so 1^T N 1 is the exact polygon length
    assert ones @ (curve.N_full @ ones) == pytest.approx(
        curve.seg_lengths.sum(), rel=1e-13)


def test_curve_matrix_integrates_linear_fields_exactly(square_mesh):
    Z = _circle_trajectory()
    curve = assemble_curve_matrices(square_mesh, Z)
    v = square_mesh.vertices
    u = 2.0 * v[:, 0] - v[:, 1] + 0.5
    got = u @ (curve.N_full @ u)
    # exact integral of the quadratic u^2 along each straight segment
    exact = 0.0
    for k in range(curve.m):
        a, b = Z.points[k], Z.points[k + 1]
        ua = 2 * a[0] - a[1] + 0.5
        ub = 2 * b[0] - b[1] + 0.5
        um = 2 * 0.5 * (a + b)[0] - 0.5 * (a + b)[1] + 0.5
        exact += curve.seg_lengths[k] * (ua ** 2 + 4 * um ** 2 + ub ** 2) / 6.0
    assert got == pytest.approx(exact, rel=1e-12)


def test_interval_pieces_sum_to_curve_matrix(square_mesh):
    Z = _circle_trajectory(m=40)
    curve = assemble_curve_matrices(square_mesh, Z)
    total_nk = sum((curve.Nk(k) + curve.Nk1(k) for k in range(curve.m)))
    ref = curve.N_full[square_mesh.interior, :]
    assert abs(total_nk - ref).max() < 1e-13
    total_rk = sum(curve.Rk(k) for k in range(curve.m))
    assert abs(total_rk - curve.N).max() < 1e-13


def test_degenerate_segment_rejected(square_mesh):
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        assemble_curve_matrices(square_mesh, Trajectory(points=pts, dt=1.0,
                                                        component=0))


def test_eval_J1_matches_analytic(square_mesh):
    # with y = 0 the integrand reduces to yd^2 over the E triangles
    yd = parse("x1 + 2 * x2")
    j = parse("(y - (x1 + 2 * x2))^2")
    got = eval_J1(square_mesh, np.zeros(square_mesh.n0), j)
    e = square_mesh.labels == 1
    mid = fem.midpoints(square_mesh)[e]
    exact = ((square_mesh.areas[e] / 3.0)[:, None]
             * yd(mid[:, :, 0], mid[:, :, 1]) ** 2).sum()
    assert got == pytest.approx(exact, rel=1e-13)


def test_eval_cost_breakdown(square_mesh):
    Z = _circle_trajectory(m=60)
    curve = assemble_curve_matrices(square_mesh, Z)
    rng = np.random.default_rng(2)
    Y = rng.normal(size=square_mesh.n0)
    cb = eval_cost(square_mesh, Y, [curve], 0.25, parse("y^2"))
    assert cb.total == pytest.approx(cb.J1 + cb.penalty_per_component[0] / 0.25)
    assert cb.penalty_per_component[0] >= 0.0
    assert cb.eps == 0.25


def test_apply_T1_T2_constant_path(square_mesh):
    Z = _circle_trajectory(m=50)
    curve = assemble_curve_matrices(square_mesh, Z)
    W = VariationPath(points=np.tile([[0.7, -0.2]], (51, 1)))
    T1, T2 = apply_T1_T2(curve, W)
    ref = curve.N_full[square_mesh.interior, :]
    assert abs(T1 - 0.7 * ref).max() < 1e-13
    assert abs(T2 - (-0.2) * ref).max() < 1e-13


def test_apply_T1_T2_shape_mismatch(square_mesh):
    Z = _circle_trajectory(m=50)
    curve = assemble_curve_matrices(square_mesh, Z)
    with pytest.raises(ValueError):
        apply_T1_T2(curve, VariationPath(points=np.zeros((10, 2))))


def test_curve_penalty_derivative_in_the_curve(square_mesh):
    """d/dh [Y^T N(Z + h W) Y] splits exactly into the length-variation
    quadratic form T3 plus the Gauss-sampled y grad(y) . W term."""
    from penshape.cost import _GAUSS_TAU as tau, _GAUSS_W as wq
    from penshape.grad import _curve_samples

    pih = build_pih(square_mesh)
    v = square_mesh.vertices
    G = v[:, 0] ** 2 + v[:, 1] ** 2 - 1.0
    # generic seed: a seed on a mesh line puts Gauss points on element
    # edges, where the one-sided P1 gradient makes the split ambiguous
    Z = trace_fixed_steps(square_mesh, G, pih, (0.9876, 0.1432), 5e-3, 300)
    curve = assemble_curve_matrices(square_mesh, Z)
    rng = np.random.default_rng(4)
    Y = rng.normal(size=square_mesh.n0)
    Wp = rng.normal(size=(301, 2)) * 0.1
    W = VariationPath(points=Wp)

    def val(h):
        Zh = Trajectory(points=Z.points + h * Wp, dt=Z.dt, component=0)
        c = assemble_curve_matrices(square_mesh, Zh)
        return Y @ (c.N @ Y)

    h = 1e-6
    fd = (val(h) - val(-h)) / (2 * h)
    y_full = square_mesh.extend_interior(Y)
    qy, qg = _curve_samples(square_mesh, curve, y_full)
    wt = ((1.0 - tau)[None, :, None] * Wp[:-1, None, :]
          + tau[None, :, None] * Wp[1:, None, :])
    hat_term = 2.0 * (curve.seg_lengths[:, None] * wq[None, :]
                      * qy * np.einsum("mqd,mqd->mq", qg, wt)).sum()
    got = Y @ (apply_T3(curve, Z, W) @ Y) + hat_term
    assert got == pytest.approx(fd, rel=1e-5)
