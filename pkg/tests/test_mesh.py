import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from penshape.mesh import (LABEL_E, Mesh, MeshError, PointOutsideDomain,
                           build_pih, generate_disk_mesh, generate_rect_mesh,
                           interpolate, load_mesh, locate_point, ngon,
                           read_vtk, save_mesh, write_vtk)


def test_rect_mesh_basic_counts(annulus_mesh):
    m = annulus_mesh
    assert m.num_triangles == 2 * 24 * 24
    assert m.n == 25 * 25
    # total area equals the hold-all area
    assert m.areas.sum() == pytest.approx(36.0)
    assert (m.labels == LABEL_E).sum() > 0


def test_boundary_nodes_lie_on_rectangle(annulus_mesh):
    v = annulus_mesh.vertices[annulus_mesh.boundary]
    on_edge = (np.isclose(np.abs(v[:, 0]), 3.0) | np.isclose(np.abs(v[:, 1]), 3.0))
    assert on_edge.all()
    inner = annulus_mesh.vertices[~annulus_mesh.boundary]
    assert (np.abs(inner) < 3.0).all()


def test_e_triangles_inside_polygon(annulus_mesh):
    m = annulus_mesh
    e = m.labels == LABEL_E
    centers = m.vertices[m.triangles[e]].mean(axis=1)
    assert (np.hypot(centers[:, 0], centers[:, 1]) < 0.5).all()


def test_degenerate_bounds_rejected():
    with pytest.raises(MeshError):
        generate_rect_mesh((0, 0, 0, 1), 4)
    with pytest.raises(MeshError):
        generate_rect_mesh((0, 0, 1, 1), 0)


def test_extend_restrict_round_trip(annulus_mesh):
    m = annulus_mesh
    y = np.arange(m.n0, dtype=float)
    full = m.extend_interior(y)
    assert full.shape == (m.n,)
    assert (full[m.boundary] == 0.0).all()
    np.testing.assert_array_equal(m.restrict(full), y)


def test_locate_point_linear_exact(annulus_mesh):
    t, lam = locate_point(annulus_mesh, (0.1, 0.2))
    assert lam.sum() == pytest.approx(1.0)
    assert (lam > -1e-12).all()
    p = lam @ annulus_mesh.vertices[annulus_mesh.triangles[t]]
    np.testing.assert_allclose(p, [0.1, 0.2], atol=1e-12)


def test_locate_point_outside_raises(annulus_mesh):
    with pytest.raises(PointOutsideDomain):
        locate_point(annulus_mesh, (10.0, 0.0))


@settings(deadline=None, max_examples=50)
@given(st.floats(-2.99, 2.99), st.floats(-2.99, 2.99), st.integers(0, 1151))
def test_locate_point_any_hint(annulus_mesh, x, y, hint):
    t, lam = locate_point(annulus_mesh, (x, y), hint)
    assert lam.sum() == pytest.approx(1.0)
    assert (lam > -1e-9).all()
    p = lam @ annulus_mesh.vertices[annulus_mesh.triangles[t]]
    np.testing.assert_allclose(p, [x, y], atol=1e-9)


def test_interpolate_reproduces_p1_fields(annulus_mesh):
    m = annulus_mesh
    vals = 2.0 * m.vertices[:, 0] - 3.0 * m.vertices[:, 1] + 1.0
    got, _ = interpolate(m, vals, (0.37, -1.21))
    assert got == pytest.approx(2.0 * 0.37 - 3.0 * (-1.21) + 1.0, rel=1e-12)


def test_star_of_contains_incident_triangles(annulus_mesh):
    m = annulus_mesh
    v = int(m.triangles[100, 0])
    star = m.star_of(v)
    assert 100 in star
    assert all(v in m.triangles[t] for t in star)


def test_save_load_round_trip(annulus_mesh, tmp_path):
    path = tmp_path / "mesh.txt"
    save_mesh(annulus_mesh, path)
    m2 = load_mesh(path)
    np.testing.assert_allclose(m2.vertices, annulus_mesh.vertices)
    np.testing.assert_array_equal(m2.triangles, annulus_mesh.triangles)
    np.testing.assert_array_equal(m2.labels, annulus_mesh.labels)
    np.testing.assert_array_equal(m2.boundary, annulus_mesh.boundary)


def test_vtk_round_trip(annulus_mesh, tmp_path):
    path = tmp_path / "mesh.vtk"
    rng = np.random.default_rng(7)
    data = {"g": rng.normal(size=annulus_mesh.n),
            "y": rng.normal(size=annulus_mesh.n)}
    write_vtk(annulus_mesh, path, data)
    m2, d2 = read_vtk(path)
    np.testing.assert_allclose(m2.vertices, annulus_mesh.vertices)
    np.testing.assert_array_equal(m2.triangles, annulus_mesh.triangles)
    np.testing.assert_array_equal(m2.labels, annulus_mesh.labels)
    np.testing.assert_array_equal(m2.boundary, annulus_mesh.boundary)
    for k in data:
        np.testing.assert_allclose(d2[k], data[k], atol=0)


def test_disk_mesh_area_converges():
    m = generate_disk_mesh(1.0, 8, 24)
    # area of the inscribed regular 24-gon
    assert m.areas.sum() == pytest.approx(0.5 * 24 * np.sin(2 * np.pi / 24))


def test_ngon_vertices_on_circle():
    poly = ngon((1.0, -2.0), 0.5, 12)
    r = np.hypot(poly[:, 0] - 1.0, poly[:, 1] + 2.0)
    np.testing.assert_allclose(r, 0.5)
    assert len(poly) == 12


def test_discrete_derivative_exact_on_affine(annulus_mesh, annulus_pih):
    m, pih = annulus_mesh, annulus_pih
    g = 3.0 * m.vertices[:, 0] - 2.0 * m.vertices[:, 1] + 0.5
    np.testing.assert_allclose(pih.p1 @ g, np.full(m.n, 3.0), atol=1e-12)
    np.testing.assert_allclose(pih.p2 @ g, np.full(m.n, -2.0), atol=1e-12)


def test_discrete_derivative_two_triangle_square():
    """Unit square split along the diagonal: the discrete x1-derivative of
    the hat at (1,1) has nodal coefficients 1/2, 0, 1, 1/2."""
    mesh = Mesh(vertices=np.array([[0.0, 0.0], [1.0, 0.0],
                                   [0.0, 1.0], [1.0, 1.0]]),
                triangles=np.array([[0, 1, 3], [0, 3, 2]]),
                labels=np.zeros(2, dtype=np.int64),
                boundary=np.ones(4, dtype=bool))
    pih = build_pih(mesh)
    hat = np.array([0.0, 0.0, 0.0, 1.0])
    np.testing.assert_allclose(pih.p1 @ hat, [0.5, 0.0, 1.0, 0.5], atol=1e-14)
