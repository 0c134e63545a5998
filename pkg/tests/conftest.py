import numpy as np
import pytest

from penshape import expr
from penshape.mesh import build_pih, generate_rect_mesh, ngon


@pytest.fixture(scope="session")
def annulus_mesh():
    """Hold-all ]-3,3[^2 with a disk observation region of radius 0.5."""
    return generate_rect_mesh((-3, -3, 3, 3), 24, ngon((0, 0), 0.5, 16))


@pytest.fixture(scope="session")
def annulus_pih(annulus_mesh):
    return build_pih(annulus_mesh)


@pytest.fixture(scope="session")
def annulus_G(annulus_mesh):
    """Disk of radius 2.5 with a hole of radius 0.5 at (-1,-1): the
    level-set start used by the worked examples (two zero-set components)."""
    g0 = expr.parse("max(x1^2 + x2^2 - 6.25, 0.25 - ((x1 + 1)^2 + (x2 + 1)^2))")
    v = annulus_mesh.vertices
    return np.asarray(g0(v[:, 0], v[:, 1]), dtype=float)


@pytest.fixture(scope="session")
def tracking_problem(annulus_mesh, annulus_G):
    """Small tracking problem: f=4, target 1 - x1^2 - x2^2, u0=0."""
    from penshape.optimize import Problem
    return Problem(
        mesh=annulus_mesh,
        f=expr.parse("4"),
        j=expr.parse("(y - (1 - x1^2 - x2^2))^2"),
        G0=annulus_G,
        U0=np.zeros(annulus_mesh.n),
        yd=expr.parse("1 - x1^2 - x2^2"),
    )
