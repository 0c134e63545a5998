"""Scikit-learn style facade over the descent loop.

``ShapeOptimizer`` packages the problem data and optimizer settings as
estimator parameters so the usual ``get_params``/``set_params``/``clone``
machinery works; ``fit`` runs the projected gradient descent on a mesh
and an initial level-set function.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import expr
from .mesh import Mesh
from .optimize import OptimizerConfig, Problem, run


class ShapeOptimizer(BaseEstimator):
    """Shape/topology optimizer for the penalized Dirichlet problem.

    Parameters mirror :class:`penshape.optimize.OptimizerConfig`; the
    problem data ``f``, ``yd``, ``j`` and ``j2`` are expression strings in
    ``x1``, ``x2`` (and ``y`` for the cost integrand).

    Examples
    --------
    >>> from penshape import generate_rect_mesh, ngon
    >>> from penshape.estimator import ShapeOptimizer
    >>> mesh = generate_rect_mesh((-3, -3, 3, 3), 30, ngon((0, 0), 0.5, 16))
    >>> opt = ShapeOptimizer(f="4", yd="1 - x1^2 - x2^2", eps=0.1,
    ...                      dt=0.05, max_iters=3)
    >>> opt = opt.fit(mesh, "x1^2 + x2^2 - 4")
    >>> opt.cost_ <= opt.result_.records[0].cost.total
    True
    """

    def __init__(self, f="1", yd=None, j=None, j2=None, eps=0.1, dt=0.01,
                 tol=1e-6, lambda0=1.0, rho=0.5, i_max=31, gamma_rule=True,
                 projection_value=-0.1, fixed_m=None, max_iters=100,
                 direction="adjoint41", med_domain="E"):
        self.f = f
        self.yd = yd
        self.j = j
        self.j2 = j2
        self.eps = eps
        self.dt = dt
        self.tol = tol
        self.lambda0 = lambda0
        self.rho = rho
        self.i_max = i_max
        self.gamma_rule = gamma_rule
        self.projection_value = projection_value
        self.fixed_m = fixed_m
        self.max_iters = max_iters
        self.direction = direction
        self.med_domain = med_domain

    def _field(self, mesh: Mesh, value, name: str) -> np.ndarray:
        if value is None:
            return np.zeros(mesh.n)
        if isinstance(value, str):
            e = expr.parse(value)
            x1, x2 = mesh.vertices[:, 0], mesh.vertices[:, 1]
            return np.broadcast_to(np.asarray(e(x1, x2), dtype=float),
                                   (mesh.n,)).copy()
        arr = np.asarray(value, dtype=float)
        if arr.shape != (mesh.n,):
            raise ValueError(f"{name} must have one value per mesh vertex")
        return arr

    def fit(self, mesh: Mesh, g0, u0=None):
        """Run the descent from the initial design ``(g0, u0)``.

        ``g0``/``u0`` are nodal arrays or expression strings in x1, x2.
        """
        yd = expr.parse(self.yd) if self.yd is not None else None
        j2 = expr.parse(self.j2) if self.j2 is not None else None
        if self.j is not None:
            j = expr.parse(self.j)
        elif self.yd is not None:
            j = expr.parse(f"(y - ({self.yd}))^2")
        else:
            raise ValueError("either j or yd must be given")
        problem = Problem(mesh=mesh, f=expr.parse(self.f), j=j,
                          G0=self._field(mesh, g0, "g0"),
                          U0=self._field(mesh, u0, "u0"), yd=yd, j2=j2)
        cfg = OptimizerConfig(
            eps=self.eps, dt=self.dt, tol=self.tol, lambda0=self.lambda0,
            rho=self.rho, i_max=self.i_max, gamma_rule=self.gamma_rule,
            projection_value=self.projection_value, fixed_m=self.fixed_m,
            max_iters=self.max_iters, direction=self.direction,
            med_domain=self.med_domain)
        self.result_ = run(problem, cfg)
        final = self.result_.final
        self.g_ = final.G
        self.u_ = final.U
        self.y_ = mesh.extend_interior(final.Y)
        self.trajectories_ = final.trajectories
        self.cost_ = final.cost.total
        self.n_iter_ = self.result_.records[-1].k
        return self
