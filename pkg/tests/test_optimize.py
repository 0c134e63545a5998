import numpy as np
import pytest

from penshape import fem
from penshape.expr import parse
from penshape.optimize import (OptimizerConfig, Problem, build_direction,
                               evaluate, line_search, project_E, run)


def _config(**kw):
    base = dict(eps=0.1, dt=0.02, max_iters=3)
    base.update(kw)
    return OptimizerConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(eps=0.0, dt=0.01)
    with pytest.raises(ValueError):
        OptimizerConfig(eps=0.1, dt=0.01, rho=1.5)
    with pytest.raises(ValueError):
        OptimizerConfig(eps=0.1, dt=0.01, projection_value=0.5)
    with pytest.raises(ValueError):
        OptimizerConfig(eps=0.1, dt=0.01, direction="steepest")
    with pytest.raises(ValueError):
        OptimizerConfig(eps=0.1, dt=0.01, med_domain="F")


def test_problem_requires_cost_derivative(annulus_mesh, annulus_G):
    with pytest.raises(ValueError):
        Problem(mesh=annulus_mesh, f=parse("1"), j=parse("y^2"),
                G0=annulus_G, U0=np.zeros(annulus_mesh.n))


def test_project_E_resets_positive_values(annulus_mesh, annulus_G):
    G = annulus_G.copy()
    G[annulus_mesh.e_nodes] = 5.0
    out = project_E(annulus_mesh, G, -0.25)
    assert (out[annulus_mesh.e_nodes] == -0.25).all()
    # untouched elsewhere
    mask = np.ones(annulus_mesh.n, dtype=bool)
    mask[annulus_mesh.e_nodes] = False
    np.testing.assert_array_equal(out[mask], G[mask])
    # idempotent
    np.testing.assert_array_equal(project_E(annulus_mesh, out, -0.25), out)


def test_evaluate_produces_consistent_cost(tracking_problem):
    p = tracking_problem
    cfg = _config()
    K = fem.assemble_stiffness(p.mesh)
    F = fem.assemble_load(p.mesh, p.f)
    ev = evaluate(p, cfg, p.G0, p.U0, K, F)
    assert len(ev.trajectories) == 2
    assert ev.cost.total == pytest.approx(
        ev.cost.J1 + sum(ev.cost.penalty_per_component) / cfg.eps)
    assert ev.cost.total > 0


def test_run_decreases_cost_monotonically(tracking_problem):
    res = run(tracking_problem, _config(max_iters=3))
    costs = [r.cost.total for r in res.records]
    assert len(costs) == 4
    assert all(b < a for a, b in zip(costs, costs[1:]))
    assert res.stop_reason == "max_iters"
    assert res.records[1].step > 0
    assert res.records[1].slope <= 0


def test_run_rejects_inadmissible_start(tracking_problem):
    p = tracking_problem
    bad = Problem(mesh=p.mesh, f=p.f, j=p.j, G0=-p.G0, U0=p.U0, yd=p.yd)
    with pytest.raises(ValueError):
        run(bad, _config())


def test_run_callback_sees_every_iteration(tracking_problem):
    seen = []
    run(tracking_problem, _config(max_iters=2),
        on_iteration=lambda rec, ev: seen.append((rec.k, rec.cost.total)))
    assert [k for k, _ in seen] == [0, 1, 2]


def test_run_with_fixed_m(annulus_mesh):
    # a single moderate orbit: coarse fixed partitions drift too far on
    # large-radius orbits (Euler growth ~ exp(2 T^2 / m))
    p = Problem(mesh=annulus_mesh, f=parse("4"),
                j=parse("(y - (1 - x1^2 - x2^2))^2"),
                G0=(annulus_mesh.vertices ** 2).sum(axis=1) - 2.25,
                U0=np.zeros(annulus_mesh.n),
                yd=parse("1 - x1^2 - x2^2"))
    res = run(p, _config(max_iters=1, fixed_m=60))
    assert all(t.m == 60 for t in res.final.trajectories)


def test_rstar_direction_also_descends(tracking_problem):
    res = run(tracking_problem, _config(max_iters=2, direction="rstar"))
    costs = [r.cost.total for r in res.records]
    assert costs[-1] < costs[0]


def test_full42_direction_also_descends(tracking_problem):
    res = run(tracking_problem, _config(max_iters=2, direction="full42"))
    costs = [r.cost.total for r in res.records]
    assert costs[-1] < costs[0]


def test_line_search_none_when_no_improvement(tracking_problem):
    from penshape.grad import DescentDirection
    p = tracking_problem
    cfg = _config()
    K = fem.assemble_stiffness(p.mesh)
    F = fem.assemble_load(p.mesh, p.f)
    ev = evaluate(p, cfg, p.G0, p.U0, K, F)
    # the zero direction reproduces the current design in every trial
    d = DescentDirection(R=np.zeros(p.mesh.n), V=np.zeros(p.mesh.n),
                         kind="rstar", slope=0.0)
    assert line_search(p, cfg, ev, d, K, F) is None


def test_history_property(tracking_problem):
    res = run(tracking_problem, _config(max_iters=1))
    assert [c.total for c in res.history] == \
        [r.cost.total for r in res.records]
