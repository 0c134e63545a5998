"""Acceptance suite: one test per primary criterion, each printing a
single PASS/FAIL line (also visible through pytest -v as the test
verdict).  Heavy end-to-end runs are shared via module-scoped fixtures.
"""

import time

import numpy as np
import pytest

from penshape import expr, fem, grad
from penshape.compare import compare_costs
from penshape.cost import assemble_curve_matrices, eval_cost
from penshape.levelset import (build_orbit_operators, find_seeds,
                               trace_fixed_steps, trace_orbit,
                               trace_orbit_fixed_m, variation_path)
from penshape.mesh import (Mesh, build_pih, generate_disk_mesh,
                           generate_rect_mesh, ngon)
from penshape.optimize import OptimizerConfig, Problem, run


def _report(num, ok, detail):
    verdict = "PASS" if ok else "FAIL"
    print(f"criterion {num}: {verdict} ({detail})")
    assert ok, detail


# ---------------------------------------------------------------------------
# shared heavy fixtures


def _annulus_start(mesh):
    g0 = expr.parse("max(x1^2 + x2^2 - 6.25, 0.25 - ((x1 + 1)^2 + (x2 + 1)^2))")
    v = mesh.vertices
    return np.asarray(g0(v[:, 0], v[:, 1]), dtype=float)


@pytest.fixture(scope="module")
def example2_run():
    """Desk-scale analog of the mild-penalty tracking example:
    ~15k triangles, eps = 0.1, adjoint partial direction."""
    t0 = time.perf_counter()
    mesh = generate_rect_mesh((-3, -3, 3, 3), 87, ngon((0, 0), 0.5, 32))
    problem = Problem(mesh=mesh, f=expr.parse("4"),
                      j=expr.parse("(y - (1 - x1^2 - x2^2))^2"),
                      G0=_annulus_start(mesh), U0=np.zeros(mesh.n),
                      yd=expr.parse("1 - x1^2 - x2^2"))
    cfg = OptimizerConfig(eps=0.1, dt=0.01, direction="adjoint41",
                          max_iters=20)
    result = run(problem, cfg)
    return dict(mesh=mesh, problem=problem, result=result,
                wall=time.perf_counter() - t0)


@pytest.fixture(scope="module")
def example1_run():
    """Desk-scale analog of the tight-penalty tracking example:
    eps = 1e-3, adjoint partial direction."""
    mesh = generate_rect_mesh((-3, -3, 3, 3), 60, ngon((0, 0), 0.5, 32))
    problem = Problem(mesh=mesh, f=expr.parse("1"),
                      j=expr.parse("(y - (1/16 - (x1-0.5)^2 - (x2-0.5)^2))^2"),
                      G0=_annulus_start(mesh), U0=np.zeros(mesh.n),
                      yd=expr.parse("1/16 - (x1-0.5)^2 - (x2-0.5)^2"))
    cfg = OptimizerConfig(eps=1e-3, dt=0.01, direction="adjoint41",
                          max_iters=30)
    result = run(problem, cfg)
    return dict(mesh=mesh, problem=problem, result=result)


@pytest.fixture(scope="module")
def gradient_fixture():
    """<= 2000-node fixture with full state/adjoint data and an FD oracle."""
    mesh = generate_rect_mesh((-3, -3, 3, 3), 24, ngon((0, 0), 0.5, 16))
    assert mesh.n <= 2000
    pih = build_pih(mesh)
    eps, dt = 0.1, 0.02
    G = _annulus_start(mesh)
    U = np.zeros(mesh.n)
    f = expr.parse("4")
    yd = expr.parse("1 - x1^2 - x2^2")
    j = expr.parse("(y - (1 - x1^2 - x2^2))^2")
    K = fem.assemble_stiffness(mesh)
    F = fem.assemble_load(mesh, f)
    med = fem.assemble_MED(mesh, "E")
    seeds = find_seeds(mesh, G)
    ms = [trace_orbit(mesh, G, pih, s, dt).m for s in seeds]

    def trace_all(Gv):
        return [trace_fixed_steps(mesh, Gv, pih, s, dt, m)
                for s, m in zip(seeds, ms)]

    Zs = trace_all(G)
    curves = [assemble_curve_matrices(mesh, Z) for Z in Zs]
    B1 = fem.assemble_B1(mesh, G, eps)
    C1 = fem.assemble_C1(mesh, G, eps, U)
    Y = fem.solve_spd(K, F + B1 @ U)
    L = grad.eval_L(mesh, Y, None, yd)
    P = fem.solve_adjoint(mesh, Y, [c.N for c in curves], eps, L, K=K, med=med)
    lambdas = [grad.build_lambda_vectors(mesh, pih, G, Y, c) for c in curves]
    ops = [build_orbit_operators(mesh, G, pih, Z) for Z in Zs]

    def full_J(Gv, Uv):
        B1v = fem.assemble_B1(mesh, Gv, eps)
        Yv = fem.solve_spd(K, F + B1v @ Uv)
        cs = [assemble_curve_matrices(mesh, Z) for Z in trace_all(Gv)]
        return eval_cost(mesh, Yv, cs, eps, j).total

    def derivative_pair(R, V):
        Q = fem.solve_spd(K, B1 @ V + C1 @ R)
        Ws = [variation_path(mesh, G, pih, Z, R) for Z in Zs]
        dja = grad.dJ_assembled(mesh, pih, Y, Q, L, curves, Ws, eps, med)
        djo = grad.dJ_operator(mesh, pih, P, B1, C1, lambdas, ops, eps, R, V)
        return dja, djo

    return dict(mesh=mesh, pih=pih, eps=eps, G=G, U=U, Y=Y, P=P, B1=B1,
                C1=C1, L=L, curves=curves, Zs=Zs, lambdas=lambdas, ops=ops,
                full_J=full_J, derivative_pair=derivative_pair)


def _compare_clause(mesh, problem, result):
    final = result.final
    rep = compare_costs(mesh, final.G, final.Y, problem.f, problem.j)
    j1 = final.cost.J1
    ordered = rep.cost_levelset_domain <= rep.cost_state_domain
    in_band = all(max(c, j1) / min(c, j1) <= 3.0
                  for c in (rep.cost_levelset_domain, rep.cost_state_domain))
    return rep, ordered, in_band


# ---------------------------------------------------------------------------
# criteria


def test_criterion_01_manufactured_solution_convergence():
    """L2 convergence order >= 1.9 for the exact-state problem f=4,
    y = 1 - r^2, on refined polygonal disk meshes."""
    f = expr.parse("4")
    errs = []
    t0 = time.perf_counter()
    for rings, sectors in ((8, 24), (16, 48), (32, 96)):
        mesh = generate_disk_mesh(1.0, rings, sectors, e_radius=0.3)
        Y = fem.solve_state(mesh, np.full(mesh.n, -1.0), np.zeros(mesh.n),
                            1e-3, f)
        y_full = mesh.extend_interior(Y)
        mid = fem.midpoints(mesh)
        exact = 1.0 - mid[:, :, 0] ** 2 - mid[:, :, 1] ** 2
        approx = fem.values_at_midpoints(mesh, y_full)
        errs.append(float(np.sqrt(((mesh.areas / 3.0)[:, None]
                                   * (approx - exact) ** 2).sum())))
        if rings == 8:
            coarsest = time.perf_counter() - t0
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    ok = bool((orders >= 1.9).all()) and coarsest < 5.0
    _report(1, ok, f"L2 orders {np.round(orders, 3).tolist()}, "
                   f"coarsest run {coarsest:.2f}s")


def test_criterion_02_tracer_period_and_drift():
    """Unit-circle orbit: period within 2% of pi; conservation drift
    halves (within 20%) when dt halves."""
    mesh = generate_rect_mesh((-2, -2, 2, 2), 60, ngon((0, 0), 0.3, 12))
    pih = build_pih(mesh)
    v = mesh.vertices
    G = v[:, 0] ** 2 + v[:, 1] ** 2 - 1.0

    def orbit(dt):
        return trace_orbit(mesh, G, pih, (1.0, 0.0), dt)

    Z = orbit(1e-3)
    period_ok = abs(Z.period - np.pi) / np.pi <= 0.02

    def drift(dt):
        P = orbit(dt).points[:-1]
        g = P[:, 0] ** 2 + P[:, 1] ** 2 - 1.0
        return np.abs(g - g[0]).max()

    d2, d1 = drift(2e-3), drift(1e-3)
    ratio = d1 / d2
    drift_ok = abs(ratio - 0.5) <= 0.1
    _report(2, period_ok and drift_ok,
            f"period {Z.period:.5f} vs pi, drift ratio {ratio:.3f}")


def test_criterion_03_discrete_derivative_example():
    """Two-triangle unit square: the discrete x1-derivative of the hat at
    (1,1) has nodal coefficients (1/2, 0, 1, 1/2)."""
    mesh = Mesh(vertices=np.array([[0.0, 0.0], [1.0, 0.0],
                                   [0.0, 1.0], [1.0, 1.0]]),
                triangles=np.array([[0, 1, 3], [0, 3, 2]]),
                labels=np.zeros(2, dtype=np.int64),
                boundary=np.ones(4, dtype=bool))
    pih = build_pih(mesh)
    got = pih.p1 @ np.array([0.0, 0.0, 0.0, 1.0])
    expected = np.array([0.5, 0.0, 1.0, 0.5])
    ok = bool(np.allclose(got, expected, atol=1e-14))
    _report(3, ok, f"coefficients {got.tolist()}")


def test_criterion_04_assembled_derivative_vs_finite_differences(
        gradient_fixture):
    """dJ_assembled matches central finite differences of the penalized
    cost to <= 1e-4 relative on >= 5 random directions, < 60 s."""
    s = gradient_fixture
    rng = np.random.default_rng(42)
    h = 1e-5
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(5):
        R = rng.normal(size=s["mesh"].n)
        V = rng.normal(size=s["mesh"].n)
        dja, _ = s["derivative_pair"](R, V)
        fd = (s["full_J"](s["G"] + h * R, s["U"] + h * V)
              - s["full_J"](s["G"] - h * R, s["U"] - h * V)) / (2 * h)
        worst = max(worst, abs(dja - fd) / abs(fd))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-4 and wall < 60.0
    _report(4, ok, f"worst relative FD error {worst:.2e}, {wall:.1f}s")


def test_criterion_05_stacked_operators_match_recursion():
    """B2 R / B3 R equal the explicit variation recursion to 1e-12 on 50
    random directions, m = 30."""
    mesh = generate_rect_mesh((-2, -2, 2, 2), 40, ngon((0, 0), 0.3, 12))
    pih = build_pih(mesh)
    v = mesh.vertices
    G = v[:, 0] ** 2 + v[:, 1] ** 2 - 1.0
    Z = trace_orbit_fixed_m(mesh, G, pih, (1.0, 0.0), m=30, pilot_dt=1e-3)
    ops = build_orbit_operators(mesh, G, pih, Z)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        R = rng.normal(size=mesh.n)
        W = variation_path(mesh, G, pih, Z, R)
        scale = max(1.0, np.abs(W.points).max())
        worst = max(worst,
                    np.abs(ops.b2 @ R - W.points[1:, 0]).max() / scale,
                    np.abs(ops.b3 @ R - W.points[1:, 1]).max() / scale)
    ok = worst <= 1e-12
    _report(5, ok, f"worst recursion deviation {worst:.2e} over 50 directions")


def test_criterion_06_full_direction_slope_identity(gradient_fixture):
    """The full-gradient direction satisfies
    dJ_operator(R**, V*) = -|V*|^2 - |R**|^2 to 1e-9 relative."""
    s = gradient_fixture
    d = grad.direction_full_42(s["mesh"], s["pih"], s["P"], s["B1"], s["C1"],
                               s["lambdas"], s["ops"], s["eps"])
    djo = grad.dJ_operator(s["mesh"], s["pih"], s["P"], s["B1"], s["C1"],
                           s["lambdas"], s["ops"], s["eps"], d.R, d.V)
    predicted = -float(d.V @ d.V) - float(d.R @ d.R)
    rel = abs(djo - predicted) / abs(predicted)
    ok = rel <= 1e-9 and predicted <= 0.0
    _report(6, ok, f"slope {djo:.6g} vs {predicted:.6g}, rel {rel:.2e}")


def test_criterion_07_adjoint_direction_nonpositive_slope(gradient_fixture,
                                                          example2_run):
    """First-two-term slope <= 0 at (r, v) = (-p u, -p) on every tested
    state (tolerance 1e-12 x scale)."""
    s = gradient_fixture
    worst = -np.inf
    # state 1: the gradient fixture
    d = grad.direction_adjoint_41(s["mesh"], s["P"], s["U"], s["B1"], s["C1"])
    scale = max(1.0, float(np.linalg.norm(s["P"])) ** 2)
    worst = max(worst, d.slope / scale)
    # states 2..n: iterates of the end-to-end run
    mesh = example2_run["mesh"]
    problem = example2_run["problem"]
    eps = 0.1
    for ev in [example2_run["result"].final]:
        B1 = fem.assemble_B1(mesh, ev.G, eps)
        C1 = fem.assemble_C1(mesh, ev.G, eps, ev.U)
        L = grad.eval_L(mesh, ev.Y, None, problem.yd)
        P = fem.solve_adjoint(mesh, ev.Y, [c.N for c in ev.curves], eps, L)
        d = grad.direction_adjoint_41(mesh, P, ev.U, B1, C1)
        scale = max(1.0, float(np.linalg.norm(P)) ** 2)
        worst = max(worst, d.slope / scale)
    ok = worst <= 1e-12
    _report(7, ok, f"worst scaled slope {worst:.2e}")


def test_criterion_08_end_to_end_descent(example2_run):
    """Desk-scale end-to-end run: J nonincreasing, decrease >= 100x,
    >= 2 zero-set components at the optimum, < 10 min."""
    result = example2_run["result"]
    costs = [r.cost.total for r in result.records]
    monotone = all(b <= a for a, b in zip(costs, costs[1:]))
    decrease = costs[0] / costs[-1]
    components = len(result.final.trajectories)
    wall = example2_run["wall"]
    tris = example2_run["mesh"].num_triangles
    ok = (monotone and decrease >= 100.0 and components >= 2
          and wall < 600.0)
    _report(8, ok, f"{tris} triangles, J {costs[0]:.6g} -> {costs[-1]:.6g} "
                   f"({decrease:.0f}x), {components} components, {wall:.0f}s, "
                   f"monotone={monotone}")


def test_criterion_09_comparison_ordering(example1_run, example2_run):
    """Classical Dirichlet costs: the level-set-domain cost is <= the
    state-domain cost, and both lie within 3x of the penalized J1."""
    details = []
    ok = True
    for name, data in (("tight-penalty", example1_run),
                       ("mild-penalty", example2_run)):
        rep, ordered, in_band = _compare_clause(
            data["mesh"], data["problem"], data["result"])
        ok = ok and ordered and in_band
        details.append(f"{name}: {rep.cost_levelset_domain:.4g} <= "
                       f"{rep.cost_state_domain:.4g}, "
                       f"J1 {data['result'].final.cost.J1:.4g}")
    _report(9, ok, "; ".join(details))


def test_criterion_10_cross_form_derivative(gradient_fixture):
    """dJ_operator agrees with dJ_assembled to 1e-3 relative."""
    s = gradient_fixture
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(5):
        R = rng.normal(size=s["mesh"].n)
        V = rng.normal(size=s["mesh"].n)
        dja, djo = s["derivative_pair"](R, V)
        worst = max(worst, abs(djo - dja) / abs(dja))
    ok = worst <= 1e-3
    _report(10, ok, f"worst cross-form relative deviation {worst:.2e}")
