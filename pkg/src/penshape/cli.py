"""Command-line interface: configuration parsing, run orchestration and
artifact output.

Subcommands: solve, compare, trace, state, grad-check, mesh.
Exit codes: 0 success, 1 configuration error, 2 numerical failure.
Config files are INI-style with sections [mesh], [problem], [optimizer]
and [output]; see the shipped configs/ directory for examples.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys

EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

log = logging.getLogger("penshape")


class ConfigError(ValueError):
    pass


def _cap_threads():
    """TOPOPT_THREADS caps the BLAS/OpenMP worker pools."""
    cap = os.environ.get("TOPOPT_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _floats(text, count, field):
    parts = text.replace(",", " ").split()
    if len(parts) != count:
        raise ConfigError(f"{field}: expected {count} numbers, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{field}: bad number in {text!r}") from None


def _parse_expr(cp, section, key, default=None, required=False):
    from .expr import ExprSyntaxError, parse
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(f"missing required field [{section}] {key}")
        if default is None:
            return None
        text = default
    else:
        text = cp.get(section, key)
    try:
        return parse(text)
    except ExprSyntaxError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from None


def build_mesh(cp):
    from .mesh import (MeshError, generate_rect_mesh, load_mesh, ngon)
    if not cp.has_section("mesh"):
        raise ConfigError("missing [mesh] section")
    if cp.has_option("mesh", "file"):
        path = cp.get("mesh", "file")
        if not os.path.exists(path):
            raise ConfigError(f"[mesh] file: {path} does not exist")
        try:
            return load_mesh(path)
        except MeshError as e:
            raise ConfigError(f"[mesh] file: {e}") from None
    for key in ("bounds", "resolution"):
        if not cp.has_option("mesh", key):
            raise ConfigError(f"missing required field [mesh] {key}")
    bounds = _floats(cp.get("mesh", "bounds"), 4, "[mesh] bounds")
    res_parts = cp.get("mesh", "resolution").split()
    resolution = int(res_parts[0]) if len(res_parts) == 1 else \
        (int(res_parts[0]), int(res_parts[1]))
    if cp.has_option("mesh", "e_polygon"):
        pts = cp.get("mesh", "e_polygon").split(";")
        poly = [_floats(p, 2, "[mesh] e_polygon") for p in pts]
    elif cp.has_option("mesh", "e_center"):
        cx, cy = _floats(cp.get("mesh", "e_center"), 2, "[mesh] e_center")
        if not cp.has_option("mesh", "e_radius"):
            raise ConfigError("missing required field [mesh] e_radius")
        radius = cp.getfloat("mesh", "e_radius")
        sides = cp.getint("mesh", "e_sides", fallback=32)
        poly = ngon((cx, cy), radius, sides)
    else:
        raise ConfigError("[mesh] needs e_polygon or e_center/e_radius")
    try:
        return generate_rect_mesh(bounds, resolution, poly)
    except MeshError as e:
        raise ConfigError(f"[mesh]: {e}") from None


def build_problem(cp, mesh):
    import numpy as np
    from .optimize import Problem
    if not cp.has_section("problem"):
        raise ConfigError("missing [problem] section")
    f = _parse_expr(cp, "problem", "f", required=True)
    yd = _parse_expr(cp, "problem", "yd")
    j2 = _parse_expr(cp, "problem", "j2")
    if yd is None and j2 is None:
        raise ConfigError("[problem] needs yd (or j2) for the cost integrand")
    j = _parse_expr(cp, "problem", "j")
    if j is None:
        if yd is None:
            raise ConfigError("[problem] j is required when yd is absent")
        j = _parse_expr(cp, "problem", "j",
                        default=f"(y - ({yd.text}))^2")
    g0 = _parse_expr(cp, "problem", "g0", required=True)
    u0 = _parse_expr(cp, "problem", "u0", default="0")
    x1, x2 = mesh.vertices[:, 0], mesh.vertices[:, 1]
    try:
        G0 = np.broadcast_to(np.asarray(g0(x1, x2), dtype=float), (mesh.n,)).copy()
        U0 = np.broadcast_to(np.asarray(u0(x1, x2), dtype=float), (mesh.n,)).copy()
    except ValueError as e:
        raise ConfigError(f"[problem] initial fields: {e}") from None
    return Problem(mesh=mesh, f=f, j=j, G0=G0, U0=U0, yd=yd, j2=j2)


def build_optimizer_config(cp, args):
    from .optimize import OptimizerConfig
    if not cp.has_section("optimizer"):
        raise ConfigError("missing [optimizer] section")
    for key in ("eps",):
        if not cp.has_option("optimizer", key):
            raise ConfigError(f"missing required field [optimizer] {key}")
    kwargs = dict(eps=cp.getfloat("optimizer", "eps"))
    if args.dt is not None:
        kwargs["dt"] = args.dt
    elif cp.has_option("optimizer", "dt"):
        kwargs["dt"] = cp.getfloat("optimizer", "dt")
    else:
        raise ConfigError("missing required field [optimizer] dt")
    for key, get in (("tol", cp.getfloat), ("lambda0", cp.getfloat),
                     ("rho", cp.getfloat), ("i_max", cp.getint),
                     ("gamma_rule", cp.getboolean),
                     ("projection_value", cp.getfloat),
                     ("fixed_m", cp.getint), ("max_iters", cp.getint),
                     ("direction", cp.get), ("med_domain", cp.get)):
        if cp.has_option("optimizer", key):
            kwargs[key] = get("optimizer", key)
    if args.fixed_m is not None:
        kwargs["fixed_m"] = args.fixed_m
    if args.direction is not None:
        kwargs["direction"] = args.direction
    try:
        return OptimizerConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(f"[optimizer]: {e}") from None


def load_config(path, args):
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    mesh = build_mesh(cp)
    problem = build_problem(cp, mesh)
    cfg = build_optimizer_config(cp, args)
    out_dir = args.out or cp.get("output", "dir", fallback="out")
    dump_orbits = bool(args.dump_orbits) or \
        cp.getboolean("output", "dump_orbits", fallback=False)
    return mesh, problem, cfg, out_dir, dump_orbits


def write_history(records, path):
    cmax = max(len(r.cost.penalty_per_component) for r in records)
    cols = ["iter", "J1"] + [f"penalty_{i+1}" for i in range(cmax)] + \
        ["total", "step", "components"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in records:
            pen = [f"{p!r}" for p in r.cost.penalty_per_component]
            pen += [""] * (cmax - len(pen))
            fh.write(",".join([str(r.k), repr(r.cost.J1)] + pen
                              + [repr(r.cost.total), repr(r.step),
                                 str(r.components)]) + "\n")


def read_history(path):
    import csv
    with open(path) as fh:
        return list(csv.DictReader(fh))


def write_report(path, result, cfg):
    final = result.final
    lengths = [t.length() for t in final.trajectories]
    with open(path, "w") as fh:
        fh.write(f"stop reason: {result.stop_reason}\n")
        fh.write(f"iterations: {result.records[-1].k}\n")
        fh.write(f"direction: {cfg.direction}\n")
        fh.write(f"eps: {cfg.eps!r}\n")
        fh.write(f"initial total cost: {result.records[0].cost.total!r}\n")
        fh.write(f"final total cost: {final.cost.total!r}\n")
        fh.write(f"final J1: {final.cost.J1!r}\n")
        for i, p in enumerate(final.cost.penalty_per_component):
            fh.write(f"final penalty component {i + 1}: {p!r}\n")
        fh.write(f"boundary components: {len(lengths)}\n")
        fh.write(f"total boundary length: {sum(lengths)!r}\n")


def cmd_solve(args):
    import numpy as np
    from . import optimize
    from .levelset import orbits_to_csv
    from .mesh import write_vtk
    mesh, problem, cfg, out_dir, dump_orbits = load_config(args.config, args)
    os.makedirs(out_dir, exist_ok=True)

    def progress(record, ev):
        log.info("iter %d: J=%.6g J1=%.6g components=%d step=%g",
                 record.k, record.cost.total, record.cost.J1,
                 record.components, record.step)
        if dump_orbits:
            orbits_to_csv(ev.trajectories,
                          os.path.join(out_dir, f"orbits_{record.k:04d}.csv"))

    result = optimize.run(problem, cfg, on_iteration=progress)
    write_history(result.records, os.path.join(out_dir, "history.csv"))
    final = result.final
    write_vtk(mesh, os.path.join(out_dir, "final_state.vtk"),
              {"y": mesh.extend_interior(final.Y)})
    write_vtk(mesh, os.path.join(out_dir, "final_g.vtk"), {"g": final.G})
    np.savetxt(os.path.join(out_dir, "final_u.txt"), final.U)
    orbits_to_csv(final.trajectories, os.path.join(out_dir, "orbits.csv"))
    write_report(os.path.join(out_dir, "report.txt"), result, cfg)
    print(f"stopped ({result.stop_reason}) after {result.records[-1].k} "
          f"iterations: J = {final.cost.total:.6g} (J1 = {final.cost.J1:.6g})")
    return 0


def cmd_compare(args):
    from .compare import compare_costs
    from .mesh import read_vtk
    mesh, problem, cfg, out_dir, _ = load_config(args.config, args)
    g_path = os.path.join(out_dir, "final_g.vtk")
    y_path = os.path.join(out_dir, "final_state.vtk")
    for p in (g_path, y_path):
        if not os.path.exists(p):
            raise ConfigError(f"missing run artifact {p} (run `solve` first)")
    _, gdata = read_vtk(g_path)
    _, ydata = read_vtk(y_path)
    rep = compare_costs(mesh, gdata["g"], mesh.restrict(ydata["y"]),
                        problem.f, problem.j)
    lines = [
        f"observation cost, Dirichlet solve on {{g<0}}: {rep.cost_levelset_domain!r}",
        f"observation cost, Dirichlet solve on {{y>0}}: {rep.cost_state_domain!r}",
        f"triangles in level-set domain: {rep.triangles_levelset}",
        f"triangles in state domain: {rep.triangles_state}",
        "note: domains are triangle-subset approximations (h-level geometric error)",
    ]
    with open(os.path.join(out_dir, "compare.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_trace(args):
    from .levelset import orbits_to_csv, trace_components, validate_admissible
    mesh, problem, cfg, out_dir, _ = load_config(args.config, args)
    report = validate_admissible(mesh, problem.G0)
    if not report.ok:
        raise RuntimeError("admissibility: " + "; ".join(report.failures()))
    trajs = trace_components(mesh, problem.G0, problem.pih, cfg.dt,
                             fixed_m=cfg.fixed_m)
    os.makedirs(out_dir, exist_ok=True)
    orbits_to_csv(trajs, os.path.join(out_dir, "orbits.csv"))
    for t in trajs:
        print(f"component {t.component}: m={t.m} period={t.period:.6g} "
              f"length={t.length():.6g} seed=({t.seed[0]:.4g}, {t.seed[1]:.4g})")
    return 0


def cmd_state(args):
    from . import fem
    from .mesh import write_vtk
    mesh, problem, cfg, out_dir, _ = load_config(args.config, args)
    Y = fem.solve_state(mesh, problem.G0, problem.U0, cfg.eps, problem.f)
    os.makedirs(out_dir, exist_ok=True)
    y_full = mesh.extend_interior(Y)
    write_vtk(mesh, os.path.join(out_dir, "state.vtk"), {"y": y_full})
    print(f"state solved: min={y_full.min():.6g} max={y_full.max():.6g}")
    return 0


def cmd_grad_check(args):
    rows = grad_check_table(args)
    header = (f"{'direction':<10} {'dJ_assembled':>15} {'dJ_operator':>15} "
              f"{'FD':>15} {'rel FD':>10} {'rel cross':>10}")
    print(header)
    worst = 0.0
    for kind, dja, djo, fd, relfd, relx in rows:
        worst = max(worst, relfd)
        print(f"{kind:<10} {dja:>15.6g} {djo:>15.6g} {fd:>15.6g} "
              f"{relfd:>10.2e} {relx:>10.2e}")
    print(f"max relative FD error: {worst:.2e}")
    return 0


def grad_check_table(args, fd_step=1e-5):
    """FD table for the three descent directions on the configured problem."""
    import numpy as np
    from . import fem, grad, optimize
    from .cost import assemble_curve_matrices, eval_cost
    from .levelset import (build_orbit_operators, find_seeds,
                           trace_fixed_steps, trace_orbit, variation_path)
    mesh, problem, cfg, _, _ = load_config(args.config, args)
    pih = problem.pih
    G, U = problem.G0, problem.U0
    eps = cfg.eps
    K = fem.assemble_stiffness(mesh)
    F = fem.assemble_load(mesh, problem.f)
    med = fem.assemble_MED(mesh, cfg.med_domain)
    seeds = find_seeds(mesh, G)
    ms = [trace_orbit(mesh, G, pih, s, cfg.dt).m for s in seeds]

    def trace_all(Gv):
        return [trace_fixed_steps(mesh, Gv, pih, s, cfg.dt, m)
                for s, m in zip(seeds, ms)]

    def full_J(Gv, Uv):
        B1v = fem.assemble_B1(mesh, Gv, eps)
        Yv = fem.solve_spd(K, F + B1v @ Uv)
        curves = [assemble_curve_matrices(mesh, Z) for Z in trace_all(Gv)]
        return eval_cost(mesh, Yv, curves, eps, problem.j).total

    Zs = trace_all(G)
    curves = [assemble_curve_matrices(mesh, Z) for Z in Zs]
    B1 = fem.assemble_B1(mesh, G, eps)
    C1 = fem.assemble_C1(mesh, G, eps, U)
    Y = fem.solve_spd(K, F + B1 @ U)
    L = grad.eval_L(mesh, Y, problem.j2, problem.yd)
    P = fem.solve_adjoint(mesh, Y, [c.N for c in curves], eps, L, K=K, med=med)
    lambdas = [grad.build_lambda_vectors(mesh, pih, G, Y, c) for c in curves]
    ops = [build_orbit_operators(mesh, G, pih, Z) for Z in Zs]

    directions = [
        grad.direction_adjoint_41(mesh, P, U, B1, C1),
        grad.direction_operator_Rstar(P, B1, C1),
        grad.direction_full_42(mesh, pih, P, B1, C1, lambdas, ops, eps),
    ]
    rows = []
    for d in directions:
        scale = max(np.abs(d.R).max(), np.abs(d.V).max())
        R = d.R / scale if scale > 0 else d.R
        V = d.V / scale if scale > 0 else d.V
        Q = fem.solve_spd(K, B1 @ V + C1 @ R)
        Ws = [variation_path(mesh, G, pih, Z, R) for Z in Zs]
        dja = grad.dJ_assembled(mesh, pih, Y, Q, L, curves, Ws, eps, med)
        djo = grad.dJ_operator(mesh, pih, P, B1, C1, lambdas, ops, eps, R, V)
        fd = (full_J(G + fd_step * R, U + fd_step * V)
              - full_J(G - fd_step * R, U - fd_step * V)) / (2 * fd_step)
        rows.append((d.kind, dja, djo, fd, abs(dja - fd) / max(1e-30, abs(fd)),
                     abs(djo - dja) / max(1e-30, abs(dja))))
    return rows


def cmd_mesh(args):
    from .mesh import save_mesh, write_vtk
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not os.path.exists(args.config):
        raise ConfigError(f"config file {args.config} does not exist")
    cp.read(args.config)
    mesh = build_mesh(cp)
    out_dir = args.out or cp.get("output", "dir", fallback="out")
    os.makedirs(out_dir, exist_ok=True)
    save_mesh(mesh, os.path.join(out_dir, "mesh.txt"))
    write_vtk(mesh, os.path.join(out_dir, "mesh.vtk"))
    print(f"vertices: {mesh.n}  triangles: {mesh.num_triangles}  "
          f"E triangles: {int((mesh.labels == 1).sum())}  h: {mesh.h:.6g}")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="penshape",
        description="Fixed-domain shape/topology optimization by cost "
                    "penalization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
            ("solve", cmd_solve, "run the descent loop and write artifacts"),
            ("compare", cmd_compare, "classical Dirichlet costs on the final domains"),
            ("trace", cmd_trace, "trace the zero-set orbits of g0"),
            ("state", cmd_state, "solve the penalized state for (g0, u0)"),
            ("grad-check", cmd_grad_check, "finite-difference derivative table"),
            ("mesh", cmd_mesh, "generate and export the mesh")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("--config", required=True, help="path to config file")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--dt", type=float, help="tracer time step override")
        p.add_argument("--fixed-m", dest="fixed_m", type=int,
                       help="fixed orbit partition size override")
        p.add_argument("--direction", choices=["adjoint41", "rstar", "full42"],
                       help="descent direction override")
        p.add_argument("--dump-orbits", dest="dump_orbits",
                       action="store_true", help="dump orbits every iteration")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    _cap_threads()
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        from .fem import SolverError
        from .levelset import EmptyZeroSetError, TraceError
        from .compare import EmptySubmeshError
        if isinstance(e, (SolverError, TraceError, EmptyZeroSetError,
                          EmptySubmeshError, RuntimeError, ValueError)):
            print(f"numerical failure: {e}", file=sys.stderr)
            return EXIT_NUMERICAL
        raise


if __name__ == "__main__":
    sys.exit(main())
