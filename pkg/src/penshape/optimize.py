"""Projected gradient descent on the penalized shape objective.

Each iteration traces the zero-set orbits, solves the state and adjoint
problems, builds one of the three descent directions, and line-searches
over the finite trial set lambda = rho^i * lambda0.  The level-set update
is scaled by gamma = 1/max|r| and projected so the observation region
stays inside the shape (positive values at its vertices are reset to a
fixed negative value).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import fem, grad
from .cost import CostBreakdown, CurveMatrices, assemble_curve_matrices, eval_cost
from .expr import Expr
from .fem import SolverError
from .levelset import (EmptyZeroSetError, Trajectory, TraceError,
                       trace_components, validate_admissible)
from .mesh import DiscreteDerivativeOps, Mesh, build_pih

log = logging.getLogger(__name__)

DIRECTION_KINDS = ("adjoint41", "rstar", "full42")


@dataclass
class OptimizerConfig:
    eps: float
    dt: float
    tol: float = 1e-6
    lambda0: float = 1.0
    rho: float = 0.5
    i_max: int = 31
    gamma_rule: bool = True
    projection_value: float = -0.1
    fixed_m: int | None = None
    max_iters: int = 100
    direction: str = "adjoint41"
    med_domain: str = "E"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must be in (0, 1)")
        if self.projection_value >= 0:
            raise ValueError("projection_value must be negative")
        if self.direction not in DIRECTION_KINDS:
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.med_domain not in ("D", "E"):
            raise ValueError("med_domain must be 'D' or 'E'")


@dataclass
class Problem:
    """Mesh, data expressions and the initial design."""

    mesh: Mesh
    f: Expr
    j: Expr                     # cost integrand j(x1, x2, y)
    G0: np.ndarray
    U0: np.ndarray
    yd: Expr | None = None      # target state (default integrand derivative)
    j2: Expr | None = None      # d j / d y, overrides the yd default
    pih: DiscreteDerivativeOps = None

    def __post_init__(self):
        if self.pih is None:
            self.pih = build_pih(self.mesh)
        if self.j2 is None and self.yd is None:
            raise ValueError("either yd or j2 must be given")


@dataclass
class Evaluation:
    """Everything derived from one (G, U) pair."""

    G: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    trajectories: list[Trajectory]
    curves: list[CurveMatrices]
    cost: CostBreakdown


@dataclass
class IterationRecord:
    k: int
    cost: CostBreakdown
    step: float
    norm_R: float
    norm_V: float
    slope: float
    components: int
    wall: float


@dataclass
class RunResult:
    records: list[IterationRecord]
    final: Evaluation
    stop_reason: str

    @property
    def history(self) -> list[CostBreakdown]:
        return [r.cost for r in self.records]


def project_E(mesh: Mesh, G: np.ndarray, value: float = -0.1) -> np.ndarray:
    """Reset positive level-set values at observation-region vertices."""
    out = np.array(G, dtype=float, copy=True)
    idx = mesh.e_nodes
    out[idx] = np.where(out[idx] > 0.0, value, out[idx])
    return out


def evaluate(problem: Problem, cfg: OptimizerConfig, G: np.ndarray,
             U: np.ndarray, K, F, y0=None) -> Evaluation:
    """Trace the zero set, solve the state and price the design.

    ``y0`` warm-starts the state solve (handy in the line search, where
    consecutive trials differ little)."""
    mesh = problem.mesh
    trajectories = trace_components(mesh, G, problem.pih, cfg.dt,
                                    fixed_m=cfg.fixed_m)
    curves = [assemble_curve_matrices(mesh, Z) for Z in trajectories]
    B1 = fem.assemble_B1(mesh, G, cfg.eps)
    Y = fem.solve_spd(K, F + B1 @ U, x0=y0)
    cb = eval_cost(mesh, Y, curves, cfg.eps, problem.j)
    return Evaluation(G=G, U=U, Y=Y, trajectories=trajectories,
                      curves=curves, cost=cb)


def build_direction(problem: Problem, cfg: OptimizerConfig, ev: Evaluation,
                    K, med) -> grad.DescentDirection:
    mesh = problem.mesh
    B1 = fem.assemble_B1(mesh, ev.G, cfg.eps)
    C1 = fem.assemble_C1(mesh, ev.G, cfg.eps, ev.U)
    L = grad.eval_L(mesh, ev.Y, problem.j2, problem.yd)
    P = fem.solve_adjoint(mesh, ev.Y, [c.N for c in ev.curves], cfg.eps, L,
                          K=K, med=med)
    if cfg.direction == "adjoint41":
        return grad.direction_adjoint_41(mesh, P, ev.U, B1, C1)
    if cfg.direction == "rstar":
        return grad.direction_operator_Rstar(P, B1, C1)
    from .levelset import build_orbit_operators
    lambdas = [grad.build_lambda_vectors(mesh, problem.pih, ev.G, ev.Y, c)
               for c in ev.curves]
    ops = [build_orbit_operators(mesh, ev.G, problem.pih, Z)
           for Z in ev.trajectories]
    return grad.direction_full_42(mesh, problem.pih, P, B1, C1, lambdas,
                                  ops, cfg.eps)


def line_search(problem: Problem, cfg: OptimizerConfig, current: Evaluation,
                direction: grad.DescentDirection, K, F):
    """Best-of-trials search over lambda = rho^i lambda0.

    Every trial projects the level-set update, re-traces the orbits and
    re-solves the state; failed trials (tracer or solver) are skipped.
    Returns (lambda, Evaluation) or None when no trial improves on the
    current cost.
    """
    sup = float(np.abs(direction.R).max())
    gamma = 1.0 / sup if (cfg.gamma_rule and sup > 0.0) else 1.0
    best = None
    for i in range(cfg.i_max):
        lam = cfg.lambda0 * cfg.rho ** i
        G_try = project_E(problem.mesh, current.G + (lam * gamma) * direction.R,
                          cfg.projection_value)
        U_try = current.U + lam * direction.V
        try:
            ev = evaluate(problem, cfg, G_try, U_try, K, F, y0=current.Y)
        except (TraceError, EmptyZeroSetError, SolverError) as e:
            log.debug("line-search trial i=%d (lambda=%g) skipped: %s", i, lam, e)
            continue
        if best is None or ev.cost.total < best[1].cost.total:
            best = (lam, ev)
    if best is None or best[1].cost.total >= current.cost.total:
        return None
    return best


def run(problem: Problem, cfg: OptimizerConfig,
        on_iteration=None) -> RunResult:
    """Drive the descent loop until |Delta J| < tol, no line-search trial
    improves the cost, or max_iters is reached."""
    mesh = problem.mesh
    report = validate_admissible(mesh, problem.G0)
    if not report.ok:
        raise ValueError("initial level-set function is not admissible: "
                         + "; ".join(report.failures()))
    K = fem.assemble_stiffness(mesh)
    F = fem.assemble_load(mesh, problem.f)
    med = fem.assemble_MED(mesh, cfg.med_domain)

    current = evaluate(problem, cfg, np.asarray(problem.G0, dtype=float),
                       np.asarray(problem.U0, dtype=float), K, F)
    records: list[IterationRecord] = []
    t0 = time.perf_counter()
    records.append(IterationRecord(
        k=0, cost=current.cost, step=0.0, norm_R=0.0, norm_V=0.0, slope=0.0,
        components=len(current.trajectories), wall=time.perf_counter() - t0))
    if on_iteration:
        on_iteration(records[-1], current)

    stop_reason = "max_iters"
    for k in range(1, cfg.max_iters + 1):
        direction = build_direction(problem, cfg, current, K, med)
        found = line_search(problem, cfg, current, direction, K, F)
        if found is None:
            stop_reason = "no-improvement"
            break
        lam, ev = found
        delta = current.cost.total - ev.cost.total
        current = ev
        records.append(IterationRecord(
            k=k, cost=ev.cost, step=lam,
            norm_R=float(np.linalg.norm(direction.R)),
            norm_V=float(np.linalg.norm(direction.V)),
            slope=direction.slope,
            components=len(ev.trajectories),
            wall=time.perf_counter() - t0))
        if on_iteration:
            on_iteration(records[-1], current)
        log.info("iter %d: J=%.6g (J1=%.6g) step=%g components=%d",
                 k, ev.cost.total, ev.cost.J1, lam, len(ev.trajectories))
        if abs(delta) < cfg.tol:
            stop_reason = "tol"
            break
    return RunResult(records=records, final=current, stop_reason=stop_reason)
