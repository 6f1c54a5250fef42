"""Time discretizations reducing the transient problem to linearized solves.

Scheme 1 is the first-order scheme: one solve per step with theta = 2/dt, the
unknowns being (u^{n+1}, q) with q twice the midpoint pressure.  Scheme 2 is
the two-stage L-stable scheme with substep fraction gamma = 1 - sqrt(2)/2;
both stages share one matrix, so the factorization is reused.  In both, the
advecting vorticity W = curl U^n comes from the extrapolation
U^n = 1.5 u^n - 0.5 u^{n-1} and the unknown is never differentiated by the
rotation term.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import DofMap, OseenAssembler, apply_bc_and_gauge, build_dofmap, hatted_values
from .oseen import DiscreteSolution, make_solution
from .solver import FactorizedSaddle, SolveReport, SolverError
from .weights import WeightParams, rho

GAMMA_DEFAULT = 1.0 - math.sqrt(2.0) / 2.0

RECORD_COLUMNS = (
    "step",
    "time",
    "err_W1_nu_velocity",
    "err_L2_nu_pressure",
    "solver_residual",
    "wall_ms",
)


@dataclass(frozen=True)
class SchemeConfig:
    scheme: int
    dt: float
    T: float
    gamma: float = GAMMA_DEFAULT

    def __post_init__(self):
        if self.scheme not in (1, 2):
            raise ValueError("scheme must be 1 or 2")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        n = round(self.T / self.dt)
        if n < 1 or abs(n * self.dt - self.T) > 1e-12 * max(self.T, 1.0):
            raise ValueError("T must be an integer multiple of dt")

    @property
    def num_steps(self) -> int:
        return round(self.T / self.dt)


@dataclass
class TimeState:
    """Hatted coefficients at the current level; u_prev backs the
    extrapolation, with u^{-1} := u^0 at the first step."""

    u: np.ndarray  # flat (num_velocity,)
    u_prev: np.ndarray
    P: np.ndarray  # (num_pressure,)
    n: int = 0
    t: float = 0.0


def extrapolate_U(state: TimeState) -> np.ndarray:
    return 1.5 * state.u - 0.5 * state.u_prev


def initial_state(problem, asm: OseenAssembler) -> TimeState:
    """Interpolated hatted velocity at t=0 and gauge-shifted exact pressure.

    Pressure nodes coinciding with the corner get hatted value 0: the true
    pressure is unbounded there and the weight envelope vanishes.
    """
    dofs, params = asm.dofs, asm.params
    u0 = np.asarray(problem.initial_velocity(dofs.vnode_coords), dtype=float)
    uhat = hatted_values(u0.T, dofs.vnode_coords, params.nu_star, params.delta)

    pc = dofs.pressure_coords
    at0 = np.hypot(pc[:, 0], pc[:, 1]) == 0.0
    pvals = np.zeros(len(pc))
    c0 = asm.gauge_constant(problem.pressure, t=0.0)
    pvals[~at0] = problem.pressure(pc[~at0], 0.0) - c0
    if np.any(at0) and params.mu_star == 0:
        # without a weight the corner node needs the exact value when the
        # pressure is bounded there; a singular pressure cannot be sampled
        # and the node is left at zero
        try:
            pvals[at0] = problem.pressure(pc[at0], 0.0) - c0
        except ValueError:
            pass
    phat = hatted_values(pvals, pc, params.mu_star, params.delta)
    if params.mu_star > 0:
        phat[at0] = 0.0
    return TimeState(uhat.ravel().copy(), uhat.ravel().copy(), phat)


def _solve_reduced(system, lu: FactorizedSaddle, tol: float):
    x, report = lu.solve(system.rhs, tol)
    ni = len(system.interior)
    vhat = np.empty(system.num_velocity)
    vhat[system.interior] = x[:ni]
    vhat[system.boundary] = system.boundary_values
    qhat = x[ni : ni + system.num_pressure]
    return vhat, qhat, report


def scheme1_step(state: TimeState, cfg: SchemeConfig, problem, asm: OseenAssembler, tol=1e-10):
    """One step of the first-order scheme; returns (new state, SolveReport)."""
    dt = cfg.dt
    t0, t1 = state.t, state.t + dt
    theta = 2.0 / dt
    W = asm.curl_recovered(extrapolate_U(state))
    R = asm.rotation(W)
    A = theta * asm.M + asm.K + R

    q = asm.quad.phys_points
    F = np.asarray(problem.forcing(q, t1)) + np.asarray(problem.forcing(q, t0))
    rhs = asm.load(F) + theta * (asm.M @ state.u) - asm.K @ state.u - R @ state.u
    system = apply_bc_and_gauge(
        A, asm.B, asm.C, asm.gauge_vec, rhs, asm.dofs, asm.params,
        lambda c: problem.boundary_velocity(c, t1),
    )
    lu = FactorizedSaddle(system.matrix)
    vhat, qhat, report = _solve_reduced(system, lu, tol)
    # q is twice the midpoint pressure, so P^{n+1} = q - P^n
    return TimeState(vhat, state.u.copy(), qhat - state.P, state.n + 1, t1), report


def scheme2_step(state: TimeState, cfg: SchemeConfig, problem, asm: OseenAssembler, tol=1e-10):
    """One step of the two-stage scheme; both stages reuse one factorization."""
    dt, g = cfg.dt, cfg.gamma
    tg, t1 = state.t + g * dt, state.t + dt
    theta = 1.0 / (g * dt)
    W = asm.curl_recovered(extrapolate_U(state))
    R = asm.rotation(W)
    A = theta * asm.M + asm.K + R
    q = asm.quad.phys_points

    fg = np.asarray(problem.forcing(q, tg))
    rhs1 = asm.load(fg) + theta * (asm.M @ state.u)
    sys1 = apply_bc_and_gauge(
        A, asm.B, asm.C, asm.gauge_vec, rhs1, asm.dofs, asm.params,
        lambda c: problem.boundary_velocity(c, tg),
    )
    lu = FactorizedSaddle(sys1.matrix)
    ug, qg, rep1 = _solve_reduced(sys1, lu, tol)

    ratio = (1.0 - g) / g
    F2 = np.asarray(problem.forcing(q, t1)) + ratio * fg
    rhs2 = (
        asm.load(F2)
        + theta * (asm.M @ state.u)
        - ratio * (asm.K @ ug + R @ ug + asm.B @ qg)
    )
    sys2 = apply_bc_and_gauge(
        A, asm.B, asm.C, asm.gauge_vec, rhs2, asm.dofs, asm.params,
        lambda c: problem.boundary_velocity(c, t1),
    )
    vhat, qhat, rep2 = _solve_reduced(sys2, lu, tol)
    report = SolveReport(max(rep1.residual, rep2.residual), 0,
                         rep1.wall_time + rep2.wall_time, rep1.method)
    return TimeState(vhat, state.u.copy(), qhat, state.n + 1, t1), report


def step_errors(state: TimeState, problem, asm: OseenAssembler):
    """Weighted norms of the error at the state's time level.

    Velocity in the W^1_{2,nu} norm, pressure in L_{2,nu}; the exact pressure
    is gauge-shifted before comparison.
    """
    qp = asm.quad.phys_points
    w = asm.quad.weights * rho(qp, asm.params.delta) ** (2.0 * asm.params.nu)
    uh = asm.velocity_at_quad(state.u)
    gh = asm.velocity_grad_at_quad(state.u)
    ph = asm.pressure_at_quad(state.P)
    ue = np.asarray(problem.velocity(qp, state.t))
    ge = np.asarray(problem.velocity_grad(qp, state.t))
    c = asm.gauge_constant(problem.pressure, t=state.t)
    pe = np.asarray(problem.pressure(qp, state.t)) - c
    du, dg = uh - ue, gh - ge
    err_v = math.sqrt(float(np.sum(w * (np.sum(du**2, axis=1) + np.sum(dg**2, axis=(1, 2))))))
    err_p = math.sqrt(float(np.sum(w * (ph - pe) ** 2)))
    return err_v, err_p


@dataclass
class TransientResult:
    config: SchemeConfig
    records: np.ndarray  # (num_steps, 6), columns RECORD_COLUMNS
    final: DiscreteSolution
    state: TimeState = None

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(RECORD_COLUMNS) + "\n")
            for row in self.records:
                fh.write("%d,%.17g,%.17g,%.17g,%.17g,%.17g\n" % (int(row[0]), *row[1:]))


def run_transient(
    cfg: SchemeConfig,
    problem,
    mesh,
    params: WeightParams,
    dofs: DofMap | None = None,
    assembler: OseenAssembler | None = None,
    tol: float = 1e-10,
    degree: int = 6,
) -> TransientResult:
    """March the scheme over [0, T], recording per-step errors.

    Solver failures abort with the step index attached.
    """
    dofs = dofs or build_dofmap(mesh)
    asm = assembler or OseenAssembler(mesh, dofs, params, degree=degree)
    state = initial_state(problem, asm)
    step = scheme1_step if cfg.scheme == 1 else scheme2_step

    records = np.empty((cfg.num_steps, len(RECORD_COLUMNS)))
    for n in range(cfg.num_steps):
        t0 = time.perf_counter()
        try:
            state, report = step(state, cfg, problem, asm, tol)
        except SolverError as exc:
            raise SolverError(f"step {n + 1}: {exc}", residual=exc.residual) from exc
        wall_ms = 1e3 * (time.perf_counter() - t0)
        err_v, err_p = step_errors(state, problem, asm)
        records[n] = (state.n, state.t, err_v, err_p, report.residual, wall_ms)

    final = make_solution(state.u.reshape(2, -1), state.P, dofs, params, t=state.t)
    return TransientResult(cfg, records, final, state)
