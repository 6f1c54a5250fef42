"""One linearized step problem: theta v - Lap v + W x v + grad q = F.

W is the scalar 2D vorticity; W x v means (-W v2, W v1).  Solutions are
returned with both hatted coefficients and recovered true nodal fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import (
    DofMap,
    OseenAssembler,
    SaddleSystem,
    apply_bc_and_gauge,
    recovered_values,
    ref_basis_p1,
    ref_basis_p2,
)
from .solver import SolveReport, solve_saddle
from .weights import WeightParams, rho_pow_grad


@dataclass
class OseenProblem:
    """Data of the generic linearized problem.

    ``W`` and ``F`` are samplers over points (or arrays aligned with the
    assembler's quadrature points); ``G`` samples the boundary velocity.
    ``extra_rhs`` carries weak-form contributions of previously computed
    discrete fields, assembled with the same quadrature as the matrices.
    """

    theta: float
    W: object | None
    F: object | None
    G: object
    params: WeightParams
    extra_rhs: np.ndarray | None = None

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")


@dataclass
class DiscreteSolution:
    """Hatted coefficients plus recovered true nodal fields at one time level."""

    vhat: np.ndarray  # (2, n_vnodes)
    qhat: np.ndarray  # (num_pressure,)
    velocity: np.ndarray  # recovered, (2, n_vnodes)
    pressure: np.ndarray  # recovered, (num_pressure,)
    t: float = 0.0
    report: SolveReport | None = None


def make_solution(vhat, qhat, dofs: DofMap, params: WeightParams, t=0.0, report=None):
    v = recovered_values(vhat, dofs.vnode_coords, params.nu_star, params.delta)
    q = recovered_values(qhat, dofs.pressure_coords, params.mu_star, params.delta)
    return DiscreteSolution(vhat, qhat, v, q, t, report)


def build_system(problem: OseenProblem, asm: OseenAssembler) -> SaddleSystem:
    A = problem.theta * asm.M + asm.K
    if problem.W is not None:
        A = A + asm.rotation(problem.W)
    rhs = asm.load(problem.F) if problem.F is not None else np.zeros(asm.dofs.num_velocity)
    if problem.extra_rhs is not None:
        rhs = rhs + problem.extra_rhs
    return apply_bc_and_gauge(
        A, asm.B, asm.C, asm.gauge_vec, rhs, asm.dofs, problem.params, problem.G
    )


def solve_oseen(
    problem: OseenProblem,
    mesh,
    dofs: DofMap,
    tol: float = 1e-10,
    assembler: OseenAssembler | None = None,
    t: float = 0.0,
) -> DiscreteSolution:
    """Assemble and solve one linearized problem on a split mesh."""
    asm = assembler or OseenAssembler(mesh, dofs, problem.params)
    system = build_system(problem, asm)
    vhat, qhat, report = solve_saddle(system, tol)
    return make_solution(
        vhat.reshape(2, -1), qhat, dofs, problem.params, t=t, report=report
    )


def locate_points(mesh, points: np.ndarray, tol: float = 1e-12):
    """Element index and reference coordinates for each point (brute force)."""
    pts = np.atleast_2d(points)
    coords = mesh.triangle_coords()
    a = coords[:, 0]
    J = np.stack([coords[:, 1] - a, coords[:, 2] - a], axis=2)
    Jinv = np.linalg.inv(J)
    elems = np.full(len(pts), -1, dtype=np.int64)
    refs = np.zeros((len(pts), 2))
    for i, p in enumerate(pts):
        loc = np.einsum("eij,ej->ei", Jinv, p - a)
        ok = np.nonzero(
            (loc[:, 0] >= -tol) & (loc[:, 1] >= -tol) & (loc.sum(axis=1) <= 1 + tol)
        )[0]
        if len(ok) == 0:
            raise ValueError(f"point {p} lies outside the mesh")
        elems[i] = ok[0]
        refs[i] = loc[ok[0]]
    return elems, refs


def eval_discrete(
    solution: DiscreteSolution,
    mesh,
    dofs: DofMap,
    params: WeightParams,
    points: np.ndarray,
):
    """Velocity, velocity gradient and pressure of the discrete solution.

    Works in hatted space (coefficients times weighted bases), not by
    interpolating recovered nodal values.
    """
    pts = np.atleast_2d(points)
    elems, refs = locate_points(mesh, pts)
    N2, dN2 = ref_basis_p2(refs)
    N1, _ = ref_basis_p1(refs)
    coords = mesh.triangle_coords()
    a = coords[elems, 0]
    J = np.stack([coords[elems, 1] - a, coords[elems, 2] - a], axis=2)
    Jinv = np.linalg.inv(J)
    dN2 = np.einsum("pji,pkj->pki", Jinv, dN2)

    sv, dsv = rho_pow_grad(pts, -params.nu_star, params.delta)
    sm, _ = rho_pow_grad(pts, -params.mu_star, params.delta)
    phi = N2 * sv[:, None]
    dphi = sv[:, None, None] * dN2 + N2[:, :, None] * dsv[:, None, :]
    psi = N1 * sm[:, None]

    vd = dofs.element_vdofs[elems]
    coef = solution.vhat[:, vd]  # (2,m,6)
    u = np.einsum("cpi,pi->pc", coef, phi)
    grad = np.einsum("cpi,pid->pcd", coef, dphi)
    pd = 3 * elems[:, None] + np.arange(3)[None, :]
    p = np.einsum("pl,pl->p", solution.qhat[pd], psi)
    return u, grad, p
