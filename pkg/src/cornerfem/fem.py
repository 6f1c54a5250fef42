"""Scott-Vogelius (P2 / discontinuous P1) assembly of the weighted forms.

Velocity uses continuous Lagrange P2 on the barycentrically split mesh, with
basis functions multiplied by rho^(-nu*); pressure uses element-local P1
(vertices of neighboring elements are distinct nodes) multiplied by
rho^(-mu*).  Test functions additionally carry the rho^(2 nu) envelope, which
makes the velocity/pressure coupling forms b and c distinct for nu > 0.

Unknowns are the "hatted" coefficients of the weighted bases; true nodal
values are recovered by multiplying with rho^(-exponent) at each node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, MeshError
from .quadrature import build_quadrature
from .weights import WeightParams, rho, rho_pow_grad


def ref_basis_p2(points: np.ndarray):
    """P2 Lagrange basis on the reference triangle.

    Local node order: vertices (0,0),(1,0),(0,1), then midpoints opposite each
    vertex (edge 12, edge 20, edge 01).  Returns values (n,6) and reference
    gradients (n,6,2).
    """
    p = np.atleast_2d(points)
    x, y = p[:, 0], p[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    lam = np.stack([l0, l1, l2], axis=1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    vals = np.empty((len(p), 6))
    grads = np.empty((len(p), 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i] = (4.0 * lam[:, i, None] - 1.0) * dlam[i]
    for i, (a, b) in enumerate([(1, 2), (2, 0), (0, 1)]):
        vals[:, 3 + i] = 4.0 * lam[:, a] * lam[:, b]
        grads[:, 3 + i] = 4.0 * (lam[:, a, None] * dlam[b] + lam[:, b, None] * dlam[a])
    return vals, grads


def ref_basis_p1(points: np.ndarray):
    """P1 basis (barycentric coordinates) with constant reference gradients."""
    p = np.atleast_2d(points)
    x, y = p[:, 0], p[:, 1]
    vals = np.stack([1.0 - x - y, x, y], axis=1)
    grads = np.broadcast_to(
        np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(p), 3, 2)
    ).copy()
    return vals, grads


@dataclass
class DofMap:
    """Velocity/pressure degree-of-freedom layout on a split mesh.

    Velocity nodes are the mesh vertices followed by edge midpoints (shared,
    continuous); a velocity vector stores component 1 then component 2, each
    of length ``num_vnodes``.  Pressure dof ``3*e + l`` is vertex l of element
    e (never shared).
    """

    mesh: Mesh
    vnode_coords: np.ndarray
    element_vdofs: np.ndarray
    boundary_vnodes: np.ndarray
    pressure_coords: np.ndarray

    @property
    def num_vnodes(self) -> int:
        return len(self.vnode_coords)

    @property
    def num_pressure(self) -> int:
        return len(self.pressure_coords)

    @property
    def num_velocity(self) -> int:
        return 2 * self.num_vnodes

    def interior_vnodes(self) -> np.ndarray:
        mask = np.ones(self.num_vnodes, dtype=bool)
        mask[self.boundary_vnodes] = False
        return np.nonzero(mask)[0]


def build_dofmap(mesh: Mesh) -> DofMap:
    if not mesh.is_split:
        raise MeshError("dof map requires a barycentrically split mesh")
    t = mesh.triangles
    nv = mesh.num_vertices
    edges = np.sort(
        np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]]), axis=1
    )
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    nt = len(t)
    edge_dof = nv + inv.reshape(3, nt).T  # local midpoints opposite v0,v1,v2
    element_vdofs = np.column_stack([t, edge_dof])
    mid_coords = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    vnode_coords = np.vstack([mesh.vertices, mid_coords])

    bset = {tuple(e) for e in np.sort(mesh.boundary_edges, axis=1)}
    bmid = [nv + i for i, e in enumerate(map(tuple, uniq)) if e in bset]
    bverts = np.unique(mesh.boundary_edges)
    boundary = np.array(sorted(set(bverts.tolist()) | set(bmid)), dtype=np.int64)

    pressure_coords = mesh.vertices[t].reshape(3 * nt, 2)
    return DofMap(mesh, vnode_coords, element_vdofs, boundary, pressure_coords)


def hatted_values(true_values: np.ndarray, coords: np.ndarray, exponent: float, delta: float):
    """Convert true nodal values to hatted coefficients (multiply by rho^exp)."""
    if exponent == 0.0:
        return np.array(true_values, dtype=float, copy=True)
    return np.asarray(true_values) * rho(coords, delta) ** exponent


def recovered_values(hatted: np.ndarray, coords: np.ndarray, exponent: float, delta: float):
    """True nodal values from hatted coefficients (multiply by rho^-exp).

    At a node sitting exactly on the origin the weight vanishes; a zero hatted
    value recovers as 0 (its limit), anything else as nan.
    """
    if exponent == 0.0:
        return np.array(hatted, dtype=float, copy=True)
    r = rho(coords, delta)
    out = np.empty_like(np.asarray(hatted, dtype=float))
    at0 = r == 0.0
    out[..., ~at0] = hatted[..., ~at0] * r[~at0] ** (-exponent)
    out[..., at0] = np.where(hatted[..., at0] == 0.0, 0.0, np.nan)
    return out


class OseenAssembler:
    """Precomputed weighted-basis tables and assembled time-independent blocks.

    Exposes the scalar mass/stiffness matrices with the test-side envelope
    (``M``, ``K`` over all velocity dofs, both components), the coupling
    blocks ``B`` (pressure trial) and ``C`` (pressure test), and the pressure
    gauge vector.  The rotation matrix and load vector depend on step data and
    are assembled on demand.
    """

    def __init__(self, mesh: Mesh, dofs: DofMap, params: WeightParams, degree: int = 6):
        self.mesh = mesh
        self.dofs = dofs
        self.params = params
        self.quad = build_quadrature(mesh, params.delta, degree)
        q = self.quad
        npts = q.num_points
        n = dofs.num_vnodes

        N2, dN2 = ref_basis_p2(q.ref_points)
        N1, _ = ref_basis_p1(q.ref_points)
        # x = a + J xi with edge vectors as columns of J, so grad_x = J^-T grad_xi
        Jinv = np.linalg.inv(q.jacobians)[q.elem_of_point]
        dN2 = np.einsum("pji,pkj->pki", Jinv, dN2, optimize=True)

        x = q.phys_points
        sv, dsv = rho_pow_grad(x, -params.nu_star, params.delta)
        sm, _ = rho_pow_grad(x, -params.mu_star, params.delta)
        E, dE = rho_pow_grad(x, 2.0 * params.nu, params.delta)

        self.shape = N2  # unweighted P2 tables, kept for recovered-field use
        self.dshape = dN2
        self.phi = N2 * sv[:, None]
        self.dphi = sv[:, None, None] * dN2 + N2[:, :, None] * dsv[:, None, :]
        self.psi = N1 * sm[:, None]
        self.tval = E[:, None] * self.phi
        self.tgrad = E[:, None, None] * self.dphi + self.phi[:, :, None] * dE[:, None, :]
        Epsi = E[:, None] * self.psi
        gw = rho(x, params.delta) ** params.nu if params.nu else np.ones(npts)

        self.point_vdofs = dofs.element_vdofs[q.elem_of_point]
        self._uni = q.uniform_elems
        nq = len(q.base_rule.weights)
        self._uni_idx = (q.offsets[self._uni][:, None] + np.arange(nq)).astype(np.int64)

        w = q.weights
        Msc = self._scalar_matrix(w, self.phi, self.tval)
        Ksc = self._scalar_gradmatrix(w, self.dphi, self.tgrad)
        self.M = sp.block_diag((Msc, Msc)).tocsr()
        self.K = sp.block_diag((Ksc, Ksc)).tocsr()
        self.B = self._assemble_B(w, self.psi, self.tgrad)
        self.C = self._assemble_C(w, Epsi, self.dphi)
        self.gauge_vec = self._assemble_gauge(w, gw, self.psi)

    # -- element reductions ------------------------------------------------
    def _per_element(self, point_values: np.ndarray) -> np.ndarray:
        """Sum a per-quadrature-point quantity over each element."""
        flat = point_values.reshape(len(point_values), -1)
        out = np.add.reduceat(flat, self.quad.offsets[:-1], axis=0)
        return out.reshape((self.mesh.num_triangles,) + point_values.shape[1:])

    def _local_products(self, w, a, b):
        """(nt,ka,kb) local matrices: sum_q w * a[q,i] * b[q,j]."""
        loc = np.zeros((self.mesh.num_triangles, a.shape[1], b.shape[1]))
        idx = self._uni_idx
        loc[self._uni] = np.einsum(
            "eq,eqi,eqj->eij", w[idx], a[idx], b[idx], optimize=True
        )
        for e in self.quad.refined_elems:
            s = slice(self.quad.offsets[e], self.quad.offsets[e + 1])
            loc[e] = np.einsum("q,qi,qj->ij", w[s], a[s], b[s])
        return loc

    def _local_grad_products(self, w, da, db):
        loc = np.zeros((self.mesh.num_triangles, da.shape[1], db.shape[1]))
        idx = self._uni_idx
        loc[self._uni] = np.einsum(
            "eq,eqid,eqjd->eij", w[idx], da[idx], db[idx], optimize=True
        )
        for e in self.quad.refined_elems:
            s = slice(self.quad.offsets[e], self.quad.offsets[e + 1])
            loc[e] = np.einsum("q,qid,qjd->ij", w[s], da[s], db[s])
        return loc

    def _scalar_from_local(self, loc: np.ndarray) -> sp.csr_matrix:
        vd = self.dofs.element_vdofs
        n = self.dofs.num_vnodes
        rows = np.repeat(vd, 6, axis=1).ravel()
        cols = np.tile(vd, (1, 6)).ravel()
        return sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    def _scalar_matrix(self, w, trial, test) -> sp.csr_matrix:
        # rows = test index, cols = trial index
        return self._scalar_from_local(np.swapaxes(self._local_products(w, trial, test), 1, 2))

    def _scalar_gradmatrix(self, w, dtrial, dtest) -> sp.csr_matrix:
        return self._scalar_from_local(
            np.swapaxes(self._local_grad_products(w, dtrial, dtest), 1, 2)
        )

    def _assemble_B(self, w, psi, tgrad) -> sp.csr_matrix:
        nt = self.mesh.num_triangles
        n = self.dofs.num_vnodes
        vd = self.dofs.element_vdofs
        prow = (3 * np.arange(nt)[:, None] + np.arange(3)[None, :]).astype(np.int64)
        blocks = []
        for d in range(2):
            loc = self._local_products(w, psi, tgrad[:, :, d])  # (nt, 3, 6) trial psi, test i
            rows = np.repeat(vd, 3, axis=1).ravel()
            cols = np.tile(prow, (1, 6)).ravel()
            vals = -np.swapaxes(loc, 1, 2).ravel()
            blocks.append(
                sp.coo_matrix((vals, (rows, cols)), shape=(n, self.dofs.num_pressure))
            )
        return sp.vstack(blocks).tocsr()

    def _assemble_C(self, w, Epsi, dphi) -> sp.csr_matrix:
        nt = self.mesh.num_triangles
        n = self.dofs.num_vnodes
        vd = self.dofs.element_vdofs
        prow = (3 * np.arange(nt)[:, None] + np.arange(3)[None, :]).astype(np.int64)
        blocks = []
        for c in range(2):
            loc = self._local_products(w, dphi[:, :, c], Epsi)  # (nt, 6, 3): trial j, test l
            rows = np.repeat(prow, 6, axis=1).ravel()
            cols = np.tile(vd, (1, 3)).ravel()
            vals = -np.swapaxes(loc, 1, 2).ravel()
            blocks.append(
                sp.coo_matrix((vals, (rows, cols)), shape=(self.dofs.num_pressure, n))
            )
        return sp.hstack(blocks).tocsr()

    def _assemble_gauge(self, w, gw, psi) -> np.ndarray:
        loc = self._per_element(w[:, None] * gw[:, None] * psi)  # (nt,3)
        return loc.ravel()

    # -- step-dependent pieces ---------------------------------------------
    def _point_values(self, f, width=None):
        if callable(f):
            vals = np.asarray(f(self.quad.phys_points), dtype=float)
        else:
            vals = np.asarray(f, dtype=float)
        expect = (self.quad.num_points,) if width is None else (self.quad.num_points, width)
        if vals.shape != expect:
            raise ValueError(f"sampler returned shape {vals.shape}, expected {expect}")
        return vals

    def rotation(self, W) -> sp.csr_matrix:
        """Matrix of the zeroth-order rotation term (W x w) . (rho^2nu z).

        ``W`` is the scalar 2D vorticity, as a callable on points or an array
        aligned with the quadrature points.
        """
        Wv = self._point_values(W)
        n = self.dofs.num_vnodes
        Rsc = self._scalar_matrix(self.quad.weights * Wv, self.phi, self.tval)
        return sp.bmat([[None, -Rsc], [Rsc, None]]).tocsr()

    def load(self, F) -> np.ndarray:
        """Right-hand side vector of l(z) = int F . (rho^2nu z)."""
        Fv = self._point_values(F, width=2)
        w = self.quad.weights
        out = np.empty(self.dofs.num_velocity)
        n = self.dofs.num_vnodes
        for d in range(2):
            loc = self._per_element(w[:, None] * Fv[:, d, None] * self.tval)
            vec = np.zeros(n)
            np.add.at(vec, self.dofs.element_vdofs.ravel(), loc.ravel())
            out[d * n : (d + 1) * n] = vec
        return out

    # -- discrete field evaluation on the quadrature points ------------------
    def velocity_at_quad(self, vhat: np.ndarray) -> np.ndarray:
        coef = vhat.reshape(2, -1)[:, self.point_vdofs]  # (2,npts,6)
        return np.einsum("cpi,pi->pc", coef, self.phi, optimize=True)

    def velocity_grad_at_quad(self, vhat: np.ndarray) -> np.ndarray:
        coef = vhat.reshape(2, -1)[:, self.point_vdofs]
        return np.einsum("cpi,pid->pcd", coef, self.dphi, optimize=True)

    def curl_at_quad(self, vhat: np.ndarray) -> np.ndarray:
        g = self.velocity_grad_at_quad(vhat)
        return g[:, 1, 0] - g[:, 0, 1]

    def curl_recovered(self, vhat: np.ndarray) -> np.ndarray:
        """Scalar curl of the recovered field, interpolated by plain P2.

        Differentiating the rho^{-nu*} envelope of the weighted basis blows up
        at quadrature points deep inside the corner elements (the envelope's
        gradient amplifies interpolation error like r^{-nu*}), so advecting
        fields are differentiated through the standard interpolation of the
        recovered nodal values, which stays bounded.
        """
        v = recovered_values(
            vhat.reshape(2, -1), self.dofs.vnode_coords, self.params.nu_star,
            self.params.delta,
        )
        coef = v[:, self.point_vdofs]  # (2,npts,6)
        return np.einsum("pi,pi->p", coef[1], self.dshape[:, :, 0]) - np.einsum(
            "pi,pi->p", coef[0], self.dshape[:, :, 1]
        )

    def pressure_at_quad(self, qhat: np.ndarray) -> np.ndarray:
        pd = 3 * self.quad.elem_of_point[:, None] + np.arange(3)[None, :]
        return np.einsum("pl,pl->p", qhat[pd], self.psi, optimize=True)

    def gauge_constant(self, sampler, t=None) -> float:
        """Constant c with int rho^nu (p - c) = 0 for an analytic pressure."""
        x = self.quad.phys_points
        p = sampler(x, t) if t is not None else sampler(x)
        gw = rho(x, self.params.delta) ** self.params.nu
        return float(np.sum(self.quad.weights * gw * p) / np.sum(self.quad.weights * gw))


@dataclass
class SaddleSystem:
    """Reduced block system [[A,B,0],[C,0,g],[0,g^T,0]] with Dirichlet dofs
    eliminated; carries the bookkeeping to reinsert boundary values."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    num_velocity: int
    num_pressure: int


def apply_bc_and_gauge(
    A: sp.spmatrix,
    B: sp.spmatrix,
    C: sp.spmatrix,
    gauge_vec: np.ndarray,
    rhs: np.ndarray,
    dofs: DofMap,
    params: WeightParams,
    g,
) -> SaddleSystem:
    """Eliminate boundary velocity dofs and append the pressure-gauge row.

    ``g`` samples the true boundary velocity at node coordinates, shape
    (k, 2) -> values; hatted values are g(M_i) * rho^{nu*}(M_i).  A nonzero
    boundary value at the origin is not representable when nu* > 0.
    """
    bnodes = dofs.boundary_vnodes
    coords = dofs.vnode_coords[bnodes]
    gv = np.asarray(g(coords), dtype=float)
    if gv.shape != (len(bnodes), 2):
        raise ValueError("boundary sampler must return (k, 2) values")
    if params.nu_star > 0:
        at0 = np.hypot(coords[:, 0], coords[:, 1]) == 0.0
        if np.any(np.abs(gv[at0]) > 1e-12):
            raise ValueError(
                "nonzero boundary velocity at the origin is not representable "
                "with nu* > 0 (the weight vanishes there)"
            )
    ghat = hatted_values(gv.T, coords, params.nu_star, params.delta)  # (2,k)

    n = dofs.num_vnodes
    ifull = np.concatenate([dofs.interior_vnodes(), n + dofs.interior_vnodes()])
    bfull = np.concatenate([bnodes, n + bnodes])
    bvals = ghat.ravel()

    A = A.tocsr()
    A_ii = A[ifull][:, ifull]
    A_ib = A[ifull][:, bfull]
    B_i = B.tocsr()[ifull]
    C_i = C.tocsr()[:, ifull]
    C_b = C.tocsr()[:, bfull]

    rhs_v = rhs[ifull] - A_ib @ bvals
    rhs_p = -C_b @ bvals
    gcol = sp.csr_matrix(gauge_vec[:, None])
    mat = sp.bmat(
        [[A_ii, B_i, None], [C_i, None, gcol], [None, gcol.T, None]], format="csr"
    )
    full_rhs = np.concatenate([rhs_v, rhs_p, [0.0]])
    return SaddleSystem(
        mat, full_rhs, ifull, bfull, bvals, dofs.num_velocity, dofs.num_pressure
    )
