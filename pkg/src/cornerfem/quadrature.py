"""Triangle quadrature: collapsed Gauss rules plus corner-refined composites.

Base rules are tensor Gauss-Legendre rules collapsed onto the reference
triangle (Duffy map), so arbitrary polynomial degrees are available and all
points are strictly interior.  Elements near the corner get a composite rule
built from geometric subdivision toward the corner (quadrature only, the mesh
is untouched), which recovers accuracy for integrands with rho-powers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

REFINE_LEVELS = 4


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature points/weights on the reference triangle (0,0),(1,0),(0,1)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def gauss_triangle(degree: int) -> TriangleRule:
    """Rule exact for polynomials of total degree <= degree."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    nu = max(1, -(-(degree + 1) // 2))
    nv = max(1, -(-(degree + 2) // 2))
    xu, wu = np.polynomial.legendre.leggauss(nu)
    xv, wv = np.polynomial.legendre.leggauss(nv)
    u = 0.5 * (xu + 1.0)
    v = 0.5 * (xv + 1.0)
    wu, wv = 0.5 * wu, 0.5 * wv
    U, V = np.meshgrid(u, v, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    pts = np.column_stack([(U * (1.0 - V)).ravel(), V.ravel()])
    wts = (WU * WV * (1.0 - V)).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return TriangleRule(pts, wts, degree)


def _dist_to_triangle(tri: np.ndarray, p=(0.0, 0.0)) -> float:
    """Distance from point p to a (closed) triangle."""
    p = np.asarray(p, dtype=float)
    # inside test via barycentric signs
    a, b, c = tri
    d1, d2, dp = b - a, c - a, p - a
    det = d1[0] * d2[1] - d1[1] * d2[0]
    s = (dp[0] * d2[1] - dp[1] * d2[0]) / det
    t = (d1[0] * dp[1] - d1[1] * dp[0]) / det
    if s >= 0 and t >= 0 and s + t <= 1:
        return 0.0
    best = np.inf
    for q0, q1 in ((a, b), (b, c), (c, a)):
        d = q1 - q0
        lam = float(np.clip((p - q0) @ d / (d @ d), 0.0, 1.0))
        best = min(best, float(np.linalg.norm(q0 + lam * d - p)))
    return best


def _composite_ref_rule(tri_phys: np.ndarray, base: TriangleRule, levels: int):
    """Reference-coordinate composite rule, refined toward the origin.

    Recursively quadrisects the (reference) triangle and descends into the
    child whose physical image is closest to the origin; every other child
    carries the base rule.  Ratio 1/2 per level, no point at the origin.
    """
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts_out, wts_out = [], []

    def emit(sub_ref: np.ndarray):
        a, b, c = sub_ref
        J = np.stack([b - a, c - a], axis=1)
        area2 = abs(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])
        pts_out.append(a + base.points @ J.T)
        wts_out.append(base.weights * area2)

    def phys(sub_ref: np.ndarray) -> np.ndarray:
        a, b, c = tri_phys
        J = np.stack([b - a, c - a], axis=1)
        return a + sub_ref @ J.T

    def recurse(sub_ref: np.ndarray, level: int):
        if level == 0:
            emit(sub_ref)
            return
        a, b, c = sub_ref
        mab, mbc, mca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        children = [
            np.array([a, mab, mca]),
            np.array([mab, b, mbc]),
            np.array([mca, mbc, c]),
            np.array([mab, mbc, mca]),
        ]
        dists = [_dist_to_triangle(phys(ch)) for ch in children]
        keep = int(np.argmin(dists))
        for i, ch in enumerate(children):
            if i == keep:
                recurse(ch, level - 1)
            else:
                emit(ch)

    recurse(ref, levels)
    return np.concatenate(pts_out), np.concatenate(wts_out)


class ElementQuadrature:
    """Per-element quadrature over a mesh, flattened for vectorized assembly.

    Points are contiguous per element (``offsets[e]:offsets[e+1]``); elements
    with the shared base rule are listed in ``uniform_elems`` so assembly can
    batch them, the rest (near the corner) in ``refined_elems``.
    """

    def __init__(self, mesh, delta: float, degree: int = 6):
        if degree < 6:
            raise ValueError("base quadrature degree must be at least 6")
        base = gauss_triangle(degree)
        coords = mesh.triangle_coords()
        nt = len(coords)
        near = np.array([_dist_to_triangle(coords[e]) <= 2.0 * delta for e in range(nt)])

        ref_pts, wts, elem_ids, offsets = [], [], [], [0]
        for e in range(nt):
            if near[e]:
                p, w = _composite_ref_rule(coords[e], base, REFINE_LEVELS)
            else:
                p, w = base.points, base.weights
            ref_pts.append(p)
            wts.append(w)
            elem_ids.append(np.full(len(p), e))
            offsets.append(offsets[-1] + len(p))

        self.degree = degree
        self.base_rule = base
        self.mesh = mesh
        self.delta = float(delta)
        self.ref_points = np.concatenate(ref_pts)
        self.elem_of_point = np.concatenate(elem_ids)
        self.offsets = np.array(offsets)
        self.uniform_elems = np.nonzero(~near)[0]
        self.refined_elems = np.nonzero(near)[0]

        a = coords[:, 0]
        J = np.stack([coords[:, 1] - a, coords[:, 2] - a], axis=2)
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.jacobians = J
        self.detJ = detJ
        Jp = J[self.elem_of_point]
        self.phys_points = a[self.elem_of_point] + np.einsum(
            "pij,pj->pi", Jp, self.ref_points
        )
        # physical weights: reference weights sum to 1/2 per element
        self.weights = np.concatenate(wts) * np.abs(detJ)[self.elem_of_point]

    @property
    def num_points(self) -> int:
        return len(self.weights)


def build_quadrature(mesh, delta: float, degree: int = 6) -> ElementQuadrature:
    return ElementQuadrature(mesh, delta, degree)
