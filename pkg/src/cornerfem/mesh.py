"""Polygonal domains with one re-entrant corner and their triangulations.

The domain family lives on the reference geometry used throughout the
experiments: the rectangle (-1,1)x(0,1) optionally extended below the x1-axis
by a wedge opening the interior angle at the origin from pi up to 3*pi/2.
Meshes are structured (block-wise subdivision of a few macro triangles), so
boundaries are exact, element quality is uniform, and vertex numbering is
reproducible bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

_MIN_ANGLE_DEG = 20.0
_MAX_DIAM_RATIO = 3.0


class MeshError(ValueError):
    """Invalid domain/mesh input or unreachable quality target."""


@dataclass(frozen=True)
class DomainSpec:
    """Simple polygon with the corner vertex at the origin.

    vertices are counterclockwise; ``corner_index`` points at the origin and
    ``omega`` is the interior angle there (pi for the convex control domain).
    """

    name: str
    vertices: np.ndarray
    omega: float
    corner_index: int = 0

    def area(self) -> float:
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def edges(self) -> np.ndarray:
        m = len(self.vertices)
        return np.stack([self.vertices, np.roll(self.vertices, -1, axis=0)], axis=1).reshape(m, 2, 2)

    def shortest_edge(self) -> float:
        e = self.edges()
        return float(np.min(np.linalg.norm(e[:, 1] - e[:, 0], axis=1)))

    def corner_angle(self) -> float:
        """Interior angle at the origin, measured from the adjacent edges."""
        v = self.vertices
        i = self.corner_index
        nxt = v[(i + 1) % len(v)] - v[i]
        prv = v[i - 1] - v[i]
        a = math.atan2(nxt[1], nxt[0]) % (2 * math.pi)
        b = math.atan2(prv[1], prv[0]) % (2 * math.pi)
        return (b - a) % (2 * math.pi)


@dataclass
class Mesh:
    """Conforming triangulation; optionally carrying its barycentric split map.

    ``macro_children[i]`` lists the 3 children of macro triangle i once
    :func:`barycentric_split` has been applied.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    h: float
    is_split: bool = False
    macro_children: np.ndarray | None = None

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangle_coords(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.triangle_coords()
        d1 = c[:, 1] - c[:, 0]
        d2 = c[:, 2] - c[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self) -> np.ndarray:
        c = self.triangle_coords()
        e = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1)
        return np.max(np.linalg.norm(e, axis=2), axis=1)

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle of each triangle, in radians."""
        c = self.triangle_coords()
        ang = np.empty((len(c), 3))
        for k in range(3):
            a = c[:, (k + 1) % 3] - c[:, k]
            b = c[:, (k + 2) % 3] - c[:, k]
            cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
            dot = np.sum(a * b, axis=1)
            ang[:, k] = np.abs(np.arctan2(cross, dot))
        return np.min(ang, axis=1)


_KINDS = ("omega0", "omega1", "omega2", "omega3")


def _wedge_polygon(omega: float) -> list[tuple[float, float]]:
    """Extra boundary vertices below y=0 for an interior angle omega > pi."""
    if omega <= 1.25 * math.pi + 1e-14:
        t = math.tan(omega - math.pi)
        return [(-1.0, -t)]
    xe = -1.0 / math.tan(omega - math.pi)
    if abs(xe) < 1e-14:
        xe = 0.0
    return [(-1.0, -1.0), (xe, -1.0)]


def build_domain(kind: str | None = None, omega: float | None = None) -> DomainSpec:
    """Construct one of the reference domains, or a generic corner domain.

    Either a named ``kind`` in {omega0, omega1, omega2, omega3} or an explicit
    corner angle ``omega`` in (pi, 3*pi/2] must be given.  omega3 uses the
    exact angle 9*pi/8 (sloped edge to (-1, -tan(pi/8))).
    """
    if (kind is None) == (omega is None):
        raise MeshError("give exactly one of kind or omega")
    if kind is not None:
        k = kind.lower().replace("_", "")
        if k not in _KINDS:
            raise MeshError(f"unknown domain kind {kind!r}; expected one of {_KINDS}")
        if k == "omega0":
            verts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)]
            return DomainSpec(k, np.array(verts), math.pi)
        omega = (1.0 + 0.5 ** int(k[-1])) * math.pi
        name = k
    else:
        if not math.pi < omega < 2 * math.pi:
            raise MeshError(f"corner angle must lie in (pi, 2*pi); got {omega}")
        if omega > 1.5 * math.pi + 1e-12:
            raise MeshError(
                "angles beyond 3*pi/2 are outside the supported domain family"
            )
        name = f"corner_{omega:.6f}"
    verts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (-1.0, 1.0)] + _wedge_polygon(omega)
    spec = DomainSpec(name, np.array(verts), float(omega))
    assert abs(spec.corner_angle() - spec.omega) < 1e-12
    return spec


def _macro_triangles(domain: DomainSpec) -> list[np.ndarray]:
    """Block decomposition into macro triangles with matched unit-length legs."""
    squares = [((-1.0, 0.0), (0.0, 1.0)), ((0.0, 1.0), (0.0, 1.0))]
    tris: list[list[tuple[float, float]]] = []
    for (x0, x1), (y0, y1) in squares:
        ll, lr, ur, ul = (x0, y0), (x1, y0), (x1, y1), (x0, y1)
        tris.append([ll, lr, ur])
        tris.append([ll, ur, ul])
    om = domain.omega
    if om > math.pi + 1e-14:
        if om <= 1.25 * math.pi + 1e-14:
            tris.append([(0.0, 0.0), (-1.0, -math.tan(om - math.pi)), (-1.0, 0.0)])
        else:
            tris.append([(0.0, 0.0), (-1.0, -1.0), (-1.0, 0.0)])
            xe = _wedge_polygon(om)[-1][0]
            tris.append([(0.0, 0.0), (xe, -1.0), (-1.0, -1.0)])
    out = []
    for t in tris:
        a = np.array(t)
        d1, d2 = a[1] - a[0], a[2] - a[0]
        if d1[0] * d2[1] - d1[1] * d2[0] < 0:
            a = a[[0, 2, 1]]
        out.append(a)
    return out


def _subdivide(tri: np.ndarray, n: int):
    """Uniform subdivision of a macro triangle into n^2 similar triangles."""
    a, b, c = tri
    pts = []
    index = {}
    for i in range(n + 1):
        for j in range(n + 1 - i):
            index[(i, j)] = len(pts)
            pts.append(a + (i / n) * (b - a) + (j / n) * (c - a))
    tris = []
    for i in range(n):
        for j in range(n - i):
            tris.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            if i + j < n - 1:
                tris.append((index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]))
    return np.array(pts), np.array(tris)


def _point_key(p: np.ndarray) -> tuple[float, float]:
    return (round(float(p[0]), 10) + 0.0, round(float(p[1]), 10) + 0.0)


def triangulate(domain: DomainSpec, h: float) -> Mesh:
    """Quasi-uniform conforming triangulation with target element size h.

    All polygon edges are represented exactly; element diameters land in
    [h/2, 2h] and the mesh is identical bit-for-bit across runs.
    """
    if h <= 0:
        raise MeshError("h must be positive")
    if h > domain.shortest_edge() + 1e-12:
        raise MeshError(f"h={h} exceeds shortest polygon edge {domain.shortest_edge()}")
    n = max(1, math.ceil(1.0 / h - 1e-12))

    coords: list[np.ndarray] = []
    key_to_id: dict[tuple[float, float], int] = {}
    tri_rows = []
    for macro in _macro_triangles(domain):
        pts, tris = _subdivide(macro, n)
        gids = np.empty(len(pts), dtype=np.int64)
        for i, p in enumerate(pts):
            k = _point_key(p)
            if k not in key_to_id:
                key_to_id[k] = len(coords)
                coords.append(p)
            gids[i] = key_to_id[k]
        tri_rows.append(gids[tris])
    vertices = np.array(coords)
    triangles = np.concatenate(tri_rows, axis=0)

    # canonical numbering: vertices lexicographic, triangles sorted by indices
    order = np.lexsort((vertices[:, 1], vertices[:, 0]))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    vertices = vertices[order]
    triangles = rank[triangles]
    roll = np.argmin(triangles, axis=1)
    triangles = np.take_along_axis(
        triangles, (roll[:, None] + np.arange(3)[None, :]) % 3, axis=1
    )
    triangles = triangles[np.lexsort(triangles.T[::-1])]

    mesh = Mesh(vertices, triangles, _boundary_edges(triangles), float(h))
    _check_quality(mesh, domain, h)
    return mesh


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    if counts.max() > 2:
        raise MeshError("non-conforming mesh: edge shared by more than two triangles")
    return uniq[counts == 1]


def _check_quality(mesh: Mesh, domain: DomainSpec, h: float) -> None:
    areas = mesh.areas()
    if np.any(areas <= 0):
        raise MeshError("degenerate (non-positive area) element produced")
    if abs(areas.sum() - domain.area()) > 1e-10 * domain.area():
        raise MeshError("triangulation does not cover the polygon area")
    d = mesh.diameters()
    if d.max() / d.min() > _MAX_DIAM_RATIO:
        raise MeshError(f"diameter ratio {d.max() / d.min():.3f} exceeds {_MAX_DIAM_RATIO}")
    if np.any(d > 2 * h + 1e-12) or np.any(d < 0.5 * h - 1e-12):
        raise MeshError(f"element diameters [{d.min():.4g}, {d.max():.4g}] leave [h/2, 2h]")
    ang = np.degrees(mesh.min_angles())
    if ang.min() < _MIN_ANGLE_DEG - 1e-9:
        worst = int(np.argmin(ang))
        raise MeshError(
            f"min interior angle {ang.min():.2f} deg < {_MIN_ANGLE_DEG} deg "
            f"(element {worst}: {mesh.triangle_coords()[worst].tolist()})"
        )
    # boundary edges must lie on the polygon boundary
    edges = domain.edges()
    for a, b in mesh.vertices[mesh.boundary_edges]:
        if not (_on_polygon(a, edges) and _on_polygon(b, edges) and _on_polygon(0.5 * (a + b), edges)):
            raise MeshError(f"boundary edge ({a}, {b}) leaves the polygon boundary")


def _on_polygon(p: np.ndarray, edges: np.ndarray, tol: float = 1e-12) -> bool:
    for a, b in edges:
        d = b - a
        L2 = float(d @ d)
        s = float(np.clip((p - a) @ d / L2, 0.0, 1.0))
        if np.linalg.norm(a + s * d - p) <= tol * max(1.0, math.sqrt(L2)):
            return True
    return False


def barycentric_split(mesh: Mesh) -> Mesh:
    """Split every triangle into 3 at its centroid (Alfeld split).

    Applies exactly once per mesh; the result carries the macro->children map.
    """
    if mesh.is_split:
        raise MeshError("mesh is already barycentrically split")
    nt = mesh.num_triangles
    centroids = mesh.triangle_coords().mean(axis=1)
    cid = mesh.num_vertices + np.arange(nt)
    t = mesh.triangles
    children = np.empty((3 * nt, 3), dtype=t.dtype)
    children[0::3] = np.column_stack([t[:, 0], t[:, 1], cid])
    children[1::3] = np.column_stack([t[:, 1], t[:, 2], cid])
    children[2::3] = np.column_stack([t[:, 2], t[:, 0], cid])
    macro_children = np.arange(3 * nt).reshape(nt, 3)
    return Mesh(
        np.vstack([mesh.vertices, centroids]),
        children,
        mesh.boundary_edges.copy(),
        mesh.h,
        is_split=True,
        macro_children=macro_children,
    )


def mesh_report(mesh: Mesh) -> dict:
    """Deterministic quality summary for logs and CSV."""
    d = mesh.diameters()
    return {
        "num_vertices": mesh.num_vertices,
        "num_triangles": mesh.num_triangles,
        "num_boundary_edges": len(mesh.boundary_edges),
        "h_min": float(d.min()),
        "h_max": float(d.max()),
        "min_angle_deg": float(np.degrees(mesh.min_angles().min())),
        "area": float(mesh.areas().sum()),
        "is_split": mesh.is_split,
    }


def save_mesh(mesh: Mesh, path) -> None:
    """Plain-text export: header 'nv nt nb', vertices, triangles, boundary edges.

    The split flag and macro map are not serialized; re-split after loading.
    """
    lines = [f"{mesh.num_vertices} {mesh.num_triangles} {len(mesh.boundary_edges)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    lines += [f"{a} {b}" for a, b in mesh.boundary_edges]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_mesh(path, h: float = 0.0) -> Mesh:
    with open(path) as f:
        tokens = f.read().split("\n")
    nv, nt, nb = (int(s) for s in tokens[0].split())
    verts = np.array([[float(v) for v in line.split()] for line in tokens[1 : 1 + nv]])
    tris = np.array(
        [[int(v) for v in line.split()] for line in tokens[1 + nv : 1 + nv + nt]]
    )
    bnd = np.array(
        [[int(v) for v in line.split()] for line in tokens[1 + nv + nt : 1 + nv + nt + nb]]
    )
    return Mesh(verts, tris, bnd.reshape(nb, 2), float(h))
