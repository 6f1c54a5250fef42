"""Convergence studies and the (nu, nu*, delta) parameter sweep.

A sweep point runs the full transient study on every mesh level; its errors
are compared against the pointwise minimum over the whole grid, and the point
belongs to the optimal region when its error stays within 5 % of that minimum
at every mesh level and every recorded time checkpoint.  Results are cached
by a hash of the canonicalized configuration, so reruns and reordered
parallel execution give byte-identical reports.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .exact import ClosedFormSolution, ExactCornerSolution
from .fem import OseenAssembler, build_dofmap
from .mesh import DomainSpec, barycentric_split, build_domain, triangulate
from .timestepping import (
    RECORD_COLUMNS,
    SchemeConfig,
    TimeState,
    TransientResult,
    run_transient,
    step_errors,
)
from .weights import WeightParams

NUM_CHECKPOINTS = 5
DEFAULT_HS = (0.025, 0.0125, 0.00625)  # h_j = 2^{1-j} * 0.025


# ---------------------------------------------------------------------------
# error reports and orders
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorReport:
    """Per-step weighted errors of one transient run plus aggregates."""

    times: np.ndarray
    velocity_errors: np.ndarray  # W^1_{2,nu}
    pressure_errors: np.ndarray  # L_{2,nu}

    def __post_init__(self):
        if np.any(self.velocity_errors < 0) or np.any(self.pressure_errors < 0):
            raise ValueError("errors must be nonnegative")

    @property
    def final(self) -> float:
        return float(self.velocity_errors[-1])

    @property
    def max(self) -> float:
        return float(self.velocity_errors.max())

    @property
    def final_pressure(self) -> float:
        return float(self.pressure_errors[-1])

    def checkpoints(self, k: int = NUM_CHECKPOINTS) -> np.ndarray:
        """Velocity errors at k uniformly spaced times, the last being T."""
        n = len(self.times)
        idx = np.unique(np.round(np.arange(1, k + 1) * n / k).astype(int) - 1)
        return self.velocity_errors[idx]


def compute_errors(result: TransientResult) -> ErrorReport:
    r = result.records
    return ErrorReport(r[:, 1].copy(), r[:, 2].copy(), r[:, 3].copy())


def discrete_errors(solution, problem, asm: OseenAssembler):
    """(velocity W^1_{2,nu}, pressure L_{2,nu}) errors of one snapshot."""
    state = TimeState(
        np.asarray(solution.vhat).ravel(), None, solution.qhat, t=solution.t
    )
    return step_errors(state, problem, asm)


def convergence_order(errors, hs=None):
    """Pairwise orders log2(e_j/e_{j+1}) and the least-squares slope.

    Levels are assumed to halve unless explicit h values are given.
    """
    e = np.asarray(errors, dtype=float)
    if np.any(e <= 0):
        raise ValueError("errors must be positive")
    if len(e) < 2:
        raise ValueError("need at least two levels")
    if hs is None:
        hs = [2.0**-j for j in range(len(e))]
    h = np.asarray(hs, dtype=float)
    pairwise = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    slope = float(np.polyfit(np.log(h), np.log(e), 1)[0])
    return pairwise, slope


def region_membership(errors: np.ndarray, rtol: float = 0.05) -> np.ndarray:
    """5 % rule over an (npoints, nlevels, ncheckpoints) error table.

    A point is a member when its error is within (1+rtol) of the pointwise
    minimum over all points, for EVERY level and checkpoint.  Failed points
    carry nan and are never members.
    """
    e = np.asarray(errors, dtype=float)
    if e.ndim != 3:
        raise ValueError("errors must have shape (npoints, nlevels, ncheckpoints)")
    if rtol < 0:
        raise ValueError("rtol must be nonnegative")
    best = np.nanmin(e, axis=0)
    with np.errstate(invalid="ignore"):
        ok = e <= (1.0 + rtol) * best[None]
    ok &= np.isfinite(e)
    return np.all(ok, axis=(1, 2))


# ---------------------------------------------------------------------------
# run configuration and caching
# ---------------------------------------------------------------------------

CACHE_ENV = "CORNERFEM_CACHE"


@dataclass(frozen=True)
class RunConfig:
    """Everything defining one transient convergence study."""

    domain: str = "omega1"
    omega: float | None = None
    scheme: int = 1
    gamma: float | None = None
    dt: float = 0.01
    T: float = 0.1
    hs: tuple = DEFAULT_HS
    nu: float = 0.0
    nu_star: float = 0.0
    mu_star: float = 0.0
    delta: float = 0.03
    regular: str = "zero"
    degree: int = 6
    tol: float = 1e-10
    output_dir: str = "."
    cache_dir: str | None = None

    def __post_init__(self):
        for i in range(1, len(self.hs)):
            if abs(self.hs[i - 1] / self.hs[i] - 2.0) > 1e-12:
                raise ValueError("mesh sizes must halve exactly")

    def weights(self) -> WeightParams:
        return WeightParams(self.nu, self.nu_star, self.mu_star, self.delta)

    def scheme_config(self) -> SchemeConfig:
        if self.gamma is None:
            return SchemeConfig(self.scheme, self.dt, self.T)
        return SchemeConfig(self.scheme, self.dt, self.T, self.gamma)

    def canonical(self) -> dict:
        d = {
            "domain": self.domain,
            "omega": self.omega,
            "scheme": self.scheme,
            "gamma": self.gamma,
            "dt": self.dt,
            "T": self.T,
            "hs": list(self.hs),
            "nu": self.nu,
            "nu_star": self.nu_star,
            "mu_star": self.mu_star,
            "delta": self.delta,
            "regular": self.regular,
            "degree": self.degree,
            "tol": self.tol,
        }
        return d

    def hash_key(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def resolve_cache_dir(self) -> str | None:
        return self.cache_dir or os.environ.get(CACHE_ENV)


def build_problem(cfg: RunConfig):
    domain = build_domain(cfg.domain, omega=cfg.omega)
    if domain.omega > math.pi:
        problem = ExactCornerSolution(domain.omega, regular=cfg.regular)
    else:
        problem = ClosedFormSolution(
            "exp(t)*sin(x1)*cos(x2)", "-exp(t)*cos(x1)*sin(x2)", "exp(t)*(x1 + x2)"
        )
    return domain, problem


def _atomic_write(path: str, data: bytes):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_single(cfg: RunConfig):
    """Run (or fetch from cache) the transient study at every mesh size.

    Returns a list of per-level record arrays in RECORD_COLUMNS layout.
    """
    cache = cfg.resolve_cache_dir()
    key = cfg.hash_key()
    if cache:
        path = os.path.join(cache, key + ".npz")
        if os.path.exists(path):
            with np.load(path) as z:
                return [z[f"level_{j}"] for j in range(len(cfg.hs))]

    domain, problem = build_problem(cfg)
    scheme = cfg.scheme_config()
    params = cfg.weights()
    records = []
    for h in cfg.hs:
        mesh = barycentric_split(triangulate(domain, h))
        res = run_transient(
            scheme, problem, mesh, params, tol=cfg.tol, degree=cfg.degree
        )
        records.append(res.records)

    if cache:
        import io

        buf = io.BytesIO()
        np.savez(buf, **{f"level_{j}": r for j, r in enumerate(records)})
        _atomic_write(os.path.join(cache, key + ".npz"), buf.getvalue())
    return records


# ---------------------------------------------------------------------------
# the parameter sweep
# ---------------------------------------------------------------------------

SWEEP_NU = (0.6, 1.0, 1.4)
SWEEP_NU_STAR = (0.6, 1.0, 1.4)
SWEEP_DELTA = (0.025, 0.03, 0.035)
SWEEP_HS = (0.1, 0.05)


@dataclass
class RegionMap:
    """Sweep results over the (nu, nu*, delta) grid."""

    points: list  # (nu, nu_star, delta)
    hs: tuple
    err_final: np.ndarray  # (npoints, nlevels)
    err_max: np.ndarray
    checkpoint_errors: np.ndarray  # (npoints, nlevels, ncheckpoints)
    orders: np.ndarray  # (npoints,) least-squares slope, nan on failure
    members: np.ndarray  # (npoints,) bool
    failures: dict = field(default_factory=dict)  # point index -> message


def _sweep_point(args):
    cfg, point = args
    nu, nu_star, delta = point
    pcfg = replace(cfg, nu=nu, nu_star=nu_star, mu_star=nu_star, delta=delta)
    return run_single(pcfg)


def sweep(
    cfg: RunConfig,
    nus=SWEEP_NU,
    nu_stars=SWEEP_NU_STAR,
    deltas=SWEEP_DELTA,
    jobs: int = 1,
) -> RegionMap:
    """Run the grid study; results are merged in canonical grid order so the
    outcome is independent of scheduling.  Failed points are recorded and
    excluded from the region."""
    points = [
        (nu, ns, d) for nu in nus for ns in nu_stars for d in deltas
    ]
    tasks = [(cfg, p) for p in points]
    results = [None] * len(points)
    failures = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = list(pool.map(_sweep_point_safe, tasks))
        for i, (rec, err) in enumerate(futs):
            results[i] = rec
            if err:
                failures[i] = err
    else:
        for i, task in enumerate(tasks):
            rec, err = _sweep_point_safe(task)
            results[i] = rec
            if err:
                failures[i] = err

    nl = len(cfg.hs)
    npts = len(points)
    err_final = np.full((npts, nl), np.nan)
    err_max = np.full((npts, nl), np.nan)
    cps = np.full((npts, nl, NUM_CHECKPOINTS), np.nan)
    orders = np.full(npts, np.nan)
    for i, rec in enumerate(results):
        if rec is None:
            continue
        for j, r in enumerate(rec):
            rep = ErrorReport(r[:, 1], r[:, 2], r[:, 3])
            err_final[i, j] = rep.final
            err_max[i, j] = rep.max
            c = rep.checkpoints()
            cps[i, j, : len(c)] = c
            cps[i, j, len(c):] = c[-1]
        if np.all(err_final[i] > 0):
            orders[i] = convergence_order(err_final[i], cfg.hs)[1]
    members = region_membership(cps)
    return RegionMap(points, cfg.hs, err_final, err_max, cps, orders, members, failures)


def _sweep_point_safe(args):
    try:
        return _sweep_point(args), None
    except Exception as exc:  # per-point failure: record, keep sweeping
        return None, f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return "%.17g" % x


def sweep_csv(region: RegionMap) -> str:
    lines = ["nu,nu_star,delta,h,err_final,err_max,order,member"]
    for i, (nu, ns, d) in enumerate(region.points):
        for j, h in enumerate(region.hs):
            lines.append(
                ",".join(
                    [
                        _fmt(nu),
                        _fmt(ns),
                        _fmt(d),
                        _fmt(h),
                        _fmt(region.err_final[i, j]),
                        _fmt(region.err_max[i, j]),
                        _fmt(region.orders[i]),
                        str(int(region.members[i])),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


def convergence_csv(hs, errors) -> str:
    lines = ["h,err,order"]
    e = np.asarray(errors, dtype=float)
    pairwise, _ = convergence_order(e, hs)
    for j, h in enumerate(hs):
        o = "nan" if j == 0 else _fmt(pairwise[j - 1])
        lines.append(",".join([_fmt(h), _fmt(e[j]), o]))
    return "\n".join(lines) + "\n"


def region_svg(region: RegionMap, delta: float) -> str:
    """Hand-built SVG heatmap of final errors over (nu, nu*) at one delta.

    Cells shade with log-error (darker = larger); members get a green frame.
    Byte-stable for identical inputs.
    """
    idx = [i for i, p in enumerate(region.points) if p[2] == delta]
    nus = sorted({region.points[i][0] for i in idx})
    nss = sorted({region.points[i][1] for i in idx})
    cell, m = 60, 50
    wdt = m + cell * max(len(nus), 1) + 20
    hgt = m + cell * max(len(nss), 1) + 20
    vals = {
        (region.points[i][0], region.points[i][1]): region.err_final[i, -1]
        for i in idx
    }
    finite = [v for v in vals.values() if np.isfinite(v) and v > 0]
    lo = min(finite) if finite else 1.0
    hi = max(finite) if finite else 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{wdt}" height="{hgt}">',
        f'<text x="{m}" y="14" font-size="12">delta={_fmt(delta)} '
        f"(x: nu, y: nu*)</text>",
    ]
    member_set = {
        (region.points[i][0], region.points[i][1])
        for i in idx
        if region.members[i]
    }
    for a, nu in enumerate(nus):
        for b, ns in enumerate(nss):
            v = vals.get((nu, ns), np.nan)
            if np.isfinite(v) and v > 0:
                frac = 0.0 if hi == lo else (math.log(v) - math.log(lo)) / (
                    math.log(hi) - math.log(lo)
                )
                shade = int(round(235 - 175 * frac))
                fill = f"rgb({shade},{shade},255)"
            else:
                fill = "rgb(200,200,200)"
            x = m + a * cell
            y = m + (len(nss) - 1 - b) * cell
            stroke = "#0a0" if (nu, ns) in member_set else "#444"
            swidth = 4 if (nu, ns) in member_set else 1
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{fill}" stroke="{stroke}" stroke-width="{swidth}"/>'
            )
    for a, nu in enumerate(nus):
        parts.append(
            f'<text x="{m + a * cell + cell // 2}" y="{hgt - 4}" '
            f'font-size="11" text-anchor="middle">{nu:g}</text>'
        )
    for b, ns in enumerate(nss):
        parts.append(
            f'<text x="{m - 6}" y="{m + (len(nss) - 1 - b) * cell + cell // 2}" '
            f'font-size="11" text-anchor="end">{ns:g}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_reports(region: RegionMap, out_dir: str) -> list:
    """Write the sweep CSV and one SVG heatmap per delta; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, "sweep.csv")
    _atomic_write(p, sweep_csv(region).encode())
    paths.append(p)
    for d in sorted({pt[2] for pt in region.points}):
        p = os.path.join(out_dir, "region_delta_%s.svg" % ("%g" % d).replace(".", "p"))
        _atomic_write(p, region_svg(region, d).encode())
        paths.append(p)
    return paths
