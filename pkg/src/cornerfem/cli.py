"""Command-line interface: mesh inspection, corner exponents, exact-solution
evaluation, single transient runs, convergence studies and parameter sweeps.

Configuration comes from an INI file (sections [domain], [scheme], [mesh],
[weights], [solver], [sweep], [output]) with command-line flags overriding.
Exit codes: 0 success, 2 configuration/validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import analysis
from .analysis import RunConfig, build_problem, convergence_csv, emit_reports, sweep
from .exact import solve_lambda
from .mesh import MeshError, barycentric_split, build_domain, mesh_report, save_mesh, triangulate
from .solver import SolverError
from .timestepping import run_transient


def parse_omega(text: str) -> float:
    """Angles like '3pi/2', '1.5pi', 'pi' or a plain radian value."""
    s = text.strip().lower().replace(" ", "")
    if "pi" in s:
        head, _, tail = s.partition("pi")
        num = float(head) if head not in ("", "+", "-") else float(head + "1")
        den = 1.0
        if tail:
            if not tail.startswith("/"):
                raise ValueError(f"cannot parse angle {text!r}")
            den = float(tail[1:])
        return num * math.pi / den
    return float(s)


def _floats(text: str):
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def load_config(path: str | None, args) -> RunConfig:
    cp = configparser.ConfigParser()
    if path:
        if not os.path.exists(path):
            raise ValueError(f"config file not found: {path}")
        cp.read(path)

    def get(section, key, default=None):
        return cp.get(section, key, fallback=default)

    kw = {}
    if get("domain", "kind"):
        kw["domain"] = get("domain", "kind")
    if get("domain", "omega"):
        kw["omega"] = parse_omega(get("domain", "omega"))
    if get("scheme", "id"):
        kw["scheme"] = int(get("scheme", "id"))
    if get("scheme", "gamma"):
        kw["gamma"] = float(get("scheme", "gamma"))
    if get("scheme", "dt"):
        kw["dt"] = float(get("scheme", "dt"))
    if get("scheme", "t"):
        kw["T"] = float(get("scheme", "t"))
    if get("mesh", "hs"):
        kw["hs"] = _floats(get("mesh", "hs"))
    if get("mesh", "degree"):
        kw["degree"] = int(get("mesh", "degree"))
    for key in ("nu", "nu_star", "mu_star", "delta"):
        if get("weights", key):
            kw[key] = float(get("weights", key))
    if get("weights", "regular"):
        kw["regular"] = get("weights", "regular")
    if get("solver", "tol"):
        kw["tol"] = float(get("solver", "tol"))
    if get("output", "dir"):
        kw["output_dir"] = get("output", "dir")
    if get("output", "cache"):
        kw["cache_dir"] = get("output", "cache")

    # flag overrides
    for attr, key in (
        ("domain", "domain"),
        ("scheme", "scheme"),
        ("dt", "dt"),
        ("final_time", "T"),
        ("nu", "nu"),
        ("nu_star", "nu_star"),
        ("mu_star", "mu_star"),
        ("delta", "delta"),
        ("tol", "tol"),
        ("degree", "degree"),
        ("output_dir", "output_dir"),
        ("cache_dir", "cache_dir"),
    ):
        v = getattr(args, attr, None)
        if v is not None:
            kw[key] = v
    if getattr(args, "omega", None) is not None:
        kw["omega"] = parse_omega(args.omega)
    if getattr(args, "hs", None) is not None:
        kw["hs"] = _floats(args.hs)

    cfg = RunConfig(**kw)
    if cfg.nu_star and "mu_star" not in kw:
        cfg = replace(cfg, mu_star=cfg.nu_star)
    return cfg


def _sweep_grid(path: str | None):
    cp = configparser.ConfigParser()
    if path:
        cp.read(path)
    nus = _floats(cp.get("sweep", "nu", fallback="0.6,1.0,1.4"))
    nss = _floats(cp.get("sweep", "nu_star", fallback="0.6,1.0,1.4"))
    ds = _floats(cp.get("sweep", "delta", fallback="0.025,0.03,0.035"))
    hs = _floats(cp.get("sweep", "hs", fallback="0.1,0.05"))
    return nus, nss, ds, hs


def _add_common(p):
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--domain", help="domain kind (omega0..omega3)")
    p.add_argument("--omega", help="corner angle, e.g. 3pi/2")
    p.add_argument("--scheme", type=int, choices=(1, 2))
    p.add_argument("--dt", type=float)
    p.add_argument("--final-time", dest="final_time", type=float)
    p.add_argument("--hs", help="comma-separated mesh sizes")
    p.add_argument("--nu", type=float)
    p.add_argument("--nu-star", dest="nu_star", type=float)
    p.add_argument("--mu-star", dest="mu_star", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--degree", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--cache-dir", dest="cache_dir")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="cornerfem",
        description="Weighted finite elements for flows in domains with one "
        "re-entrant corner.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build a mesh and print its report")
    _add_common(p)
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--split", action="store_true", help="apply the barycentric split")
    p.add_argument("--out", help="write the mesh to this path")

    p = sub.add_parser("lambda", help="corner singularity exponent")
    p.add_argument("--omega", required=True)

    p = sub.add_parser("exact-eval", help="evaluate the exact solution")
    _add_common(p)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--t", type=float, default=0.0)

    for name, help_ in (
        ("solve", "one transient run"),
        ("convergence", "mesh-refinement study"),
        ("sweep", "parameter sweep over (nu, nu*, delta)"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1)
    return ap


def cmd_mesh(args) -> int:
    cfg = load_config(args.config, args)
    domain = build_domain(cfg.domain, omega=cfg.omega)
    mesh = triangulate(domain, args.h)
    if args.split:
        mesh = barycentric_split(mesh)
    print(mesh_report(mesh))
    if args.out:
        save_mesh(mesh, args.out)
        print(f"written: {args.out}")
    return 0


def cmd_lambda(args) -> int:
    omega = parse_omega(args.omega)
    ce = solve_lambda(omega)
    print(f"{ce.lam:.4f}")
    return 0


def cmd_exact_eval(args) -> int:
    cfg = load_config(args.config, args)
    _, problem = build_problem(cfg)
    pt = np.array([[args.x, args.y]])
    u = problem.velocity(pt, args.t)[0]
    p = problem.pressure(pt, args.t)[0]
    f = problem.forcing(pt, args.t)[0]
    print(f"velocity: {u[0]:.12g} {u[1]:.12g}")
    print(f"pressure: {p:.12g}")
    print(f"forcing:  {f[0]:.12g} {f[1]:.12g}")
    return 0


def cmd_solve(args) -> int:
    cfg = load_config(args.config, args)
    domain, problem = build_problem(cfg)
    mesh = barycentric_split(triangulate(domain, cfg.hs[0]))
    res = run_transient(
        cfg.scheme_config(), problem, mesh, cfg.weights(), tol=cfg.tol, degree=cfg.degree
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = os.path.join(cfg.output_dir, "run.csv")
    res.write_csv(out)
    rep = analysis.compute_errors(res)
    print(f"final W1_nu velocity error: {rep.final:.6e}")
    print(f"final L2_nu pressure error: {rep.final_pressure:.6e}")
    print(f"written: {out}")
    return 0


def cmd_convergence(args) -> int:
    cfg = load_config(args.config, args)
    records = analysis.run_single(cfg)
    errs = [r[-1, 2] for r in records]
    csv = convergence_csv(cfg.hs, errs)
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = os.path.join(cfg.output_dir, "convergence.csv")
    with open(out, "w") as fh:
        fh.write(csv)
    print(csv, end="")
    print(f"written: {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args)
    nus, nss, ds, hs = _sweep_grid(args.config)
    cfg = replace(cfg, hs=hs)
    region = sweep(cfg, nus, nss, ds, jobs=args.jobs)
    paths = emit_reports(region, cfg.output_dir)
    nmem = int(region.members.sum())
    print(f"grid points: {len(region.points)}, members: {nmem}, "
          f"failures: {len(region.failures)}")
    for pth in paths:
        print(f"written: {pth}")
    return 0


COMMANDS = {
    "mesh": cmd_mesh,
    "lambda": cmd_lambda,
    "exact-eval": cmd_exact_eval,
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return COMMANDS[args.command](args)
    except (ValueError, MeshError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
