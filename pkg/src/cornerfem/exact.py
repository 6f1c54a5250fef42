"""Closed-form exact solutions: corner-singular fields and smooth test fields.

The corner family behaves like r^lambda near the origin, where lambda is the
smallest positive root of sin(lambda*omega) + lambda*sin(omega) = 0.  The
velocity is the curl of the stream function r^(1+lambda) * Xi(theta), so it is
divergence-free by construction and, paired with the pressure
r^(lambda-1) * gamma(theta), satisfies the stationary Stokes balance exactly;
the time dependence is a separable factor e^t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy
from scipy.optimize import brentq


@dataclass(frozen=True)
class CornerExponent:
    omega: float
    lam: float
    residual: float


def _exponent_eq(lam: float, omega: float) -> float:
    return math.sin(lam * omega) + lam * math.sin(omega)


def solve_lambda(omega: float) -> CornerExponent:
    """Smallest positive root of sin(lam*omega) + lam*sin(omega) = 0.

    Bracket scan over (0, 1.0001] in steps of 0.01, then bisection.
    """
    if not 0.0 < omega <= 2.0 * math.pi:
        raise ValueError("omega must lie in (0, 2*pi]")
    lo = 1e-6
    step = 0.01
    flo = _exponent_eq(lo, omega)
    lam = None
    while lo < 1.0001:
        hi = min(lo + step, 1.0001)
        fhi = _exponent_eq(hi, omega)
        if flo == 0.0:
            lam = lo
            break
        if flo * fhi < 0:
            lam = brentq(_exponent_eq, lo, hi, args=(omega,), xtol=1e-15, rtol=1e-15)
            break
        if fhi == 0.0:
            lam = hi
            break
        lo, flo = hi, fhi
    if lam is None:
        raise ValueError(f"no corner exponent found in (0, 1.0001] for omega={omega}")
    return CornerExponent(float(omega), float(lam), abs(_exponent_eq(lam, omega)))


def xi_profiles(lam: float, omega: float, theta) -> tuple:
    """(Xi, Xi', Xi'', Xi''') of the angular eigenprofile at theta."""
    f = _angular_functions(lam, omega)
    th = np.asarray(theta, dtype=float)
    return tuple(f[k](th) for k in ("xi", "xi1", "xi2", "xi3"))


@lru_cache(maxsize=32)
def _angular_functions(lam: float, omega: float):
    """Lambdified angular profiles and the derivatives the field needs."""
    th = sympy.symbols("theta")
    L = sympy.Float(lam, 30)
    W = sympy.Float(omega, 30)
    # coefficient enforcing no slip at theta = omega: solving the 2x2 system
    # Xi(omega) = Xi'(omega) = 0 for the two admissible modes gives
    # (cos w - cos(lam w)) / sin w, which reduces to cos(lam w) at w = 3pi/2
    coef = (sympy.cos(W) - sympy.cos(L * W)) / sympy.sin(W)
    xi = (
        (sympy.sin((1 + L) * th) / (1 + L) - sympy.sin((1 - L) * th) / (1 - L)) * coef
        + sympy.cos((1 - L) * th)
        - sympy.cos((1 + L) * th)
    )
    chi1 = sympy.cos(th) * xi.diff(th) + (1 + L) * sympy.sin(th) * xi
    # stream-function form, divergence-free companion of chi1
    chi2 = -(1 + L) * sympy.cos(th) * xi + sympy.sin(th) * xi.diff(th)
    gam = (xi.diff(th, 3) + (1 + L) ** 2 * xi.diff(th)) / (L - 1)
    exprs = {
        "xi": xi,
        "xi1": xi.diff(th),
        "xi2": xi.diff(th, 2),
        "xi3": xi.diff(th, 3),
        "chi1": chi1,
        "chi1p": chi1.diff(th),
        "chi1pp": chi1.diff(th, 2),
        "chi2": chi2,
        "chi2p": chi2.diff(th),
        "chi2pp": chi2.diff(th, 2),
        "gam": gam,
        "gamp": gam.diff(th),
    }
    return {k: sympy.lambdify(th, sympy.simplify(v), "numpy") for k, v in exprs.items()}


def _polar(points: np.ndarray):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.hypot(p[:, 0], p[:, 1])
    th = np.arctan2(p[:, 1], p[:, 0]) % (2.0 * math.pi)
    return r, th


def _radial_value(r, a, f):
    return r**a * f


def _radial_grad(r, th, a, f, fp):
    """Cartesian gradient of r^a f(theta)."""
    c, s = np.cos(th), np.sin(th)
    ra = r ** (a - 1.0)
    return np.stack([ra * (a * f * c - fp * s), ra * (a * f * s + fp * c)], axis=1)


class ExactCornerSolution:
    """Manufactured corner-singular solution u = e^t (r^lam chi + psi), with
    pressure e^t r^(lam-1) gamma(theta).

    ``regular`` selects the smooth additive part: "zero" or the
    divergence-free trigonometric pair (sin x1 cos x2, -cos x1 sin x2).
    Derivative evaluations reject the origin, where the singular fields are
    not differentiable (the pressure is unbounded there).
    """

    def __init__(self, omega: float, regular: str = "zero"):
        if regular not in ("zero", "trig"):
            raise ValueError("regular must be 'zero' or 'trig'")
        self.exponent = solve_lambda(omega)
        self.omega = float(omega)
        self.lam = self.exponent.lam
        self.regular = regular
        self._f = _angular_functions(self.lam, self.omega)

    # -- singular part, polar calculus ----------------------------------
    def _check_not_origin(self, r):
        if np.any(r == 0.0):
            raise ValueError("derivative/pressure evaluation at the origin")

    def velocity(self, points, t=0.0) -> np.ndarray:
        r, th = _polar(points)
        lam = self.lam
        u = np.stack(
            [
                _radial_value(r, lam, self._f["chi1"](th)),
                _radial_value(r, lam, self._f["chi2"](th)),
            ],
            axis=1,
        )
        u += self._regular_velocity(np.atleast_2d(points))
        return math.exp(t) * u

    def velocity_grad(self, points, t=0.0) -> np.ndarray:
        r, th = _polar(points)
        self._check_not_origin(r)
        lam = self.lam
        g = np.stack(
            [
                _radial_grad(r, th, lam, self._f["chi1"](th), self._f["chi1p"](th)),
                _radial_grad(r, th, lam, self._f["chi2"](th), self._f["chi2p"](th)),
            ],
            axis=1,
        )  # (n, component, d/dx_d)
        g += self._regular_grad(np.atleast_2d(points))
        return math.exp(t) * g

    def laplace_velocity(self, points, t=0.0) -> np.ndarray:
        r, th = _polar(points)
        self._check_not_origin(r)
        lam = self.lam
        rl = r ** (lam - 2.0)
        lap = np.stack(
            [
                rl * (lam**2 * self._f["chi1"](th) + self._f["chi1pp"](th)),
                rl * (lam**2 * self._f["chi2"](th) + self._f["chi2pp"](th)),
            ],
            axis=1,
        )
        lap += self._regular_laplace(np.atleast_2d(points))
        return math.exp(t) * lap

    def pressure(self, points, t=0.0) -> np.ndarray:
        r, th = _polar(points)
        self._check_not_origin(r)
        return math.exp(t) * _radial_value(r, self.lam - 1.0, self._f["gam"](th))

    def pressure_grad(self, points, t=0.0) -> np.ndarray:
        r, th = _polar(points)
        self._check_not_origin(r)
        return math.exp(t) * _radial_grad(
            r, th, self.lam - 1.0, self._f["gam"](th), self._f["gamp"](th)
        )

    def velocity_dt(self, points, t=0.0) -> np.ndarray:
        return self.velocity(points, t)  # separable e^t factor

    # -- regular (smooth) part -------------------------------------------
    def _regular_velocity(self, p):
        if self.regular == "zero":
            return 0.0
        x, y = p[:, 0], p[:, 1]
        return np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], axis=1)

    def _regular_grad(self, p):
        if self.regular == "zero":
            return 0.0
        x, y = p[:, 0], p[:, 1]
        g = np.empty((len(p), 2, 2))
        g[:, 0, 0] = np.cos(x) * np.cos(y)
        g[:, 0, 1] = -np.sin(x) * np.sin(y)
        g[:, 1, 0] = np.sin(x) * np.sin(y)
        g[:, 1, 1] = -np.cos(x) * np.cos(y)
        return g

    def _regular_laplace(self, p):
        if self.regular == "zero":
            return 0.0
        x, y = p[:, 0], p[:, 1]
        return -2.0 * np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], axis=1)

    # -- assembled data ----------------------------------------------------
    def forcing(self, points, t=0.0) -> np.ndarray:
        """f = u_t - Lap u + curl u x u + grad P."""
        u = self.velocity(points, t)
        g = self.velocity_grad(points, t)
        curl = g[:, 1, 0] - g[:, 0, 1]
        rot = np.stack([-curl * u[:, 1], curl * u[:, 0]], axis=1)
        return self.velocity_dt(points, t) - self.laplace_velocity(points, t) + rot + self.pressure_grad(points, t)

    def boundary_velocity(self, points, t=0.0) -> np.ndarray:
        return self.velocity(points, t)

    def initial_velocity(self, points) -> np.ndarray:
        return self.velocity(points, 0.0)


class ClosedFormSolution:
    """Smooth manufactured solution from sympy expressions in x1, x2, t.

    Used for convex-domain checks where the exact pair must be representable
    by the elements (polynomial or trigonometric fields).
    """

    def __init__(self, u1, u2, p, check_divergence: bool = True):
        x1, x2, t = sympy.symbols("x1 x2 t")
        syms = (x1, x2, t)
        u1, u2, p = sympy.sympify(u1), sympy.sympify(u2), sympy.sympify(p)
        if check_divergence and sympy.simplify(u1.diff(x1) + u2.diff(x2)) != 0:
            raise ValueError("velocity field is not divergence-free")
        curl = u2.diff(x1) - u1.diff(x2)
        f1 = u1.diff(t) - u1.diff(x1, 2) - u1.diff(x2, 2) - curl * u2 + p.diff(x1)
        f2 = u2.diff(t) - u2.diff(x1, 2) - u2.diff(x2, 2) + curl * u1 + p.diff(x2)
        self._u = [sympy.lambdify(syms, e, "numpy") for e in (u1, u2)]
        self._grad = [
            [sympy.lambdify(syms, e.diff(v), "numpy") for v in (x1, x2)]
            for e in (u1, u2)
        ]
        self._p = sympy.lambdify(syms, p, "numpy")
        self._f = [sympy.lambdify(syms, e, "numpy") for e in (f1, f2)]

    @staticmethod
    def _eval(funcs, p, t):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, y = p[:, 0], p[:, 1]
        return [np.broadcast_to(np.asarray(f(x, y, t), dtype=float), x.shape) for f in funcs]

    def velocity(self, points, t=0.0):
        return np.stack(self._eval(self._u, points, t), axis=1)

    def velocity_grad(self, points, t=0.0):
        rows = [np.stack(self._eval(g, points, t), axis=1) for g in self._grad]
        return np.stack(rows, axis=1)

    def pressure(self, points, t=0.0):
        return self._eval([self._p], points, t)[0]

    def forcing(self, points, t=0.0):
        return np.stack(self._eval(self._f, points, t), axis=1)

    def boundary_velocity(self, points, t=0.0):
        return self.velocity(points, t)

    def initial_velocity(self, points):
        return self.velocity(points, 0.0)


def zero_solution() -> ClosedFormSolution:
    return ClosedFormSolution(0, 0, 0)
