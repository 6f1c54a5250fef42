"""Corner weight function rho, its powers, and weighted L2/W^1_2 norms.

rho(x) is the distance to the origin capped at the cutoff radius delta; all
weighted norms are computed with the same per-element quadrature used for
assembly so that error measurement is consistent with the discrete problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightParams:
    """Free parameters (nu, nu*, mu*, delta) of the weighted method.

    nu is the exponent in the bilinear forms, nu*/mu* the velocity/pressure
    basis exponents, delta the weight cutoff radius.  nu = nu* = mu* = 0 is
    exactly the unweighted (classical Galerkin) mode.
    """

    nu: float = 0.0
    nu_star: float = 0.0
    mu_star: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.nu < 0 or self.nu_star < 0 or self.mu_star < 0:
            raise ValueError("weight exponents must be nonnegative")

    @property
    def is_unweighted(self) -> bool:
        return self.nu == 0.0 and self.nu_star == 0.0 and self.mu_star == 0.0

    @classmethod
    def unweighted(cls) -> "WeightParams":
        return cls()


def rho(x: np.ndarray, delta: float) -> np.ndarray:
    """rho(x) = min(|x|, delta)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.minimum(np.hypot(x[..., 0], x[..., 1]), delta)


def rho_pow_grad(x: np.ndarray, alpha: float, delta: float):
    """(rho^alpha, grad(rho^alpha)) with the flat branch outside |x| <= delta.

    On the circle |x| = delta the flat (zero-gradient) branch is used; the set
    has measure zero so quadrature is insensitive to the choice.  Raises when
    evaluated exactly at the origin with alpha < 0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.hypot(x[..., 0], x[..., 1])
    if alpha < 0 and np.any(r == 0.0):
        raise ValueError("rho^alpha with alpha < 0 is singular at the origin")
    val = np.minimum(r, delta) ** alpha if alpha != 0 else np.ones_like(r)
    grad = np.zeros_like(x)
    if alpha != 0:
        inside = (r < delta) & (r > 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(inside, alpha * r ** (alpha - 2.0), 0.0)
        grad = coef[..., None] * np.where(inside[..., None], x, 0.0)
    return val, grad


def weighted_l2_norm(f, alpha: float, delta: float, mesh, quad) -> float:
    """|| rho^alpha f ||_{L2(Omega)} by quadrature.

    ``f(points)`` may return shape (n,) or (n, k); components are summed in
    quadrature.  ``quad`` is an ElementQuadrature over ``mesh``.
    """
    vals = np.asarray(f(quad.phys_points), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    w = quad.weights * rho(quad.phys_points, delta) ** (2.0 * alpha)
    return float(np.sqrt(np.sum(w * np.sum(vals**2, axis=1))))


def weighted_w12_norm(f, grad_f, alpha: float, delta: float, mesh, quad) -> float:
    """Weighted W^1_2 norm: sqrt(||rho^a f||^2 + ||rho^a |grad f|||^2).

    ``grad_f(points)`` returns shape (n, 2) for scalar f or (n, k, 2).
    """
    vals = np.asarray(f(quad.phys_points), dtype=float)
    grads = np.asarray(grad_f(quad.phys_points), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if grads.ndim == 2:
        grads = grads[:, None, :]
    w = quad.weights * rho(quad.phys_points, delta) ** (2.0 * alpha)
    sq = np.sum(w * np.sum(vals**2, axis=1))
    sq += np.sum(w * np.sum(grads**2, axis=(1, 2)))
    return float(np.sqrt(sq))
