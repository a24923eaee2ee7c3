"""Proximal and variational machinery for the scaled l1 penalty and polyhedral sets.

Everything here treats matrices as flattened vectors: the l1 penalty and the
set projections act elementwise.  The directional epiderivative formulas are
discontinuous in the base point, so sign blocks are decided with an explicit
zero-classification tolerance (default 1e-10); callers probing numerically
converged points can pass a looser one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

ZERO_CLASS_TOL = 1e-10


@dataclass(frozen=True)
class ScaledL1:
    """theta(u) = mu * sum_i |u_i|.

    mu = 0 is allowed and turns the penalty off (prox becomes the identity),
    which the sphere experiments use as a smooth edge case.
    """

    mu: float

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")


def l1_value(theta: ScaledL1, u) -> float:
    return theta.mu * float(np.sum(np.abs(u)))


def prox_residual(theta: ScaledL1, u, t: float) -> np.ndarray:
    """u - prox_{t*theta}(u), i.e. the clamp of u to [-t*mu, t*mu]."""
    if t <= 0:
        raise ValueError("prox parameter t must be positive")
    u = np.asarray(u, dtype=float)
    lim = t * theta.mu
    return np.clip(u, -lim, lim)


def prox(theta: ScaledL1, u, t: float = 1.0) -> np.ndarray:
    """Soft threshold: prox_{t*theta}(u) = sign(u) * max(|u| - t*mu, 0).

    Implemented as u minus its clamp so the Moreau decomposition
    prox + clamp = u holds in the same floating-point operations.
    """
    u = np.asarray(u, dtype=float)
    return u - prox_residual(theta, u, t)


def moreau_env(theta: ScaledL1, u, rho: float):
    """Moreau envelope value and gradient at parameter rho.

    value = theta(p) + (rho/2) |u - p|^2 with p = prox_{theta/rho}(u);
    grad = rho (u - p), which for the l1 penalty is the elementwise clamp of
    rho*u to [-mu, mu] (a rho-Lipschitz field).
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    u = np.asarray(u, dtype=float)
    resid = prox_residual(theta, u, 1.0 / rho)
    p = u - resid
    value = l1_value(theta, p) + 0.5 * rho * float(np.sum(resid * resid))
    grad = rho * resid
    return value, grad


def epiderivative_down(theta: ScaledL1, x, d, zero_tol: float = ZERO_CLASS_TOL) -> float:
    """First directional epiderivative of the l1 penalty at x in direction d.

    mu * ( sum_{x_i=0} |d_i| + sum_{x_i>0} d_i - sum_{x_i<0} d_i ).
    """
    x = np.ravel(np.asarray(x, dtype=float))
    d = np.ravel(np.asarray(d, dtype=float))
    zero = np.abs(x) <= zero_tol
    return theta.mu * float(np.sum(np.abs(d[zero])) + np.sum(np.sign(x[~zero]) * d[~zero]))


def _second_order_blocks(x, xi, zero_tol):
    """Index blocks of the second epiderivative: kink, up-sliding, down-sliding."""
    x = np.ravel(np.asarray(x, dtype=float))
    xi = np.ravel(np.asarray(xi, dtype=float))
    zero_x = np.abs(x) <= zero_tol
    zero_xi = np.abs(xi) <= zero_tol
    kink = zero_x & zero_xi
    up = (x > zero_tol) | (zero_x & (xi > zero_tol))
    down = (x < -zero_tol) | (zero_x & (xi < -zero_tol))
    return kink, up, down


def epiderivative_down2(theta: ScaledL1, x, xi, w, zero_tol: float = ZERO_CLASS_TOL) -> float:
    """Second directional epiderivative of the l1 penalty (convex in w)."""
    w = np.ravel(np.asarray(w, dtype=float))
    kink, up, down = _second_order_blocks(x, xi, zero_tol)
    return theta.mu * float(np.sum(np.abs(w[kink])) + np.sum(w[up]) - np.sum(w[down]))


@dataclass(frozen=True)
class PsiStar:
    """Conjugate of the second epiderivative: 0 on its domain, +infinity off it."""

    finite: bool

    @property
    def value(self) -> float:
        return 0.0 if self.finite else float("inf")


def psi_conjugate(
    theta: ScaledL1, x, xi, y, tol: float = 1e-8, zero_tol: float = ZERO_CLASS_TOL
) -> PsiStar:
    """sup_w { <y, w> - second epiderivative }, evaluated in closed form.

    The supremum of a linear function minus a piecewise-linear sublinear one
    is 0 when y is blockwise compatible (|y_i| <= mu on the kink block,
    y_i = mu on the up block, y_i = -mu on the down block) and +infinity
    otherwise.
    """
    y = np.ravel(np.asarray(y, dtype=float))
    kink, up, down = _second_order_blocks(x, xi, zero_tol)
    mu = theta.mu
    ok = (
        np.all(np.abs(y[kink]) <= mu + tol)
        and np.all(np.abs(y[up] - mu) <= tol)
        and np.all(np.abs(y[down] + mu) <= tol)
    )
    return PsiStar(finite=bool(ok))


# ---------------------------------------------------------------------------
# polyhedral convex sets


@dataclass(frozen=True)
class ZeroSet:
    shape: tuple


@dataclass(frozen=True)
class NonnegOrthant:
    shape: tuple


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if np.any(lower > upper):
            raise ValueError("box bounds must satisfy lower <= upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def shape(self):
        return self.lower.shape


@dataclass(frozen=True)
class FullSpace:
    shape: tuple


ConvexSet = Union[ZeroSet, NonnegOrthant, Box, FullSpace]


def project_set(q: ConvexSet, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != tuple(q.shape):
        raise ValueError(f"shape mismatch: expected {tuple(q.shape)}, got {v.shape}")
    if isinstance(q, ZeroSet):
        return np.zeros_like(v)
    if isinstance(q, NonnegOrthant):
        return np.maximum(v, 0.0)
    if isinstance(q, Box):
        return np.clip(v, q.lower, q.upper)
    return v.copy()


def dist2_grad(q: ConvexSet, v, rho: float):
    """(rho/2) dist(v, Q)^2 and its gradient rho (v - proj_Q v)."""
    v = np.asarray(v, dtype=float)
    resid = v - project_set(q, v)
    return 0.5 * rho * float(np.sum(resid * resid)), rho * resid


def set_member(q: ConvexSet, s, tol: float = 1e-8) -> bool:
    return bool(np.linalg.norm(np.asarray(s, dtype=float) - project_set(q, s)) <= tol)


def normal_cone_member(q: ConvexSet, s, z, tol: float = 1e-8) -> bool:
    """z in N_Q(s), via the projection characterisation s = proj_Q(s + z)."""
    s = np.asarray(s, dtype=float)
    z = np.asarray(z, dtype=float)
    if not set_member(q, s, tol):
        raise ValueError("s is not in Q within tolerance")
    return bool(np.linalg.norm(project_set(q, s + z) - s) <= tol)


def tangent_cone_member(q: ConvexSet, s, d, tol: float = 1e-8) -> bool:
    """d in T_Q(s) for the polyhedral sets, decided by the active sign pattern."""
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    if isinstance(q, ZeroSet):
        return bool(np.linalg.norm(d) <= tol)
    if isinstance(q, FullSpace):
        return True
    if isinstance(q, NonnegOrthant):
        active = s <= tol
        return bool(np.all(d[active] >= -tol))
    lo_active = s <= q.lower + tol
    hi_active = s >= q.upper - tol
    return bool(np.all(d[lo_active] >= -tol) and np.all(d[hi_active] <= tol))
