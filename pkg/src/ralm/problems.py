"""Problem bundles: objective, nonsmooth composite term and set constraint.

A problem is  min f(x) + theta(g1(x))  s.t.  g2(x) in Q,  x in M,  with all
derivatives supplied in ambient coordinates and projected onto tangent spaces
when Riemannian quantities are needed.  Three built-in families cover the
experiments: a two-dimensional circle instance with an inequality constraint,
an l1-penalised quadratic on the sphere, and robust matrix completion on the
fixed-rank manifold.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .convex import ConvexSet, NonnegOrthant, ScaledL1, dist2_grad, l1_value, moreau_env
from .manifolds import (
    FixedRank,
    Manifold,
    Point,
    Sphere,
    project_tangent,
    retract,
)


@dataclass(frozen=True)
class SmoothMap:
    """A twice continuously differentiable map with its ambient Jacobian.

    ``linear`` marks maps whose second derivative vanishes identically, which
    lets Hessian code skip the finite-difference fallback.
    """

    value: Callable[[np.ndarray], np.ndarray]
    jacobian_apply: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian_adjoint: Callable[[np.ndarray, np.ndarray], np.ndarray]
    out_shape: tuple
    linear: bool = False


@dataclass(frozen=True)
class Objective:
    value: Callable[[np.ndarray], float]
    egrad: Callable[[np.ndarray], np.ndarray]
    ehess_apply: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class ProblemInstance:
    manifold: Manifold
    f: Objective
    g1: SmoothMap
    theta: ScaledL1
    g2: Optional[SmoothMap] = None
    q: Optional[ConvexSet] = None
    label: str = ""

    def __post_init__(self):
        if (self.g2 is None) != (self.q is None):
            raise ValueError("g2 and Q must be supplied together")
        if self.g2 is not None and self.g2.out_shape != tuple(self.q.shape):
            raise ValueError("g2 output shape inconsistent with Q")


# ---------------------------------------------------------------------------
# built-in families


@dataclass(frozen=True)
class CircleExample:
    """min x2^2 + |x1 - x2|  s.t.  2 x1 + x2 >= 0  on the unit circle."""


@dataclass(frozen=True)
class SphereL1:
    """min -x^T A^T A x + mu |x|_1 on the unit sphere."""

    a: np.ndarray
    mu: float = 0.25


@dataclass(frozen=True)
class RMC:
    """min |P_Omega(X - A)|_1 over rank-r matrices (robust matrix completion)."""

    a: np.ndarray
    mask: np.ndarray
    r: int


# the fixed 5x5 demo matrix for the sphere family (block diagonal, dominant
# second eigendirection)
SPHERE_L1_DEMO_A = np.array(
    [
        [10.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 25.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.028, 1.104, 0.0],
        [0.0, 0.0, 1.104, 1.672, 0.0],
        [0.0, 0.0, 0.0, 0.0, 8.0],
    ]
)


def rmc_mask(m: int, n: int, omega) -> np.ndarray:
    """Boolean observation mask from an index set (iterable of (i, j) pairs)."""
    mask = np.zeros((m, n), dtype=bool)
    for idx in omega:
        i, j = int(idx[0]), int(idx[1])
        if not (0 <= i < m and 0 <= j < n):
            raise ValueError(f"observation index out of range: {(i, j)}")
        mask[i, j] = True
    return mask


def build_family(family) -> ProblemInstance:
    if isinstance(family, CircleExample):
        return _build_circle()
    if isinstance(family, SphereL1):
        return _build_sphere_l1(family)
    if isinstance(family, RMC):
        return _build_rmc(family)
    raise TypeError(f"unknown family {family!r}")


def _build_circle() -> ProblemInstance:
    f = Objective(
        value=lambda x: float(x[1] ** 2),
        egrad=lambda x: np.array([0.0, 2.0 * x[1]]),
        ehess_apply=lambda x, xi: np.array([0.0, 2.0 * xi[1]]),
    )
    g1 = SmoothMap(
        value=lambda x: np.array([x[0] - x[1]]),
        jacobian_apply=lambda x, xi: np.array([xi[0] - xi[1]]),
        jacobian_adjoint=lambda x, y: float(y[0]) * np.array([1.0, -1.0]),
        out_shape=(1,),
        linear=True,
    )
    g2 = SmoothMap(
        value=lambda x: np.array([2.0 * x[0] + x[1]]),
        jacobian_apply=lambda x, xi: np.array([2.0 * xi[0] + xi[1]]),
        jacobian_adjoint=lambda x, z: float(z[0]) * np.array([2.0, 1.0]),
        out_shape=(1,),
        linear=True,
    )
    return ProblemInstance(
        manifold=Sphere(2),
        f=f,
        g1=g1,
        theta=ScaledL1(1.0),
        g2=g2,
        q=NonnegOrthant((1,)),
        label="circle",
    )


def _build_sphere_l1(family: SphereL1) -> ProblemInstance:
    a = np.asarray(family.a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("A must be square")
    n = a.shape[0]
    ata = a.T @ a
    f = Objective(
        value=lambda x: float(-x @ (ata @ x)),
        egrad=lambda x: -2.0 * (ata @ x),
        ehess_apply=lambda x, xi: -2.0 * (ata @ xi),
    )
    g1 = SmoothMap(
        value=lambda x: x.copy(),
        jacobian_apply=lambda x, xi: xi.copy(),
        jacobian_adjoint=lambda x, y: y.copy(),
        out_shape=(n,),
        linear=True,
    )
    return ProblemInstance(
        manifold=Sphere(n),
        f=f,
        g1=g1,
        theta=ScaledL1(family.mu),
        label=f"sphere-l1(n={n}, mu={family.mu})",
    )


def _build_rmc(family: RMC) -> ProblemInstance:
    a = np.asarray(family.a, dtype=float)
    mask = np.asarray(family.mask, dtype=bool)
    if mask.shape != a.shape:
        raise ValueError("mask shape must match A")
    m, n = a.shape
    proj = mask.astype(float)
    f = Objective(
        value=lambda x: 0.0,
        egrad=lambda x: np.zeros((m, n)),
        ehess_apply=lambda x, xi: np.zeros((m, n)),
    )
    g1 = SmoothMap(
        value=lambda x: proj * (x - a),
        jacobian_apply=lambda x, xi: proj * xi,
        jacobian_adjoint=lambda x, y: proj * y,  # masking is self-adjoint
        out_shape=(m, n),
        linear=True,
    )
    return ProblemInstance(
        manifold=FixedRank(m, n, family.r),
        f=f,
        g1=g1,
        theta=ScaledL1(1.0),
        label=f"rmc({m}x{n}, r={family.r})",
    )


# ---------------------------------------------------------------------------
# Lagrangian machinery


def lagrangian_value(p: ProblemInstance, x: Point, y, z=None) -> float:
    """L(x, y, z) = f(x) + <y, g1(x)> + <z, g2(x)> (z-term absent without Q)."""
    xa = x.ambient
    val = p.f.value(xa) + float(np.sum(np.asarray(y) * p.g1.value(xa)))
    if p.g2 is not None and z is not None:
        val += float(np.sum(np.asarray(z) * p.g2.value(xa)))
    return val


def _ambient_lagrangian_grad(p: ProblemInstance, xa: np.ndarray, y, z):
    g = p.f.egrad(xa) + p.g1.jacobian_adjoint(xa, np.asarray(y, dtype=float))
    if p.g2 is not None and z is not None:
        g = g + p.g2.jacobian_adjoint(xa, np.asarray(z, dtype=float))
    return g


def lagrangian_rgrad(p: ProblemInstance, x: Point, y, z=None) -> np.ndarray:
    """Riemannian gradient of L(., y, z): projected ambient gradient."""
    return project_tangent(p.manifold, x, _ambient_lagrangian_grad(p, x.ambient, y, z))


def aug_lagrangian_value(p: ProblemInstance, x: Point, w, p_mult, rho: float) -> float:
    if rho <= 0:
        raise ValueError("rho must be positive")
    xa = x.ambient
    env_val, _ = moreau_env(p.theta, p.g1.value(xa) + np.asarray(w) / rho, rho)
    val = p.f.value(xa) + env_val
    if p.q is not None:
        d_val, _ = dist2_grad(p.q, p.g2.value(xa) + np.asarray(p_mult) / rho, rho)
        val += d_val
    return val


def aug_lagrangian(p: ProblemInstance, x: Point, w, p_mult, rho: float):
    """Augmented Lagrangian value and its exact Riemannian gradient.

    L_rho(x, w, p) = f(x) + env_rho(g1(x) + w/rho) + (rho/2) dist^2(g2(x) + p/rho, Q),
    with gradient obtained through the envelope/distance chain rule and a
    final tangent projection.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    xa = x.ambient
    env_val, env_grad = moreau_env(p.theta, p.g1.value(xa) + np.asarray(w) / rho, rho)
    val = p.f.value(xa) + env_val
    ambient = p.f.egrad(xa) + p.g1.jacobian_adjoint(xa, env_grad)
    if p.q is not None:
        d_val, d_grad = dist2_grad(p.q, p.g2.value(xa) + np.asarray(p_mult) / rho, rho)
        val += d_val
        ambient = ambient + p.g2.jacobian_adjoint(xa, d_grad)
    return val, project_tangent(p.manifold, x, ambient)


def tilted_instance(p: ProblemInstance, a=None, b=None, c=None) -> ProblemInstance:
    """Perturbed copy: f - <a, x> (ambient tilt), g1 + b and g2 + c shifts.

    The original instance is untouched; the calmness probe builds many of
    these.
    """
    new = p
    if a is not None:
        a = np.asarray(a, dtype=float)
        f0 = p.f
        new_f = Objective(
            value=lambda x, _f=f0, _a=a: _f.value(x) - float(np.sum(_a * x)),
            egrad=lambda x, _f=f0, _a=a: _f.egrad(x) - _a,
            ehess_apply=f0.ehess_apply,
        )
        new = replace(new, f=new_f)
    if b is not None:
        b = np.asarray(b, dtype=float)
        g1 = p.g1
        new_g1 = replace(g1, value=lambda x, _g=g1, _b=b: _g.value(x) + _b)
        new = replace(new, g1=new_g1)
    if c is not None:
        if p.g2 is None:
            raise ValueError("cannot shift g2: instance has no set constraint")
        c = np.asarray(c, dtype=float)
        g2 = p.g2
        new_g2 = replace(g2, value=lambda x, _g=g2, _c=c: _g.value(x) + _c)
        new = replace(new, g2=new_g2)
    return replace(new, label=p.label + "+tilt")


def _scalar_lagrangian(p: ProblemInstance, z):
    """l(., z) = f + <z, g2> as a plain ambient function/gradient pair."""
    if p.g2 is None or z is None:
        return p.f.value, p.f.egrad, p.f.ehess_apply

    def value(xa):
        return p.f.value(xa) + float(np.sum(np.asarray(z) * p.g2.value(xa)))

    def egrad(xa):
        return p.f.egrad(xa) + p.g2.jacobian_adjoint(xa, np.asarray(z, dtype=float))

    hess = p.f.ehess_apply if (p.f.ehess_apply is not None and p.g2.linear) else None
    return value, egrad, hess


def hess_quadform(p: ProblemInstance, x: Point, z, xi, *, fd_step: float = 1e-3) -> float:
    """<xi, Hess_x l(x, z) xi> for l = f + <z, g2>.

    Uses the closed-form sphere Hessian when an ambient Hessian product is
    available; otherwise a five-point second difference of t -> l(R_x(t xi)),
    valid because both retractions are second order.
    """
    value, egrad, ehess = _scalar_lagrangian(p, z)
    xi = np.asarray(xi, dtype=float)
    nrm = float(np.linalg.norm(xi))
    if nrm == 0.0:
        return 0.0
    if isinstance(p.manifold, Sphere) and ehess is not None:
        g = egrad(x.ambient)
        hx = ehess(x.ambient, xi)
        return float(np.sum(xi * hx)) - float(np.sum(x.ambient * g)) * nrm**2
    h = fd_step / nrm
    vals = []
    for t in (-2 * h, -h, 0.0, h, 2 * h):
        if t == 0.0:
            vals.append(value(x.ambient))
        else:
            vals.append(value(retract(p.manifold, x, t * xi).ambient))
    return float((-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (12 * h * h))


def objective_value(p: ProblemInstance, x: Point) -> float:
    """Composite objective f(x) + theta(g1(x))."""
    xa = x.ambient
    return p.f.value(xa) + l1_value(p.theta, p.g1.value(xa))
