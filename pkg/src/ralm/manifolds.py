"""Closed-form geometry for the unit sphere and the fixed-rank matrix manifold.

Points and tangent vectors are stored in ambient (dense) coordinates.  All
Riemannian quantities are obtained by orthogonal projection onto the tangent
space, and retractions map tangent vectors back onto the manifold:

* ``Sphere(n)``: unit vectors in R^n, tangent space ``{v : <x, v> = 0}``.
* ``FixedRank(m, n, r)``: rank-r matrices in R^{m x n}, represented by a
  thin SVD factorisation ``U diag(s) V^T`` kept consistent with the ambient
  matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

# Absolute singular-value threshold below which a factor counts as rank deficient.
SV_RANK_TOL = 1e-12


class RankDeficiencyError(RuntimeError):
    """A retraction result dropped below the required rank."""


@dataclass(frozen=True)
class Sphere:
    """Unit sphere S^{n-1} embedded in R^n."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"sphere dimension must be >= 2, got {self.n}")

    @property
    def ambient_shape(self):
        return (self.n,)

    @property
    def dim(self):
        return self.n - 1


@dataclass(frozen=True)
class FixedRank:
    """Matrices of fixed rank r inside R^{m x n}."""

    m: int
    n: int
    r: int

    def __post_init__(self):
        if not (1 <= self.r <= min(self.m, self.n)):
            raise ValueError(f"rank must satisfy 1 <= r <= min(m, n), got {self.r}")

    @property
    def ambient_shape(self):
        return (self.m, self.n)

    @property
    def dim(self):
        return (self.m + self.n - self.r) * self.r


Manifold = Union[Sphere, FixedRank]


@dataclass(frozen=True)
class Point:
    """A feasible point; fixed-rank points carry their thin-SVD factors."""

    ambient: np.ndarray
    u: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


def sphere_point(vec, tol: float = 1e-12) -> Point:
    vec = np.asarray(vec, dtype=float)
    nrm = np.linalg.norm(vec)
    if abs(nrm - 1.0) > tol:
        raise ValueError(f"not on the unit sphere: |norm - 1| = {abs(nrm - 1.0):.3e}")
    return Point(ambient=_readonly(vec))


def fixed_rank_point_from_factors(u, s, v) -> Point:
    """Build a fixed-rank point from thin-SVD factors (s is the diagonal)."""
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(s <= SV_RANK_TOL):
        raise RankDeficiencyError(f"singular value below threshold: min(s) = {s.min():.3e}")
    ambient = (u * s) @ v.T
    return Point(ambient=_readonly(ambient), u=_readonly(u), s=_readonly(s), v=_readonly(v))


def fixed_rank_point(ambient, r: int) -> Point:
    """Factor an ambient matrix assumed to have rank r (truncation checked)."""
    ambient = np.asarray(ambient, dtype=float)
    uu, ss, vvt = np.linalg.svd(ambient, full_matrices=False)
    if ss[r - 1] <= SV_RANK_TOL:
        raise RankDeficiencyError(f"matrix has numerical rank below {r}")
    tail = ss[r:]
    if tail.size and tail[0] > 1e-10 * ss[0]:
        raise ValueError("ambient matrix is not numerically rank r")
    return fixed_rank_point_from_factors(uu[:, :r], ss[:r], vvt[:r].T)


def nearest_rank_r(manifold: FixedRank, ambient) -> Point:
    """Best rank-r approximation (truncated SVD) of an arbitrary matrix."""
    ambient = np.asarray(ambient, dtype=float)
    uu, ss, vvt = np.linalg.svd(ambient, full_matrices=False)
    r = manifold.r
    if ss[r - 1] <= SV_RANK_TOL:
        raise RankDeficiencyError(f"matrix has numerical rank below {r}")
    return fixed_rank_point_from_factors(uu[:, :r], ss[:r], vvt[:r].T)


def check_point(manifold: Manifold, x: Point, tol: float = 1e-10) -> None:
    """Raise if x violates the manifold's feasibility invariants."""
    if isinstance(manifold, Sphere):
        if x.ambient.shape != (manifold.n,):
            raise ValueError("point shape mismatch")
        if abs(np.linalg.norm(x.ambient) - 1.0) > 1e-12:
            raise ValueError("sphere point is not unit norm")
        return
    if x.ambient.shape != (manifold.m, manifold.n):
        raise ValueError("point shape mismatch")
    if x.u is None or x.s is None or x.v is None:
        raise ValueError("fixed-rank point is missing factors")
    r = manifold.r
    if x.u.shape != (manifold.m, r) or x.v.shape != (manifold.n, r) or x.s.shape != (r,):
        raise ValueError("factor shape mismatch")
    if np.max(np.abs(x.u.T @ x.u - np.eye(r))) > tol or np.max(np.abs(x.v.T @ x.v - np.eye(r))) > tol:
        raise ValueError("fixed-rank factors are not orthonormal")
    if np.any(x.s <= SV_RANK_TOL):
        raise RankDeficiencyError("fixed-rank point has a vanishing singular value")
    recon = (x.u * x.s) @ x.v.T
    scale = max(1.0, float(np.linalg.norm(x.ambient)))
    if np.linalg.norm(recon - x.ambient) > tol * scale:
        raise ValueError("ambient matrix inconsistent with factors")


def _check_shape(manifold: Manifold, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.shape != manifold.ambient_shape:
        raise ValueError(f"shape mismatch: expected {manifold.ambient_shape}, got {arr.shape}")
    return arr


def project_tangent(manifold: Manifold, x: Point, v) -> np.ndarray:
    """Orthogonal projection of an ambient vector onto T_x M.

    The projection is linear, idempotent and self-adjoint in the ambient
    inner product.
    """
    v = _check_shape(manifold, v)
    if isinstance(manifold, Sphere):
        return v - x.ambient * float(x.ambient @ v)
    # P_U Y + Y P_V - P_U Y P_V, evaluated through the thin factors
    u, vv = x.u, x.v
    ut_v = u.T @ v                   # r x n
    v_pv = v @ vv                    # m x r
    return u @ ut_v + v_pv @ vv.T - u @ (ut_v @ vv) @ vv.T


def _sphere_exp(x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(xi)
    if nrm == 0.0:
        return x.copy()
    out = np.cos(nrm) * x + np.sin(nrm) * (xi / nrm)
    return out / np.linalg.norm(out)  # kill norm drift over long iterations


def _fixed_rank_retract(manifold: FixedRank, x: Point, xi: np.ndarray) -> Point:
    r = manifold.r
    if min(manifold.m, manifold.n) <= 50:
        # small matrices: metric projection via a full SVD
        uu, ss, vvt = np.linalg.svd(x.ambient + xi, full_matrices=False)
        if ss[r - 1] <= SV_RANK_TOL:
            raise RankDeficiencyError("retraction dropped rank")
        return fixed_rank_point_from_factors(uu[:, :r], ss[:r], vvt[:r].T)
    # structured path: xi in T_x M has rank <= 2r, so x + xi factors through
    # a 2r x 2r core whose SVD gives the metric projection exactly
    u, s, v = x.u, x.s, x.v
    m_core = u.T @ xi @ v
    u_p = xi @ v - u @ m_core
    v_p = xi.T @ u - v @ m_core.T
    q_u, r_u = np.linalg.qr(u_p)
    q_v, r_v = np.linalg.qr(v_p)
    k = np.block([[np.diag(s) + m_core, r_v.T], [r_u, np.zeros((r, r))]])
    uk, sk, vkt = np.linalg.svd(k)
    if sk[r - 1] <= SV_RANK_TOL:
        raise RankDeficiencyError("retraction dropped rank")
    u_new = np.hstack([u, q_u]) @ uk[:, :r]
    v_new = np.hstack([v, q_v]) @ vkt[:r].T
    # guard against slow orthonormality drift across many retractions
    if max(np.max(np.abs(u_new.T @ u_new - np.eye(r))), np.max(np.abs(v_new.T @ v_new - np.eye(r)))) > 1e-12:
        dense = (u_new * sk[:r]) @ v_new.T
        uu, ss, vvt = np.linalg.svd(dense, full_matrices=False)
        return fixed_rank_point_from_factors(uu[:, :r], ss[:r], vvt[:r].T)
    return fixed_rank_point_from_factors(u_new, sk[:r], v_new)


def retract(manifold: Manifold, x: Point, xi, *, normalize_only: bool = False) -> Point:
    """Map a tangent vector back onto the manifold.

    Sphere: exact exponential map (or metric projection x+xi / |x+xi| when
    ``normalize_only``).  Fixed rank: metric projection, i.e. the rank-r
    truncated SVD of x + xi; raises RankDeficiencyError if that truncation
    is not well defined.
    """
    xi = _check_shape(manifold, xi)
    if isinstance(manifold, Sphere):
        if normalize_only:
            out = x.ambient + xi
            return Point(ambient=_readonly(out / np.linalg.norm(out)))
        return Point(ambient=_readonly(_sphere_exp(x.ambient, xi)))
    return _fixed_rank_retract(manifold, x, xi)


def distance(manifold: Manifold, x: Point, y: Point) -> float:
    """Geodesic distance on the sphere; ambient Frobenius surrogate on fixed rank."""
    if isinstance(manifold, Sphere):
        c = float(np.clip(x.ambient @ y.ambient, -1.0, 1.0))
        return float(np.arccos(c))
    return float(np.linalg.norm(x.ambient - y.ambient))


def riemannian_grad(manifold: Manifold, x: Point, egrad) -> np.ndarray:
    """Riemannian gradient: projection of the ambient Euclidean gradient."""
    return project_tangent(manifold, x, egrad)


def riemannian_hess_apply(
    manifold: Manifold,
    x: Point,
    egrad,
    ehess_xi,
    xi,
    *,
    egrad_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    step: float = 1e-6,
) -> np.ndarray:
    """Riemannian Hessian applied to a tangent vector xi.

    On the sphere the curvature correction is closed form:
    ``Pi_x(ehess_xi) - <x, egrad> xi``.  If ``ehess_xi`` is None it is
    produced by central differences of ``egrad_fn`` along the ambient line.
    On the fixed-rank manifold no closed form is used; the projected gradient
    field is centrally differenced along the retraction (requires
    ``egrad_fn``).
    """
    xi = _check_shape(manifold, xi)
    if isinstance(manifold, Sphere):
        egrad = _check_shape(manifold, egrad)
        if ehess_xi is None:
            if egrad_fn is None:
                raise ValueError("need ehess_xi or egrad_fn")
            h = step * (1.0 + np.linalg.norm(x.ambient)) / max(1.0, np.linalg.norm(xi))
            ehess_xi = (egrad_fn(x.ambient + h * xi) - egrad_fn(x.ambient - h * xi)) / (2 * h)
        ehess_xi = _check_shape(manifold, ehess_xi)
        return project_tangent(manifold, x, ehess_xi) - float(x.ambient @ egrad) * xi
    if egrad_fn is None:
        raise ValueError("fixed-rank Hessian products need egrad_fn (finite-difference mode)")
    nrm = np.linalg.norm(xi)
    if nrm == 0.0:
        return np.zeros(manifold.ambient_shape)
    h = step / nrm
    xp = retract(manifold, x, h * xi)
    xm = retract(manifold, x, -h * xi)
    gp = project_tangent(manifold, xp, egrad_fn(xp.ambient))
    gm = project_tangent(manifold, xm, egrad_fn(xm.ambient))
    return project_tangent(manifold, x, (gp - gm) / (2 * h))


def random_point(manifold: Manifold, seed) -> Point:
    """Deterministic random feasible point (seed may be an int or Generator)."""
    rng = np.random.default_rng(seed)
    if isinstance(manifold, Sphere):
        v = rng.standard_normal(manifold.n)
        return Point(ambient=_readonly(v / np.linalg.norm(v)))
    m, n, r = manifold.m, manifold.n, manifold.r
    u, _ = np.linalg.qr(rng.standard_normal((m, r)))
    v, _ = np.linalg.qr(rng.standard_normal((n, r)))
    s = np.sort(rng.uniform(1.0, 2.0, size=r))[::-1]
    return fixed_rank_point_from_factors(u, s, v)


def random_tangent(manifold: Manifold, x: Point, seed) -> np.ndarray:
    """Deterministic random tangent vector at x (ambient Gaussian, projected)."""
    rng = np.random.default_rng(seed)
    return project_tangent(manifold, x, rng.standard_normal(manifold.ambient_shape))


def tangent_basis(manifold: Manifold, x: Point) -> list[np.ndarray]:
    """Orthonormal basis of T_x M in ambient coordinates (analysis-scale only)."""
    if isinstance(manifold, Sphere):
        n = manifold.n
        full, _ = np.linalg.qr(np.column_stack([x.ambient, np.eye(n)[:, : n - 1]]), mode="complete")
        # first column spans x up to sign; the rest span the tangent space
        basis = [full[:, j].copy() for j in range(1, n)]
        return [project_tangent(manifold, x, b) for b in basis]
    m, n, r = manifold.m, manifold.n, manifold.r
    u, v = x.u, x.v
    u_full, _ = np.linalg.qr(u, mode="complete")
    v_full, _ = np.linalg.qr(v, mode="complete")
    # qr may flip signs of the leading columns; only the complements matter
    u_perp = u_full[:, r:]
    v_perp = v_full[:, r:]
    basis = []
    for i in range(r):
        for j in range(r):
            basis.append(np.outer(u[:, i], v[:, j]))
    for a in range(m - r):
        for j in range(r):
            basis.append(np.outer(u_perp[:, a], v[:, j]))
    for i in range(r):
        for b in range(n - r):
            basis.append(np.outer(u[:, i], v_perp[:, b]))
    return basis
