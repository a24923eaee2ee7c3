"""Numerical verification of optimality conditions, calmness and error bounds.

The checks operate at (approximate) KKT triples:

* ``natural_map`` stacks the stationarity, prox and projection residual
  blocks whose blockwise norms sum to the KKT residual.
* ``msrcq_check`` tests the strict constraint qualification by assembling a
  spanning set from the tangent image of the constraint Jacobians and the
  closed-form sign-pattern generators of the l1 critical cone.
* ``msosc_check`` certifies a trivial critical cone exactly (linear plus
  sign-pattern feasibility) or samples directions from it and evaluates the
  curvature quadratic form.
* ``calmness_probe`` and ``error_bound_fit`` estimate the Lipschitz modulus
  of the KKT solution under perturbations and the two-sided residual bound
  constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .convex import (
    Box,
    FullSpace,
    NonnegOrthant,
    ZeroSet,
    epiderivative_down,
    project_set,
    prox,
    psi_conjugate,
    tangent_cone_member,
)
from .manifolds import Point, distance, project_tangent, retract, tangent_basis
from .problems import ProblemInstance, hess_quadform, lagrangian_rgrad, tilted_instance
from .solver import ALMConfig, alm_run, kkt_residual

KKT_GATE = 1e-6
RANK_TOL = 1e-8
CONE_TOL = 1e-8


@dataclass(frozen=True)
class KKTTriple:
    x: Point
    y: np.ndarray
    z: Optional[np.ndarray]
    residual: float


@dataclass
class NaturalMap:
    grad_block: np.ndarray
    theta_block: np.ndarray
    set_block: Optional[np.ndarray]
    stacked: np.ndarray


def natural_map(p: ProblemInstance, x: Point, y, z=None) -> NaturalMap:
    """Fixed-point reformulation of the KKT system; zero exactly at KKT points."""
    grad_block = lagrangian_rgrad(p, x, y, z)
    g1 = p.g1.value(x.ambient)
    theta_block = g1 - prox(p.theta, g1 + np.asarray(y))
    set_block = None
    parts = [grad_block.ravel(), theta_block.ravel()]
    if p.q is not None and z is not None:
        g2 = p.g2.value(x.ambient)
        set_block = g2 - project_set(p.q, g2 + np.asarray(z))
        parts.append(set_block.ravel())
    return NaturalMap(grad_block, theta_block, set_block, np.concatenate(parts))


def polish_kkt(
    p: ProblemInstance,
    x: Point,
    y,
    z=None,
    tol: float = 1e-10,
    rho0: float = 100.0,
    max_outer: int = 400,
) -> KKTTriple:
    """Refine an approximate KKT triple with a tight warm-started run."""
    cfg = ALMConfig(rho0=rho0, kkt_tol=tol, eps_floor=tol / 10.0, max_outer=max_outer)
    res = alm_run(p, cfg, x, y, z)
    r = kkt_residual(p, res.x, res.y, res.z)
    return KKTTriple(res.x, res.y, res.z, r)


def _require_kkt(p: ProblemInstance, x: Point, y, z, gate: float = KKT_GATE) -> None:
    r = kkt_residual(p, x, y, z)
    if r > gate:
        raise ValueError(f"not an approximate KKT point: residual {r:.3e} > {gate:.1e}")


# ---------------------------------------------------------------------------
# critical cone membership


def critical_cone_member(p: ProblemInstance, x: Point, z, xi, tol: float = CONE_TOL) -> bool:
    """Is xi a critical direction at (x, z)?

    Requires the first-order growth of the composite objective along xi to
    vanish and, when a set constraint is present, the image Dg2(x) xi to lie
    in the tangent cone intersected with the multiplier's orthogonal
    complement.
    """
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(project_tangent(p.manifold, x, xi) - xi) > tol * (1.0 + np.linalg.norm(xi)):
        raise ValueError("xi is not tangent at x within tolerance")
    scale = max(1.0, float(np.linalg.norm(xi)))
    xa = x.ambient
    d1 = p.g1.jacobian_apply(xa, xi)
    first = float(np.sum(p.f.egrad(xa) * xi)) + epiderivative_down(
        p.theta, p.g1.value(xa), d1, zero_tol=tol
    )
    if abs(first) > tol * scale:
        return False
    if p.q is None:
        return True
    d2 = p.g2.jacobian_apply(xa, xi)
    if not tangent_cone_member(p.q, p.g2.value(xa), d2, tol):
        return False
    z = np.asarray(z, dtype=float)
    zscale = max(1.0, float(np.linalg.norm(z))) * max(1.0, float(np.linalg.norm(d2)))
    return bool(abs(float(np.sum(d2 * z))) <= tol * zscale)


# ---------------------------------------------------------------------------
# generators for the sign-pattern cones


def _ctheta_generator_signs(theta, u, y, tol):
    """Per-coordinate generators of {d : theta^down(u; d) = <d, y>} for l1.

    Returns (free, pos, neg) boolean masks over flattened coordinates: free
    coordinates contribute a full line, pos/neg a one-sided ray.  A zero
    coordinate whose multiplier sits at both bounds (only possible when
    mu = 0) is unconstrained, hence free.
    """
    u = np.ravel(np.asarray(u, dtype=float))
    y = np.ravel(np.asarray(y, dtype=float))
    mu = theta.mu
    nonzero = np.abs(u) > tol
    at_upper = ~nonzero & (y >= mu - tol)
    at_lower = ~nonzero & (y <= -mu + tol)
    free = nonzero | (at_upper & at_lower)
    return free, at_upper & ~free, at_lower & ~free


def _tq_capz_generators(q, s, z, tol):
    """Per-coordinate generators of T_Q(s) intersected with z-perp."""
    s = np.ravel(np.asarray(s, dtype=float))
    z = np.ravel(np.asarray(z, dtype=float))
    dim = s.size
    free = np.zeros(dim, dtype=bool)
    pos = np.zeros(dim, dtype=bool)
    neg = np.zeros(dim, dtype=bool)
    if isinstance(q, FullSpace):
        free[:] = True
    elif isinstance(q, ZeroSet):
        pass
    elif isinstance(q, NonnegOrthant):
        inactive = s > tol
        free[inactive] = True
        pos[~inactive & (np.abs(z) <= tol)] = True
    elif isinstance(q, Box):
        lo = np.ravel(q.lower)
        hi = np.ravel(q.upper)
        pinned = hi - lo <= tol
        at_lo = ~pinned & (s <= lo + tol)
        at_hi = ~pinned & (s >= hi - tol)
        interior = ~pinned & ~at_lo & ~at_hi
        free[interior] = True
        pos[at_lo & (np.abs(z) <= tol)] = True
        neg[at_hi & (np.abs(z) <= tol)] = True
    else:
        raise TypeError(f"unsupported set {q!r}")
    return free, pos, neg


def _basis_columns(dim, free, pos, neg):
    cols = []
    eye = np.eye(dim)
    for i in np.flatnonzero(free):
        cols.append(eye[i])
    for i in np.flatnonzero(pos):
        cols.append(eye[i])
    for i in np.flatnonzero(neg):
        cols.append(-eye[i])
    return cols


@dataclass
class MsrcqReport:
    passed: bool
    rank_found: int
    rank_required: int
    n_generators: int
    tol: float


def msrcq_check(p: ProblemInstance, x: Point, y, z=None, tol: float = RANK_TOL) -> MsrcqReport:
    """Strict constraint qualification as a numerical spanning test.

    Stacks the images of an orthonormal tangent basis under the constraint
    Jacobians with the closed-form cone generators and passes when the
    resulting matrix has full row rank (singular values above tol * sigma_max).
    """
    _require_kkt(p, x, y, z)
    xa = x.ambient
    dim_y = int(np.prod(p.g1.out_shape))
    dim_z = int(np.prod(p.g2.out_shape)) if p.q is not None else 0
    dim_total = dim_y + dim_z

    cols = []
    for b in tangent_basis(p.manifold, x):
        top = np.ravel(p.g1.jacobian_apply(xa, b))
        if dim_z:
            bottom = np.ravel(p.g2.jacobian_apply(xa, b))
            cols.append(np.concatenate([top, bottom]))
        else:
            cols.append(top)

    free, pos, neg = _ctheta_generator_signs(p.theta, p.g1.value(xa), y, CONE_TOL)
    for g in _basis_columns(dim_y, free, pos, neg):
        cols.append(np.concatenate([g, np.zeros(dim_z)]) if dim_z else g)
    if dim_z:
        freeq, posq, negq = _tq_capz_generators(p.q, p.g2.value(xa), z, CONE_TOL)
        for g in _basis_columns(dim_z, freeq, posq, negq):
            cols.append(np.concatenate([np.zeros(dim_y), g]))

    if not cols:
        return MsrcqReport(False, 0, dim_total, 0, tol)
    mat = np.column_stack(cols)
    svals = np.linalg.svd(mat, compute_uv=False)
    rank = int(np.sum(svals > tol * svals[0])) if svals.size and svals[0] > 0 else 0
    return MsrcqReport(rank == dim_total, rank, dim_total, len(cols), tol)


# ---------------------------------------------------------------------------
# second order condition


@dataclass
class MsoscReport:
    status: str  # "pass" | "fail" | "vacuous"
    min_value: float
    samples_used: int
    cone_nullity: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.status in ("pass", "vacuous")


def _critical_cone_system(p: ProblemInstance, x: Point, y, z, tol):
    """Equality/inequality rows describing the critical cone over a tangent basis.

    Returns (basis, eq_rows, ineq_rows) where rows act on basis coefficients;
    inequality rows are oriented so that feasible directions satisfy row >= 0.
    """
    xa = x.ambient
    basis = tangent_basis(p.manifold, x)
    img1 = np.column_stack([np.ravel(p.g1.jacobian_apply(xa, b)) for b in basis])
    free, pos, neg = _ctheta_generator_signs(p.theta, p.g1.value(xa), y, tol)
    zero_rows = ~(free | pos | neg)
    eq_rows = [img1[i] for i in np.flatnonzero(zero_rows)]
    ineq_rows = [img1[i] for i in np.flatnonzero(pos)]
    ineq_rows += [-img1[i] for i in np.flatnonzero(neg)]
    if p.q is not None:
        img2 = np.column_stack([np.ravel(p.g2.jacobian_apply(xa, b)) for b in basis])
        freeq, posq, negq = _tq_capz_generators(p.q, p.g2.value(xa), z, tol)
        zq = ~(freeq | posq | negq)
        eq_rows += [img2[i] for i in np.flatnonzero(zq)]
        ineq_rows += [img2[i] for i in np.flatnonzero(posq)]
        ineq_rows += [-img2[i] for i in np.flatnonzero(negq)]
    return basis, eq_rows, ineq_rows


def _cone_is_trivial(nullspace_dim, a_ineq):
    """Decide whether {lam : A lam >= 0} inside the nullspace is {0}.

    Exact up to LP tolerances; returns (trivial, witness) where the witness
    is a nonzero feasible coefficient vector when one exists.
    """
    if nullspace_dim == 0:
        return True, None
    if a_ineq is None or a_ineq.shape[0] == 0:
        return False, np.eye(nullspace_dim)[0]
    lin = null_space(a_ineq)
    if lin.shape[1] > 0:
        return False, lin[:, 0]
    # nonzero feasible lam exists iff {A lam >= 0, sum(A lam) = 1} is feasible
    c = np.zeros(a_ineq.shape[1])
    res = linprog(
        c,
        A_ub=-a_ineq,
        b_ub=np.zeros(a_ineq.shape[0]),
        A_eq=np.sum(a_ineq, axis=0, keepdims=True),
        b_eq=np.array([1.0]),
        bounds=[(-1e6, 1e6)] * a_ineq.shape[1],
        method="highs",
    )
    if res.success:
        return False, np.asarray(res.x)
    return True, None


def msosc_check(
    p: ProblemInstance,
    x: Point,
    y,
    z=None,
    n_samples: int = 100,
    tol: float = CONE_TOL,
    seed: int = 0,
) -> MsoscReport:
    """Second order sufficiency over the critical cone (polyhedral sets only).

    A trivial cone is certified exactly; otherwise unit critical directions
    are sampled and the quadratic form
    ``<xi, Hess_x l(x, z) xi> - psi*(y)`` must stay above tol.
    """
    _require_kkt(p, x, y, z)
    basis, eq_rows, ineq_rows = _critical_cone_system(p, x, y, z, tol)
    k0 = len(basis)
    if eq_rows:
        nmat = null_space(np.vstack(eq_rows), rcond=1e-10)
    else:
        nmat = np.eye(k0)
    k1 = nmat.shape[1]
    a_ineq = np.vstack(ineq_rows) @ nmat if ineq_rows else None
    trivial, witness = _cone_is_trivial(k1, a_ineq)
    if trivial:
        return MsoscReport("vacuous", float("nan"), 0, k1, tol)

    rng = np.random.default_rng(seed)
    samples = []

    def try_direction(lam):
        coeff = nmat @ lam
        xi = sum(c * b for c, b in zip(coeff, basis))
        nrm = float(np.linalg.norm(xi))
        if nrm < 1e-12:
            return
        xi = xi / nrm
        try:
            if critical_cone_member(p, x, z, xi, tol):
                samples.append(xi)
        except ValueError:
            pass

    if witness is not None:
        try_direction(np.asarray(witness, dtype=float))
    attempts = 0
    while len(samples) < n_samples and attempts < 50 * n_samples:
        attempts += 1
        try_direction(rng.standard_normal(k1))
    if not samples:
        return MsoscReport("fail", float("nan"), 0, k1, tol)

    min_q = float("inf")
    bad_infinite = False
    finite_seen = 0
    xa = x.ambient
    for xi in samples:
        quad = hess_quadform(p, x, z, xi)
        star = psi_conjugate(p.theta, p.g1.value(xa), p.g1.jacobian_apply(xa, xi), y, tol, tol)
        if not star.finite:
            if quad <= 0:
                bad_infinite = True
            continue
        finite_seen += 1
        min_q = min(min_q, quad - star.value)
    ok = (not bad_infinite) and finite_seen > 0 and min_q > tol
    return MsoscReport(
        "pass" if ok else "fail",
        min_q if finite_seen else float("nan"),
        len(samples),
        k1,
        tol,
    )


@dataclass
class ConditionReport:
    msrcq: MsrcqReport
    msosc: MsoscReport
    critical_cone_trivial: bool
    kkt_residual: float
    tolerances: dict = field(default_factory=dict)


def condition_report(p: ProblemInstance, x: Point, y, z=None, n_samples: int = 100) -> ConditionReport:
    msrcq = msrcq_check(p, x, y, z)
    msosc = msosc_check(p, x, y, z, n_samples=n_samples)
    return ConditionReport(
        msrcq=msrcq,
        msosc=msosc,
        critical_cone_trivial=(msosc.status == "vacuous"),
        kkt_residual=kkt_residual(p, x, y, z),
        tolerances={"kkt_gate": KKT_GATE, "rank": RANK_TOL, "cone": CONE_TOL},
    )


# ---------------------------------------------------------------------------
# calmness probe and error-bound fit


@dataclass
class RadiusRecord:
    radius: float
    trials: int
    failures: int
    max_ratio: float
    ratios: list[float] = field(default_factory=list)


@dataclass
class CalmnessReport:
    records: list[RadiusRecord]
    kappa_hat: float
    bounded: bool


@dataclass
class ErrorBoundFit:
    c1: float
    c2: float
    samples: list[tuple[float, float]]
    degenerate: bool = False


def _perturbation(p: ProblemInstance, radius, rng):
    """Uniform direction on the joint (a, b, c) sphere, scaled to the radius."""
    dim_a = int(np.prod(p.manifold.ambient_shape))
    dim_b = int(np.prod(p.g1.out_shape))
    dim_c = int(np.prod(p.g2.out_shape)) if p.q is not None else 0
    vec = rng.standard_normal(dim_a + dim_b + dim_c)
    vec *= radius / np.linalg.norm(vec)
    a = vec[:dim_a].reshape(p.manifold.ambient_shape)
    b = vec[dim_a : dim_a + dim_b].reshape(p.g1.out_shape)
    c = vec[dim_a + dim_b :].reshape(p.g2.out_shape) if dim_c else None
    return a, b, c


def calmness_probe(
    p: ProblemInstance,
    x: Point,
    y,
    z=None,
    radii=(1e-2, 1e-3, 1e-4, 1e-5),
    trials_per_radius: int = 20,
    config: Optional[ALMConfig] = None,
    seed: int = 0,
    jobs: int = 1,
) -> CalmnessReport:
    """Empirical Lipschitz modulus of the KKT solution under data perturbations.

    Solves the tilted/shifted instance warm-started at the unperturbed triple
    and records (distance moved) / (perturbation size); the multiplier set is
    treated as the singleton (y, z), which is why the strict constraint
    qualification is verified first.  Trials are independent and may run on a
    thread pool; results are merged by trial index.
    """
    r0 = kkt_residual(p, x, y, z)
    if r0 > 1e-9:
        raise ValueError(f"probe needs a polished KKT point, residual {r0:.3e}")
    if not msrcq_check(p, x, y, z).passed:
        raise ValueError("strict constraint qualification failed; multiplier may not be unique")
    base = config or ALMConfig(rho0=100.0, max_outer=300)
    records = []
    root = np.random.default_rng(seed)
    seeds = root.integers(0, 2**63 - 1, size=(len(radii), trials_per_radius))

    def run_trial(radius, cfg, trial_seed):
        rng = np.random.default_rng(trial_seed)
        a, b, c = _perturbation(p, radius, rng)
        pert = tilted_instance(p, a, b, c)
        res = alm_run(pert, cfg, x, y, z)
        if not res.converged:
            return None
        moved = distance(p.manifold, res.x, x) + float(np.linalg.norm(res.y - np.asarray(y)))
        if res.z is not None and z is not None:
            moved += float(np.linalg.norm(res.z - np.asarray(z)))
        return moved / radius

    for i, radius in enumerate(radii):
        tol = min(1e-10, radius * 1e-3)
        cfg = replace(base, kkt_tol=tol, eps_floor=min(base.eps_floor, tol / 10.0))
        if jobs > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(
                    pool.map(lambda s: run_trial(radius, cfg, s), seeds[i])
                )
        else:
            outcomes = [run_trial(radius, cfg, s) for s in seeds[i]]
        ratios = [o for o in outcomes if o is not None]
        failures = trials_per_radius - len(ratios)
        records.append(
            RadiusRecord(
                radius=radius,
                trials=trials_per_radius,
                failures=failures,
                max_ratio=max(ratios) if ratios else float("nan"),
                ratios=ratios,
            )
        )
    kappa = max((r.max_ratio for r in records if r.ratios), default=float("nan"))
    ordered = sorted((r for r in records if r.ratios), key=lambda r: -r.radius)
    bounded = all(
        ordered[i + 1].max_ratio <= 2.0 * ordered[i].max_ratio for i in range(len(ordered) - 1)
    )
    return CalmnessReport(records=records, kappa_hat=kappa, bounded=bounded)


def error_bound_fit(
    p: ProblemInstance,
    x: Point,
    y,
    z=None,
    n_samples: int = 500,
    radius: float = 0.05,
    seed: int = 0,
) -> ErrorBoundFit:
    """Fit the two-sided constants of dist <= c R and R <= dist / c around a KKT point."""
    r0 = kkt_residual(p, x, y, z)
    if r0 > 1e-9:
        raise ValueError(f"error-bound fit needs a polished KKT point, residual {r0:.3e}")
    rng = np.random.default_rng(seed)
    y = np.asarray(y, dtype=float)
    samples = []
    ratios = []
    for _ in range(n_samples):
        xi = project_tangent(p.manifold, x, rng.standard_normal(p.manifold.ambient_shape))
        nrm = np.linalg.norm(xi)
        r = rng.uniform(0.0, radius)
        x_s = retract(p.manifold, x, (r / nrm) * xi) if nrm > 0 else x
        dy = rng.standard_normal(y.shape)
        dy *= rng.uniform(0.0, radius) / max(np.linalg.norm(dy), 1e-300)
        dz = None
        if z is not None:
            dz = rng.standard_normal(np.asarray(z).shape)
            dz *= rng.uniform(0.0, radius) / max(np.linalg.norm(dz), 1e-300)
        dist_val = distance(p.manifold, x_s, x) + float(np.linalg.norm(dy))
        z_s = None
        if z is not None:
            z_s = np.asarray(z) + dz
            dist_val += float(np.linalg.norm(dz))
        r_val = kkt_residual(p, x_s, y + dy, z_s)
        samples.append((dist_val, r_val))
        if r_val > 1e-14:
            ratios.append(dist_val / r_val)
    if not ratios:
        return ErrorBoundFit(float("nan"), float("nan"), samples, degenerate=True)
    return ErrorBoundFit(c1=min(ratios), c2=max(ratios), samples=samples)
