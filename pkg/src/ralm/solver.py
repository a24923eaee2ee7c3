"""Inexact augmented Lagrangian outer loop with a Riemannian descent inner solver.

The outer loop alternates an inexact minimisation of the smooth augmented
Lagrangian on the manifold with closed-form multiplier updates, growing the
penalty only when the feasibility measure V fails to contract by a factor
tau.  The inner solver is Riemannian gradient descent with a Barzilai-Borwein
trial step and Armijo backtracking along the retraction, which keeps the
merit value monotone (up to floating-point slack) and terminates when the
gradient norm reaches the requested tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .convex import project_set, prox
from .manifolds import Point, RankDeficiencyError, check_point, distance, retract
from .problems import ProblemInstance, aug_lagrangian, aug_lagrangian_value, lagrangian_rgrad


class SolveStatus(Enum):
    CONVERGED = "converged"
    PARTIAL = "partial-convergence"


@dataclass
class InnerConfig:
    max_iters: int = 5000
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    init_step: float = 1.0
    # Barzilai-Borwein trial steps accelerate ill-conditioned subproblems; the
    # plain mode backtracks from init_step every iteration, which makes the
    # achieved gradient norm track the requested tolerance closely (used by
    # the fixed-penalty rate study).
    use_bb: bool = True

    def validate(self):
        if self.max_iters < 0:
            raise ValueError("inner max_iters must be >= 0")
        if not (0 < self.armijo_c < 1):
            raise ValueError("armijo_c must lie in (0, 1)")
        if not (0 < self.backtrack < 1):
            raise ValueError("backtrack must lie in (0, 1)")
        if self.init_step <= 0:
            raise ValueError("init_step must be positive")


@dataclass
class ALMConfig:
    rho0: float = 1.0
    gamma: float = 10.0
    tau: float = 0.8
    eps0: float = 1e-2
    eps_decay: float = 0.5
    eps_floor: float = 1e-12
    multiplier_bound: float = 1e8
    kkt_tol: float = 1e-7
    max_outer: int = 200
    fixed_rho: bool = False
    inner: InnerConfig = field(default_factory=InnerConfig)

    def validate(self):
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")
        if self.gamma <= 1:
            raise ValueError("gamma must be > 1")
        if not (0 < self.tau < 1):
            raise ValueError("tau must lie in (0, 1)")
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")
        if not (0 < self.eps_decay < 1):
            raise ValueError("eps_decay must lie in (0, 1)")
        if self.eps_floor <= 0:
            raise ValueError("eps_floor must be positive")
        if self.multiplier_bound <= 0:
            raise ValueError("multiplier_bound must be positive")
        if self.kkt_tol <= 0:
            raise ValueError("kkt_tol must be positive")
        if self.max_outer < 0:
            raise ValueError("max_outer must be >= 0")
        self.inner.validate()


@dataclass
class IterationRecord:
    k: int
    rho: float
    kkt_residual: float
    aux_v: float
    inner_grad_norm: float
    inner_iters: int
    eps_k: float
    wall_time: float
    dist_to_reference: float = float("nan")
    # per-iteration diagnostics backing the solver invariants
    chain_gap: float = 0.0
    residual_bound_slack: float = 0.0
    multiplier_consistency_gap: float = 0.0


@dataclass
class SubproblemResult:
    x: Point
    grad_norm: float
    iters: int
    stalled: bool = False


@dataclass
class ALMResult:
    status: SolveStatus
    x: Point
    y: np.ndarray
    z: Optional[np.ndarray]
    history: list[IterationRecord]

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED


def kkt_residual_components(p: ProblemInstance, x: Point, y, z=None):
    """The three blockwise norms whose sum is the KKT residual R.

    stationarity:  |grad_x L(x, y, z)|
    theta block:   |g1(x) - prox_theta(g1(x) + y)|
    set block:     |g2(x) - proj_Q(g2(x) + z)|   (0 when Q is absent)
    """
    grad_norm = float(np.linalg.norm(lagrangian_rgrad(p, x, y, z)))
    g1 = p.g1.value(x.ambient)
    theta_norm = float(np.linalg.norm(g1 - prox(p.theta, g1 + np.asarray(y))))
    if p.q is not None and z is not None:
        g2 = p.g2.value(x.ambient)
        set_norm = float(np.linalg.norm(g2 - project_set(p.q, g2 + np.asarray(z))))
    else:
        set_norm = 0.0
    return grad_norm, theta_norm, set_norm


def kkt_residual(p: ProblemInstance, x: Point, y, z=None) -> float:
    return float(sum(kkt_residual_components(p, x, y, z)))


def auxiliary_v(p: ProblemInstance, x: Point, y, z, rho: float) -> float:
    """Feasibility progress measure driving the penalty update.

    max( |g1(x) - prox_{theta/rho}(g1(x) + y/rho)|,
         |g2(x) - proj_Q(g2(x) + z/rho)| ).

    With the multipliers produced by ``update_multipliers`` the first term
    equals |y_next - y| / rho, so V measures the scaled multiplier increment;
    it vanishes at a KKT pair for every rho (which is what makes the
    penalty-update test meaningful).
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    g1 = p.g1.value(x.ambient)
    first = float(np.linalg.norm(g1 - prox(p.theta, g1 + np.asarray(y) / rho, 1.0 / rho)))
    second = 0.0
    if p.q is not None and z is not None:
        g2 = p.g2.value(x.ambient)
        second = float(np.linalg.norm(g2 - project_set(p.q, g2 + np.asarray(z) / rho)))
    return max(first, second)


def update_multipliers(p: ProblemInstance, x_next: Point, w, p_mult, rho: float):
    """Multiplier step: y+ = rho [u - prox_{theta/rho}(u)] with u = g1 + w/rho,
    and the analogous projection step for the set constraint."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    u = p.g1.value(x_next.ambient) + np.asarray(w) / rho
    y_next = rho * (u - prox(p.theta, u, 1.0 / rho))
    z_next = None
    if p.q is not None and p_mult is not None:
        s = p.g2.value(x_next.ambient) + np.asarray(p_mult) / rho
        z_next = rho * (s - project_set(p.q, s))
    return y_next, z_next


def penalty_update(v_new: float, v_prev, rho: float, gamma: float, tau: float, k: int) -> float:
    """Keep rho when k = 0 or V contracted by tau; otherwise multiply by gamma."""
    if gamma <= 1 or not (0 < tau < 1):
        raise ValueError("need gamma > 1 and tau in (0, 1)")
    if k == 0 or v_prev is None or v_new <= tau * v_prev:
        return rho
    return gamma * rho


def subproblem_solve(
    p: ProblemInstance,
    w,
    p_mult,
    rho: float,
    x_init: Point,
    eps: float,
    inner: Optional[InnerConfig] = None,
) -> SubproblemResult:
    """Drive |grad L_rho(x, w, p)| below eps by Riemannian gradient descent.

    Trial steps come from a safeguarded Barzilai-Borwein estimate (or the
    fixed init_step) and are backtracked until the Armijo condition holds.
    Once the requested Armijo decrease falls below the rounding noise of the
    merit value, steps are instead accepted when the value does not increase
    beyond that noise and the gradient norm does not grow; the best iterate
    seen is tracked and returned.  Retractions that drop rank count as failed
    trials and shrink the step.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    inner = inner or InnerConfig()
    x = x_init
    val, grad = aug_lagrangian(p, x, w, p_mult, rho)
    grad_norm = float(np.linalg.norm(grad))
    best_x, best_gn = x, grad_norm
    step = inner.init_step
    no_improve = 0
    it = 0
    for it in range(inner.max_iters):
        if best_gn <= eps:
            return SubproblemResult(x=best_x, grad_norm=best_gn, iters=it)
        if no_improve >= 100:
            break
        t = step
        accepted = False
        # below this decrease the merit comparison is pure rounding noise
        slack = 1e-14 * (1.0 + abs(val))
        grad_try = None
        for _ in range(60):
            try:
                x_try = retract(p.manifold, x, -t * grad)
            except RankDeficiencyError:
                t *= inner.backtrack
                continue
            val_try = aug_lagrangian_value(p, x_try, w, p_mult, rho)
            required = inner.armijo_c * t * grad_norm**2
            grad_try = None
            if required >= 10.0 * slack:
                if val_try <= val - required:
                    accepted = True
                    break
            elif val_try <= val + slack:
                # requested decrease is unresolvable in floating point; keep
                # polishing as long as the gradient norm does not grow
                _, grad_try = aug_lagrangian(p, x_try, w, p_mult, rho)
                if float(np.linalg.norm(grad_try)) <= grad_norm:
                    accepted = True
                    break
            t *= inner.backtrack
        if not accepted:
            return SubproblemResult(x=best_x, grad_norm=best_gn, iters=it, stalled=True)
        if grad_try is None:
            val_new, grad_new = aug_lagrangian(p, x_try, w, p_mult, rho)
        else:
            val_new, grad_new = val_try, grad_try
        if inner.use_bb:
            # BB1 estimate with the ambient difference as a cheap transport
            s_vec = x_try.ambient - x.ambient
            y_vec = grad_new - grad
            sy = float(np.sum(s_vec * y_vec))
            if sy > 1e-30:
                step = float(np.clip(np.sum(s_vec * s_vec) / sy, 1e-12, 1e10))
            else:
                step = min(4.0 * t, inner.init_step * 1e6)
        x, val, grad = x_try, val_new, grad_new
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < best_gn:
            best_x, best_gn = x, grad_norm
            no_improve = 0
        else:
            no_improve += 1
    stalled = best_gn > eps
    return SubproblemResult(x=best_x, grad_norm=best_gn, iters=it, stalled=stalled)


def _clip_multiplier(v, bound: float):
    if v is None:
        return None
    return np.clip(np.asarray(v, dtype=float), -bound, bound)


def _distance_to_reference(p: ProblemInstance, x, y, z, reference):
    if reference is None:
        return float("nan")
    x_ref, y_ref, z_ref = reference
    d = distance(p.manifold, x, x_ref) + float(np.linalg.norm(np.asarray(y) - np.asarray(y_ref)))
    if z is not None and z_ref is not None:
        d += float(np.linalg.norm(np.asarray(z) - np.asarray(z_ref)))
    return d


def alm_run(
    p: ProblemInstance,
    config: ALMConfig,
    x0: Point,
    y0=None,
    z0=None,
    reference=None,
) -> ALMResult:
    """Run the full method of multipliers until the KKT residual is small.

    Termination uses the max of the three residual components against
    ``config.kkt_tol``; the summed residual R is logged in the history.  The
    safeguard pair (w, p) is the componentwise clamp of the running
    multipliers to the configured bound.  The inner tolerance schedule
    couples a geometric decay with 0.1 R_k so the inexactness vanishes faster
    than the residual.

    Returns the final triple with one history record per outer iteration
    (plus a k = 0 record for the initial state).
    """
    config.validate()
    check_point(p.manifold, x0)
    y = np.zeros(p.g1.out_shape) if y0 is None else np.asarray(y0, dtype=float).copy()
    z = None
    if p.q is not None:
        z = np.zeros(p.g2.out_shape) if z0 is None else np.asarray(z0, dtype=float).copy()
    x = x0
    rho = config.rho0
    t_start = time.perf_counter()

    comps = kkt_residual_components(p, x, y, z)
    r_sum = float(sum(comps))
    history = [
        IterationRecord(
            k=0,
            rho=rho,
            kkt_residual=r_sum,
            aux_v=auxiliary_v(p, x, y, z, rho),
            inner_grad_norm=comps[0],
            inner_iters=0,
            eps_k=float("nan"),
            wall_time=time.perf_counter() - t_start,
            dist_to_reference=_distance_to_reference(p, x, y, z, reference),
        )
    ]
    if max(comps) <= config.kkt_tol:
        return ALMResult(SolveStatus.CONVERGED, x, y, z, history)

    v_prev = None
    stall_streak = 0
    best_maxcomp = max(comps)
    for k in range(config.max_outer):
        w = _clip_multiplier(y, config.multiplier_bound)
        p_mult = _clip_multiplier(z, config.multiplier_bound)
        eps_k = max(config.eps_floor, min(config.eps0 * config.eps_decay**k, 0.1 * r_sum))
        sub = subproblem_solve(p, w, p_mult, rho, x, eps_k, config.inner)
        x = sub.x
        y_new, z_new = update_multipliers(p, x, w, p_mult, rho)
        v_new = auxiliary_v(p, x, w, p_mult, rho)

        # invariant diagnostics (see module tests): chain identity, multiplier
        # consistency, and the per-iteration residual bound
        _, rg_aug = aug_lagrangian(p, x, w, p_mult, rho)
        chain_gap = float(np.linalg.norm(rg_aug - lagrangian_rgrad(p, x, y_new, z_new)))
        g1 = p.g1.value(x.ambient)
        lhs = float(np.linalg.norm(g1 - prox(p.theta, g1 + y_new)))
        rhs = float(np.linalg.norm(g1 - prox(p.theta, g1 + w / rho, 1.0 / rho)))
        mult_gap = lhs - rhs

        comps = kkt_residual_components(p, x, y_new, z_new)
        r_new = float(sum(comps))
        bound = sub.grad_norm + float(np.linalg.norm(y_new - w)) / rho
        if z_new is not None:
            bound += float(np.linalg.norm(z_new - p_mult)) / rho
        history.append(
            IterationRecord(
                k=k + 1,
                rho=rho,
                kkt_residual=r_new,
                aux_v=v_new,
                inner_grad_norm=sub.grad_norm,
                inner_iters=sub.iters,
                eps_k=eps_k,
                wall_time=time.perf_counter() - t_start,
                dist_to_reference=_distance_to_reference(p, x, y_new, z_new, reference),
                chain_gap=chain_gap,
                residual_bound_slack=r_new - bound,
                multiplier_consistency_gap=mult_gap,
            )
        )
        if not config.fixed_rho:
            rho = penalty_update(v_new, v_prev, rho, config.gamma, config.tau, k)
        y, z, v_prev, r_sum = y_new, z_new, v_new, r_new
        if max(comps) <= config.kkt_tol:
            return ALMResult(SolveStatus.CONVERGED, x, y, z, history)
        # a stalled subproblem is reported in the record but the outer loop
        # keeps going: the multiplier/penalty updates often repair it; give up
        # only after repeated stalls with no residual progress
        if sub.stalled and max(comps) >= 0.9 * best_maxcomp:
            stall_streak += 1
            if stall_streak >= 5:
                return ALMResult(SolveStatus.PARTIAL, x, y, z, history)
        else:
            stall_streak = 0
        best_maxcomp = min(best_maxcomp, max(comps))
    return ALMResult(SolveStatus.PARTIAL, x, y, z, history)
