import numpy as np
import pytest

from ralm.analysis import (
    calmness_probe,
    condition_report,
    critical_cone_member,
    error_bound_fit,
    msosc_check,
    msrcq_check,
    natural_map,
    polish_kkt,
)
from ralm.convex import ScaledL1
from ralm.manifolds import Sphere, random_point, random_tangent, sphere_point
from ralm.problems import (
    RMC,
    SPHERE_L1_DEMO_A,
    CircleExample,
    Objective,
    ProblemInstance,
    SmoothMap,
    SphereL1,
    build_family,
    tilted_instance,
)
from ralm.solver import ALMConfig, alm_run, kkt_residual

RT2 = np.sqrt(2.0) / 2.0


def circle_solution():
    return sphere_point([RT2, RT2]), np.array([RT2]), np.array([0.0])


def solved_sphere_demo():
    p = build_family(SphereL1(SPHERE_L1_DEMO_A, mu=0.25))
    res = alm_run(p, ALMConfig(), sphere_point(np.ones(5) / np.sqrt(5)))
    trip = polish_kkt(p, res.x, res.y, res.z, tol=1e-10)
    return p, trip


class TestNaturalMap:
    def test_zero_at_known_solution(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        nm = natural_map(p, x, y, z)
        assert np.linalg.norm(nm.stacked) <= 1e-12

    def test_blockwise_norms_sum_to_residual(self):
        p = build_family(CircleExample())
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = random_point(p.manifold, rng)
            y = rng.standard_normal(1)
            z = rng.standard_normal(1)
            nm = natural_map(p, x, y, z)
            total = (
                np.linalg.norm(nm.grad_block)
                + np.linalg.norm(nm.theta_block)
                + np.linalg.norm(nm.set_block)
            )
            assert total == pytest.approx(kkt_residual(p, x, y, z), abs=1e-13)

    def test_residual_zero_iff_map_zero(self):
        p, trip = solved_sphere_demo()
        nm = natural_map(p, trip.x, trip.y, trip.z)
        assert np.linalg.norm(nm.stacked) <= 10 * max(trip.residual, 1e-12)

    def test_perturbing_y_off_kink_moves_first_block_only(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        delta = 1e-3  # stays inside the prox-inactive band |g1 + y| < mu
        nm0 = natural_map(p, x, y, z)
        nm1 = natural_map(p, x, y + delta, z)
        np.testing.assert_allclose(nm1.theta_block, nm0.theta_block, atol=1e-15)
        np.testing.assert_allclose(nm1.set_block, nm0.set_block, atol=1e-15)
        expected = p.g1.jacobian_adjoint(x.ambient, np.array([delta]))
        moved = nm1.grad_block - nm0.grad_block
        from ralm.manifolds import project_tangent

        np.testing.assert_allclose(moved, project_tangent(p.manifold, x, expected), atol=1e-14)


class TestCriticalCone:
    def test_zero_direction_is_member(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        assert critical_cone_member(p, x, z, np.zeros(2))

    def test_circle_rejects_all_nonzero_tangents(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        rng = np.random.default_rng(1)
        for _ in range(100):
            v = float(rng.standard_normal())
            if abs(v) < 1e-8:
                continue
            xi = v * np.array([RT2, -RT2])
            assert not critical_cone_member(p, x, z, xi)

    def test_sphere_demo_rejects_tangents(self):
        p, trip = solved_sphere_demo()
        rng = np.random.default_rng(2)
        for _ in range(50):
            xi = random_tangent(p.manifold, trip.x, rng)
            if np.linalg.norm(xi) < 1e-8:
                continue
            assert not critical_cone_member(p, trip.x, trip.z, xi)

    def test_nontangent_direction_rejected_as_precondition(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        with pytest.raises(ValueError):
            critical_cone_member(p, x, z, x.ambient.copy())


def constant_zero_map(n):
    return SmoothMap(
        value=lambda x: np.zeros(1),
        jacobian_apply=lambda x, xi: np.zeros(1),
        jacobian_adjoint=lambda x, y: np.zeros(n),
        out_shape=(1,),
        linear=True,
    )


class TestMsrcq:
    def test_circle_passes(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        rep = msrcq_check(p, x, y, z)
        assert rep.passed
        assert rep.rank_found == rep.rank_required == 2

    def test_sphere_demo_passes(self):
        p, trip = solved_sphere_demo()
        assert msrcq_check(p, trip.x, trip.y, trip.z).passed

    def test_degenerate_zero_map_fails(self):
        # g1 identically zero into R with theta = |.|: the image space cannot
        # be spanned, rank 0 < 1
        n = 3
        p = ProblemInstance(
            manifold=Sphere(n),
            f=Objective(value=lambda x: 0.0, egrad=lambda x: np.zeros(n)),
            g1=constant_zero_map(n),
            theta=ScaledL1(1.0),
            label="degenerate",
        )
        x = random_point(p.manifold, 0)
        rep = msrcq_check(p, x, np.zeros(1))
        assert not rep.passed
        assert rep.rank_found == 0

    def test_requires_approximate_kkt(self):
        p = build_family(CircleExample())
        x = sphere_point([1.0, 0.0])
        with pytest.raises(ValueError):
            msrcq_check(p, x, np.zeros(1), np.zeros(1))

    def test_random_sphere_instances_all_pass(self):
        for seed in range(1, 9):
            rng = np.random.default_rng(seed)
            p = build_family(SphereL1(rng.standard_normal((10, 10)), mu=0.25))
            res = alm_run(p, ALMConfig(), random_point(p.manifold, seed + 50))
            trip = polish_kkt(p, res.x, res.y, res.z, tol=1e-10)
            assert msrcq_check(p, trip.x, trip.y, trip.z).passed


class TestMsosc:
    def test_circle_vacuous(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        rep = msosc_check(p, x, y, z)
        assert rep.status == "vacuous"
        assert rep.passed

    def test_sphere_demo_vacuous(self):
        p, trip = solved_sphere_demo()
        assert msosc_check(p, trip.x, trip.y, trip.z).status == "vacuous"

    def test_saddle_with_disabled_penalty_fails(self):
        # f(x) = -x1^2 on the sphere with the penalty off: x = e2 is a saddle
        # KKT point whose critical cone is the whole tangent space, and the
        # curvature along e1 is negative
        n = 2
        p = ProblemInstance(
            manifold=Sphere(n),
            f=Objective(
                value=lambda x: -float(x[0] ** 2),
                egrad=lambda x: np.array([-2.0 * x[0], 0.0]),
                ehess_apply=lambda x, xi: np.array([-2.0 * xi[0], 0.0]),
            ),
            g1=SmoothMap(
                value=lambda x: x.copy(),
                jacobian_apply=lambda x, xi: xi.copy(),
                jacobian_adjoint=lambda x, y: y.copy(),
                out_shape=(n,),
                linear=True,
            ),
            theta=ScaledL1(0.0),
            label="saddle",
        )
        x = sphere_point([0.0, 1.0])
        y = np.zeros(2)
        assert kkt_residual(p, x, y) <= 1e-12
        rep = msosc_check(p, x, y, n_samples=20)
        assert rep.status == "fail"
        assert rep.min_value < 0

    def test_positive_curvature_passes(self):
        # f(x) = x1^2 on the sphere at the same point: minimum, cone is full
        # tangent space, curvature positive
        n = 2
        p = ProblemInstance(
            manifold=Sphere(n),
            f=Objective(
                value=lambda x: float(x[0] ** 2),
                egrad=lambda x: np.array([2.0 * x[0], 0.0]),
                ehess_apply=lambda x, xi: np.array([2.0 * xi[0], 0.0]),
            ),
            g1=SmoothMap(
                value=lambda x: x.copy(),
                jacobian_apply=lambda x, xi: xi.copy(),
                jacobian_adjoint=lambda x, y: y.copy(),
                out_shape=(n,),
                linear=True,
            ),
            theta=ScaledL1(0.0),
            label="minimum",
        )
        x = sphere_point([0.0, 1.0])
        rep = msosc_check(p, x, np.zeros(2), n_samples=20)
        assert rep.status == "pass"
        assert rep.min_value > 0

    def test_rmc_basic_vacuous(self):
        from ralm.cli import rmc_basic_instance
        from ralm.manifolds import FixedRank, nearest_rank_r

        a, mask, a_exact = rmc_basic_instance(42)
        p = build_family(RMC(a, mask, 3))
        x0 = nearest_rank_r(FixedRank(5, 5, 3), a)
        res = alm_run(p, ALMConfig(), x0)
        trip = polish_kkt(p, res.x, res.y, res.z, tol=1e-10)
        rep = condition_report(p, trip.x, trip.y, trip.z)
        assert rep.msrcq.passed
        assert rep.msosc.status == "vacuous"
        assert rep.critical_cone_trivial


class TestCalmnessProbe:
    def test_circle_ratios_bounded(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        rep = calmness_probe(p, x, y, z, radii=(1e-2, 1e-3), trials_per_radius=5, seed=0)
        assert all(r.failures == 0 for r in rep.records)
        assert np.isfinite(rep.kappa_hat)

    def test_requires_polished_point(self):
        p = build_family(CircleExample())
        x0 = sphere_point([1.0, 0.0])
        with pytest.raises(ValueError):
            calmness_probe(p, x0, np.zeros(1), np.zeros(1))

    def test_threaded_matches_sequential(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        seq = calmness_probe(p, x, y, z, radii=(1e-3,), trials_per_radius=6, seed=3)
        par = calmness_probe(p, x, y, z, radii=(1e-3,), trials_per_radius=6, seed=3, jobs=3)
        np.testing.assert_allclose(seq.records[0].ratios, par.records[0].ratios)

    def test_constraint_shift_moves_solution_linearly(self):
        # displacement under a shift of the nonsmooth argument scales like the
        # shift: re-solve at two magnitudes and compare
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        moves = []
        for delta in (1e-3, 1e-4):
            pert = tilted_instance(p, b=np.array([delta]))
            cfg = ALMConfig(rho0=100.0, kkt_tol=1e-12, eps_floor=1e-13, max_outer=200)
            res = alm_run(pert, cfg, x, y, z)
            assert res.converged
            moves.append(np.linalg.norm(res.x.ambient - x.ambient))
        ratio = moves[0] / moves[1]
        assert 5.0 <= ratio <= 20.0


def solved_rmc_basic():
    from ralm.cli import rmc_basic_instance
    from ralm.manifolds import FixedRank, nearest_rank_r

    a, mask, _ = rmc_basic_instance(42)
    p = build_family(RMC(a, mask, 3))
    res = alm_run(p, ALMConfig(), nearest_rank_r(FixedRank(5, 5, 3), a))
    return p, polish_kkt(p, res.x, res.y, res.z, tol=1e-10)


class TestBuiltinFamilyProbes:
    def test_natural_map_matches_residual_on_random_triples_and_kkt_points(self):
        p_circle = build_family(CircleExample())
        rng = np.random.default_rng(31)
        for _ in range(200):
            x = random_point(p_circle.manifold, rng)
            y = rng.standard_normal(1)
            z = rng.standard_normal(1)
            nm = natural_map(p_circle, x, y, z)
            total = (
                np.linalg.norm(nm.grad_block)
                + np.linalg.norm(nm.theta_block)
                + np.linalg.norm(nm.set_block)
            )
            r = kkt_residual(p_circle, x, y, z)
            assert total == pytest.approx(r, abs=1e-13)
            assert (r <= 1e-12) == (np.linalg.norm(nm.stacked) <= 1e-12)
        # the three built-in KKT points are zeros of both
        x, y, z = circle_solution()
        assert np.linalg.norm(natural_map(p_circle, x, y, z).stacked) <= 1e-12
        p_s, trip_s = solved_sphere_demo()
        assert np.linalg.norm(natural_map(p_s, trip_s.x, trip_s.y, trip_s.z).stacked) <= 1e-9
        p_r, trip_r = solved_rmc_basic()
        assert np.linalg.norm(natural_map(p_r, trip_r.x, trip_r.y, trip_r.z).stacked) <= 1e-9

    def test_polished_triple_residual_consistent(self):
        p, trip = solved_sphere_demo()
        assert abs(kkt_residual(p, trip.x, trip.y, trip.z) - trip.residual) <= 1e-12

    def test_error_bound_positive_for_all_families(self):
        p_c = build_family(CircleExample())
        x, y, z = circle_solution()
        for p, xx, yy, zz in [
            (p_c, x, y, z),
            (*_unpack(solved_sphere_demo()),),
            (*_unpack(solved_rmc_basic()),),
        ]:
            fit = error_bound_fit(p, xx, yy, zz, n_samples=150, radius=0.05, seed=2)
            assert not fit.degenerate
            assert fit.c1 > 0

    def test_calmness_bounded_where_the_asymptotic_regime_is_reached(self):
        # circle and the fixed 5x5 completion instance satisfy the wide-range
        # comparison; the stiff sphere instance only reaches its modulus below
        # radius ~1e-4 (the active set changes at larger radii), so it is
        # compared across the two smallest decades
        p_c = build_family(CircleExample())
        x, y, z = circle_solution()
        rep = calmness_probe(p_c, x, y, z, radii=(1e-2, 1e-5), trials_per_radius=10, seed=1)
        assert rep.records[1].max_ratio <= 2.0 * rep.records[0].max_ratio

        p_r, trip_r = solved_rmc_basic()
        rep_r = calmness_probe(
            p_r, trip_r.x, trip_r.y, trip_r.z, radii=(1e-2, 1e-5), trials_per_radius=10, seed=1
        )
        assert rep_r.records[1].max_ratio <= 2.0 * rep_r.records[0].max_ratio

        p_s, trip_s = solved_sphere_demo()
        rep_s = calmness_probe(
            p_s, trip_s.x, trip_s.y, trip_s.z, radii=(1e-4, 1e-5), trials_per_radius=10, seed=1
        )
        assert rep_s.records[1].max_ratio <= 2.0 * rep_s.records[0].max_ratio


def _unpack(pair):
    p, trip = pair
    return p, trip.x, trip.y, trip.z


class TestErrorBoundFit:
    def test_circle_constants_finite_positive(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        fit = error_bound_fit(p, x, y, z, n_samples=200, radius=0.05, seed=1)
        assert not fit.degenerate
        assert 0 < fit.c1 <= fit.c2 < np.inf
        assert len(fit.samples) == 200

    def test_sample_at_solution_excluded(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        fit = error_bound_fit(p, x, y, z, n_samples=50, radius=0.01, seed=2)
        # every kept ratio comes from a sample with positive residual
        assert all(r > 1e-14 for _, r in fit.samples if r > 1e-14)

    def test_pure_multiplier_perturbation_scales_linearly(self):
        p = build_family(CircleExample())
        x, y, z = circle_solution()
        vals = []
        for delta in (1e-3, 1e-4):
            r = kkt_residual(p, x, y + delta, z)
            vals.append(r)
        assert vals[0] / vals[1] == pytest.approx(10.0, rel=1e-6)

    def test_requires_polished_point(self):
        p = build_family(CircleExample())
        with pytest.raises(ValueError):
            error_bound_fit(p, sphere_point([1.0, 0.0]), np.zeros(1), np.zeros(1))
