import numpy as np
import pytest

from pempc import (
    ParametricModel,
    certify_pe,
    find_equilibrium,
    generate_pe_reference,
    linearize,
    optimize_pe_reference,
    output_reachability,
    pe_input_check,
    periodic_shoot,
)
from pempc.errors import (
    CertificationFailed,
    ConfigurationError,
    EigenvalueOneAtEquilibrium,
    NoEquilibriumFound,
    PenaltyStalled,
    PeriodicityJacobianSingular,
    ShootingDiverged,
    WindowTooShort,
)
from pempc.refgen import reference_from_dict, reference_input_sensitivity

from conftest import linear_model_from_matrices

# repo regression baselines for the scalar bilinear tracking setup,
# frozen from the converged Newton solves
XR0_BASELINE = 0.8640646593891896
ALPHA_BASELINE = 0.1781057834051922


def scalar_equilibrium_oracle(theta1, theta2, u_s):
    """x = theta1 x + theta2 x u + u solved for x."""
    return u_s / (1.0 - theta1 - theta2 * u_s)


class TestFindEquilibrium:
    def test_matches_closed_form(self, tracking_model):
        eq = find_equilibrium(tracking_model, tracking_model.theta_true, [-0.09], [1.0])
        want = scalar_equilibrium_oracle(1.1, 0.1, -0.09)
        assert abs(eq.x_s[0] - want) < 1e-12
        assert eq.residual <= 1e-10
        # documents the gap to the rounded operating pair (1, -0.09)
        assert abs(eq.x_s[0] - 1.0) > 1e-3

    def test_zero_input_gives_origin(self, tracking_model):
        eq = find_equilibrium(tracking_model, tracking_model.theta_true, [0.0], [0.5])
        assert abs(eq.x_s[0]) < 1e-12

    def test_marginal_eigenvalue_raises(self, origin_model):
        with pytest.raises(EigenvalueOneAtEquilibrium) as err:
            find_equilibrium(origin_model, origin_model.theta_true, [0.0], [0.0])
        assert err.value.equilibrium is not None
        assert abs(err.value.equilibrium.x_s[0]) < 1e-12

    def test_marginal_eigenvalue_suppressed(self, origin_model):
        eq = find_equilibrium(
            origin_model, origin_model.theta_true, [0.0], [0.0], require_hyperbolic=False
        )
        assert abs(eq.eigenvalues[0] - 1.0) < 1e-12

    def test_no_convergence_raises(self):
        # x+ = theta*x^2 + u: far guess and a single iteration cannot reach it
        model = ParametricModel(
            n=1,
            m=1,
            f0=(((1.0, (0,), (1,)),),),
            basis=((((1.0, (2,), (0,)),),),),
            theta_true=np.array([0.5]),
        )
        with pytest.raises(NoEquilibriumFound):
            find_equilibrium(model, [0.5], [0.1], [100.0], max_iter=1)


class TestPeriodicShoot:
    def test_scalar_linear_closed_form(self):
        rng = np.random.default_rng(1)
        for a in (0.8, -0.6, 1.3, -1.5):
            model = linear_model_from_matrices([[a]], [[0.7]])
            M = 5
            u_r = rng.normal(size=(M, 1))
            traj = periodic_shoot(model, model.theta_true, u_r, x_guess=[0.0])
            want = sum(a ** (M - 1 - k) * 0.7 * u_r[k, 0] for k in range(M)) / (1 - a**M)
            assert abs(traj.x_r[0, 0] - want) < 1e-10

    def test_multistate_linear_closed_form(self):
        rng = np.random.default_rng(2)
        A = np.array([[0.5, 0.2], [0.0, -0.7]])
        B = np.array([[0.0], [1.0]])
        model = linear_model_from_matrices(A, B)
        M = 4
        u_r = rng.normal(size=(M, 1))
        traj = periodic_shoot(model, model.theta_true, u_r, x_guess=[0.0, 0.0])
        forced = sum(
            np.linalg.matrix_power(A, M - 1 - k) @ B @ u_r[k] for k in range(M)
        )
        want = np.linalg.solve(np.eye(2) - np.linalg.matrix_power(A, M), forced)
        np.testing.assert_allclose(traj.x_r[0], want, atol=1e-8)

    def test_equilibrium_input_gives_constant_orbit(self, tracking_model):
        eq = find_equilibrium(tracking_model, tracking_model.theta_true, [-0.09], [1.0])
        u_r = np.tile(eq.u_s, (6, 1))
        traj = periodic_shoot(tracking_model, tracking_model.theta_true, u_r, eq.x_s)
        np.testing.assert_allclose(traj.x_r, np.tile(eq.x_s, (6, 1)), atol=1e-12)
        assert traj.feasibility_residual < 1e-12

    def test_tracking_setup_baseline(self, tracking_reference):
        assert abs(tracking_reference.x_r[0, 0] - XR0_BASELINE) < 1e-9
        assert tracking_reference.feasibility_residual <= 1e-9

    def test_roundtrip_closure(self, tracking_model, tracking_reference):
        x = tracking_reference.x_r[0]
        for k in range(tracking_reference.M):
            from pempc import step

            x = step(tracking_model, x, tracking_reference.u_r[k], tracking_model.theta_true)
        assert np.abs(x - tracking_reference.x_r[0]).max() < 1e-9

    def test_unit_eigenvalue_is_singular(self):
        model = linear_model_from_matrices([[1.0]], [[1.0]])
        with pytest.raises(PeriodicityJacobianSingular):
            periodic_shoot(model, model.theta_true, np.array([[0.3], [-0.1]]), [0.5])

    def test_divergence_raises(self):
        # strongly expanding quadratic map: the Newton iterates overflow
        model = ParametricModel(
            n=1,
            m=1,
            f0=((),),
            basis=((((1.0, (2,), (0,)),),), (((1.0, (0,), (1,)),),)),
            theta_true=np.array([4.0, 1.0]),
        )
        with pytest.raises((ShootingDiverged, PeriodicityJacobianSingular)):
            periodic_shoot(
                model, model.theta_true, np.full((3, 1), 5.0), [1e8], max_iter=8
            )


class TestInputSensitivity:
    def test_matches_linear_formula_and_rank(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(1, 4))
            A = 0.6 * rng.normal(size=(n, n))
            B = rng.normal(size=(n, 1))
            ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
            if np.linalg.matrix_rank(ctrb) < n or np.any(
                np.isclose(np.abs(np.linalg.eigvals(A)), 1.0)
            ):
                continue
            model = linear_model_from_matrices(A, B)
            M = n + int(rng.integers(0, 3))
            u_r = rng.normal(size=(M, 1))
            traj = periodic_shoot(model, model.theta_true, u_r, np.zeros(n))
            sens = reference_input_sensitivity(model, model.theta_true, traj)
            IA = np.linalg.inv(np.eye(n) - np.linalg.matrix_power(A, M))
            want = np.hstack(
                [IA @ np.linalg.matrix_power(A, M - 1 - j) @ B for j in range(M)]
            )
            np.testing.assert_allclose(sens, want, atol=1e-8)
            assert np.linalg.matrix_rank(sens, tol=1e-8) == n


class TestOutputReachability:
    def test_tracking_point_full_rank(self, tracking_model):
        lin = linearize(tracking_model, [1.0], [-0.09], tracking_model.theta_true)
        report = output_reachability(lin)
        row = report.rows[0]
        # columns are [D_1, C_1 B] computed from the exact linearization
        want = np.hstack([lin.D[0], lin.C[0] @ lin.B])
        np.testing.assert_allclose(row.matrix[:, :2], want, atol=1e-14)
        assert row.rank == 2
        assert row.output_reachable
        assert row.degree == 1
        assert report.any_reachable and report.witness == 0

    def test_origin_point_rank_deficient(self, origin_model):
        lin = linearize(origin_model, [0.0], [0.0], origin_model.theta_true)
        report = output_reachability(lin)
        np.testing.assert_allclose(
            report.rows[0].matrix[:, :2], [[0.0, 1.0], [0.0, 0.0]], atol=1e-15
        )
        assert report.rows[0].rank == 1
        assert not report.any_reachable

    def test_zero_system(self):
        model = ParametricModel(
            n=1,
            m=1,
            f0=(((1.0, (0,), (1,)),),),
            basis=((((1.0, (0,), (0,)),),),),  # constant basis: zero Jacobians
            theta_true=np.array([1.0]),
        )
        lin = linearize(model, [0.0], [0.0], model.theta_true)
        report = output_reachability(lin)
        assert report.rows[0].rank == 0
        assert not report.any_reachable


class TestPeInputCheck:
    def test_sinusoid_alpha(self):
        M = 4
        du = 0.3 * np.sin(2 * np.pi * np.arange(M) / M)
        res = pe_input_check(du.reshape(-1, 1), [0.0], window=M - 1)
        assert abs(res.alpha_u - (0.3 * np.sin(2 * np.pi / M)) ** 2) < 1e-12
        assert res.passed

    def test_constant_input_fails(self):
        res = pe_input_check(np.full((4, 1), -0.09), [-0.09], window=3)
        assert res.alpha_u == 0.0
        assert not res.passed

    def test_two_channel_brute_force(self):
        v1, v2 = np.array([1.0, 0.0]), np.array([0.3, 1.0])
        du = np.array([v1, v2, v1, v2])
        window = 3
        res = pe_input_check(du, [0.0, 0.0], window=window)
        mins = []
        for j in range(4):
            G = np.zeros((2, 2))
            for i in range(window):
                d = du[(j + i) % 4]
                G += np.outer(d, d)
            mins.append(np.linalg.eigvalsh(G)[0])
        assert abs(res.alpha_u - min(mins)) < 1e-12
        assert res.passed

    def test_window_too_short(self):
        with pytest.raises(WindowTooShort):
            pe_input_check(np.ones((4, 1)), [0.0], window=0)


class TestCertifyPe:
    def test_tracking_alpha_baseline(self, tracking_model, tracking_reference):
        cert = tracking_reference.pe
        assert cert.passed
        assert abs(cert.alpha - ALPHA_BASELINE) < 1e-12
        # brute-force window eigenvalues as an independent oracle
        from pempc import regressor

        phis = [
            regressor(tracking_model, tracking_reference.x_r[k], tracking_reference.u_r[k])
            for k in range(4)
        ]
        for j in range(4):
            G = sum(phis[(j + i) % 4] @ phis[(j + i) % 4].T for i in range(4))
            np.testing.assert_allclose(
                np.linalg.eigvalsh(G)[0], cert.per_window_min[j], atol=1e-12
            )

    def test_equilibrium_orbit_at_origin_not_exciting(self, origin_model):
        traj = periodic_shoot(
            origin_model, origin_model.theta_true, np.zeros((4, 1)), [0.0]
        )
        cert = certify_pe(origin_model, origin_model.theta_true, traj)
        assert cert.alpha == 0.0
        assert not cert.passed

    def test_rotation_invariance(self, tracking_model, tracking_reference):
        from pempc.refgen import ReferenceTrajectory

        base = certify_pe(tracking_model, tracking_model.theta_true, tracking_reference)
        for shift in range(1, 4):
            rolled = ReferenceTrajectory(
                M=4,
                x_r=np.roll(tracking_reference.x_r, -shift, axis=0),
                u_r=np.roll(tracking_reference.u_r, -shift, axis=0),
                feasibility_residual=tracking_reference.feasibility_residual,
            )
            cert = certify_pe(tracking_model, tracking_model.theta_true, rolled)
            assert abs(cert.alpha - base.alpha) < 1e-12
            assert abs(cert.beta - base.beta) < 1e-12
            assert cert.beta >= cert.alpha


class TestGeneratePeReference:
    def test_tracking_pipeline_certifies(self, tracking_reference):
        assert tracking_reference.pe.passed
        assert tracking_reference.input_check.passed
        assert abs(tracking_reference.input_check.alpha_u - 0.09) < 1e-12
        assert tracking_reference.reachability.any_reachable

    def test_zero_amplitude_fails_excitation(self, tracking_model):
        eq = find_equilibrium(tracking_model, tracking_model.theta_true, [-0.09], [1.0])
        with pytest.raises(CertificationFailed) as err:
            generate_pe_reference(tracking_model, tracking_model.theta_true, eq, 4, 0.0)
        assert err.value.stage == "pe_input_check"

    def test_origin_fails_at_reachability(self, origin_model):
        eq = find_equilibrium(
            origin_model, origin_model.theta_true, [0.0], [0.0], require_hyperbolic=False
        )
        with pytest.raises(CertificationFailed) as err:
            generate_pe_reference(origin_model, origin_model.theta_true, eq, 4, 0.3)
        assert err.value.stage == "output_reachability"

    def test_reachable_but_marginal_eigenvalue(self):
        # x+ = theta1 x + theta2 u with theta = [1, 1]: reachable rows but
        # a unit eigenvalue, so the periodicity map is singular
        model = ParametricModel(
            n=1,
            m=1,
            f0=((),),
            basis=((((1.0, (1,), (0,)),),), (((1.0, (0,), (1,)),),)),
            theta_true=np.array([1.0, 1.0]),
        )
        eq = find_equilibrium(
            model, model.theta_true, [0.0], [0.0], require_hyperbolic=False
        )
        with pytest.raises(CertificationFailed) as err:
            generate_pe_reference(model, model.theta_true, eq, 4, 0.3)
        assert err.value.stage == "equilibrium_eigenvalue"

    def test_two_input_channels_phase_staggered(self):
        # x+ = th1*x + th2*x*u1 + th3*x*u2 + u1 + 0.5*u2: one state row,
        # three parameters, reachable away from the origin
        model = ParametricModel(
            n=1,
            m=2,
            f0=(((1.0, (0,), (1, 0)), (0.5, (0,), (0, 1))),),
            basis=(
                (((1.0, (1,), (0, 0)),),),
                (((1.0, (1,), (1, 0)),),),
                (((1.0, (1,), (0, 1)),),),
            ),
            theta_true=np.array([0.9, 0.05, 0.05]),
        )
        eq = find_equilibrium(model, model.theta_true, [0.05, 0.02], [0.5])
        traj = generate_pe_reference(model, model.theta_true, eq, M=4, amplitude=0.1)
        assert traj.pe.passed
        du = traj.u_r - eq.u_s
        k = np.arange(4)
        np.testing.assert_allclose(du[:, 0], 0.1 * np.sin(2 * np.pi * k / 4), atol=1e-12)
        np.testing.assert_allclose(
            du[:, 1], 0.1 * np.sin(2 * np.pi * k / 4 + 2 * np.pi / 8), atol=1e-12
        )

    def test_prbs_shape(self, tracking_model):
        eq = find_equilibrium(tracking_model, tracking_model.theta_true, [-0.09], [1.0])
        traj = generate_pe_reference(
            tracking_model, tracking_model.theta_true, eq, 4, 0.2, shape="prbs", seed=3
        )
        assert traj.pe.passed
        du = traj.u_r - eq.u_s
        np.testing.assert_allclose(np.abs(du), 0.2, atol=1e-12)

    def test_period_below_state_dim_rejected(self, tracking_model):
        eq = find_equilibrium(tracking_model, tracking_model.theta_true, [-0.09], [1.0])
        with pytest.raises(ConfigurationError):
            generate_pe_reference(tracking_model, tracking_model.theta_true, eq, 0, 0.3)

    def test_small_pe_perturbations_stay_pe(self, tracking_model):
        # excitation transfers from the input to the trajectory for many
        # random exciting perturbations inside the Newton basin
        eq = find_equilibrium(tracking_model, tracking_model.theta_true, [-0.09], [1.0])
        rng = np.random.default_rng(8)
        checked = 0
        for _ in range(100):
            du = rng.uniform(-0.25, 0.25, size=(4, 1))
            check = pe_input_check(eq.u_s + du, eq.u_s, window=3)
            if not check.passed:
                continue
            traj = periodic_shoot(
                tracking_model, tracking_model.theta_true, eq.u_s + du, eq.x_s
            )
            cert = certify_pe(tracking_model, tracking_model.theta_true, traj)
            assert cert.alpha > 0.0
            checked += 1
        assert checked >= 90


class TestOptimizePeReference:
    def test_band_constrained_instance(self, origin_model):
        traj = optimize_pe_reference(
            origin_model, origin_model.theta_true, Q=[[6.0]], R=[[0.1]],
            M=2, alpha=0.1, beta=0.3,
        )
        assert traj.feasibility_residual <= 1e-6
        cert = certify_pe(origin_model, origin_model.theta_true, traj)
        assert cert.alpha >= 0.1 - 1e-6
        assert cert.beta <= 0.3 + 1e-6

    def test_inactive_constraint_collapses_to_origin(self, origin_model):
        traj = optimize_pe_reference(
            origin_model, origin_model.theta_true, Q=[[6.0]], R=[[0.1]],
            M=2, alpha=0.0, beta=10.0,
        )
        cost = np.mean(
            [
                6.0 * traj.x_r[i, 0] ** 2 + 0.1 * traj.u_r[i, 0] ** 2
                for i in range(traj.M)
            ]
        )
        assert cost < 1e-6

    def test_alpha_above_beta_rejected(self, origin_model):
        with pytest.raises(ConfigurationError):
            optimize_pe_reference(
                origin_model, origin_model.theta_true, Q=[[6.0]], R=[[0.1]],
                M=2, alpha=0.3, beta=0.1,
            )

    def test_penalty_stall_raises(self, origin_model):
        with pytest.raises(PenaltyStalled):
            optimize_pe_reference(
                origin_model, origin_model.theta_true, Q=[[6.0]], R=[[0.1]],
                M=2, alpha=0.1, beta=0.3, max_rounds=1, violation_tol=1e-12,
            )


def test_reference_roundtrip_via_dict(tracking_reference):
    rebuilt = reference_from_dict(tracking_reference.to_dict())
    np.testing.assert_array_equal(rebuilt.x_r, tracking_reference.x_r)
    np.testing.assert_array_equal(rebuilt.u_r, tracking_reference.u_r)
    assert rebuilt.pe.alpha == tracking_reference.pe.alpha
    assert rebuilt.input_check.window == tracking_reference.input_check.window
    assert rebuilt.reachability.rows[0].rank == tracking_reference.reachability.rows[0].rank
    assert rebuilt.equilibrium.residual == tracking_reference.equilibrium.residual
