import numpy as np
import pytest

from pempc import ParametricModel, f0_value, linearize, regressor, step
from pempc.errors import ConfigurationError

from conftest import random_polynomial_model


def test_step_scalar_example(tracking_model):
    out = step(tracking_model, [1.0], [-0.09], tracking_model.theta_true, [0.0])
    # 1.1*1 + 0.1*(1*-0.09) + (-0.09): the rounded steady pair leaves a
    # residual of 0.001, which is why the equilibrium solver refines it
    assert abs(out[0] - 1.001) < 1e-15


def test_step_zero_theta_kills_basis():
    model = ParametricModel(
        n=1,
        m=1,
        f0=((),),
        basis=((((1.0, (1,), (0,)),),), (((2.0, (2,), (1,)),),)),
        theta_true=np.zeros(2),
    )
    out = step(model, [1.7], [0.3], np.zeros(2))
    assert out[0] == 0.0


def test_step_equals_f0_plus_phi_theta():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        model = random_polynomial_model(rng)
        x = rng.normal(size=model.n)
        u = rng.normal(size=model.m)
        theta = rng.normal(size=model.S)
        lhs = step(model, x, u, theta)
        rhs = f0_value(model, x, u) + regressor(model, x, u).T @ theta
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    assert worst < 1e-12


def test_regressor_scalar_example(tracking_model):
    phi = regressor(tracking_model, [1.0], [-0.09])
    np.testing.assert_allclose(phi, [[1.0], [-0.09]], atol=1e-15)


def test_regressor_vanishes_at_origin(origin_model):
    phi = regressor(origin_model, [0.0], [0.0])
    assert np.all(phi == 0.0)


def test_linearize_tracking_point(tracking_model):
    lin = linearize(tracking_model, [1.0], [-0.09], tracking_model.theta_true)
    # A = theta1 + theta2*u, B = theta2*x + 1 by direct differentiation
    assert abs(lin.A[0, 0] - 1.091) < 1e-12
    assert abs(lin.B[0, 0] - 1.1) < 1e-12
    assert abs(lin.A_basis[0][0, 0] - 1.0) < 1e-15
    assert abs(lin.B_basis[0][0, 0] - 0.0) < 1e-15
    assert abs(lin.A_basis[1][0, 0] - (-0.09)) < 1e-15
    assert abs(lin.B_basis[1][0, 0] - 1.0) < 1e-15
    np.testing.assert_allclose(lin.C[0].ravel(), [1.0, -0.09], atol=1e-15)
    np.testing.assert_allclose(lin.D[0].ravel(), [0.0, 1.0], atol=1e-15)


def test_linearize_origin_point(origin_model):
    lin = linearize(origin_model, [0.0], [0.0], origin_model.theta_true)
    assert abs(lin.A[0, 0] - 1.0) < 1e-15
    assert abs(lin.B[0, 0] - 1.0) < 1e-15
    assert lin.A_basis[1][0, 0] == 0.0
    assert lin.B_basis[1][0, 0] == 0.0
    np.testing.assert_allclose(lin.C[0].ravel(), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(lin.D[0].ravel(), [0.0, 0.0], atol=1e-15)


def _fd_jacobians(model, x, u, theta, h=1e-5):
    n, m = model.n, model.m
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    for l in range(n):
        xp, xm = x.copy(), x.copy()
        xp[l] += h
        xm[l] -= h
        A[:, l] = (step(model, xp, u, theta) - step(model, xm, u, theta)) / (2 * h)
    for l in range(m):
        up, um = u.copy(), u.copy()
        up[l] += h
        um[l] -= h
        B[:, l] = (step(model, x, up, theta) - step(model, x, um, theta)) / (2 * h)
    return A, B


def test_linearize_matches_finite_differences():
    rng = np.random.default_rng(42)
    for _ in range(20):
        model = random_polynomial_model(rng)
        x = rng.normal(size=model.n)
        u = rng.normal(size=model.m)
        theta = rng.normal(size=model.S)
        lin = linearize(model, x, u, theta)
        A_fd, B_fd = _fd_jacobians(model, x, u, theta)
        scale = max(1.0, np.abs(A_fd).max(), np.abs(B_fd).max())
        assert np.abs(lin.A - A_fd).max() / scale < 1e-6
        assert np.abs(lin.B - B_fd).max() / scale < 1e-6


def test_reshape_consistency():
    rng = np.random.default_rng(5)
    for _ in range(10):
        model = random_polynomial_model(rng)
        x = rng.normal(size=model.n)
        u = rng.normal(size=model.m)
        lin = linearize(model, x, u, rng.normal(size=model.S))
        for i in range(model.n):
            for j in range(model.S):
                np.testing.assert_array_equal(lin.C[i][j], lin.A_basis[j][i])
                np.testing.assert_array_equal(lin.D[i][j], lin.B_basis[j][i])


def test_dimension_mismatch_raises(tracking_model):
    with pytest.raises(ConfigurationError):
        step(tracking_model, [1.0, 2.0], [0.0], tracking_model.theta_true)
    with pytest.raises(ConfigurationError):
        step(tracking_model, [1.0], [0.0], [1.0, 2.0, 3.0])
    with pytest.raises(ConfigurationError):
        regressor(tracking_model, [1.0], [0.0, 0.0])


def test_invalid_exponents_rejected():
    with pytest.raises(ConfigurationError):
        ParametricModel(
            n=1,
            m=1,
            f0=((),),
            basis=((((1.0, (-1,), (0,)),),),),
            theta_true=np.ones(1),
        )
    with pytest.raises(ConfigurationError):
        ParametricModel(
            n=1,
            m=1,
            f0=((),),
            basis=((((1.0, (0.5,), (0,)),),),),
            theta_true=np.ones(1),
        )


def test_model_is_frozen(tracking_model):
    assert not tracking_model.theta_true.flags.writeable
    for arr in tracking_model._terms:
        assert not arr.flags.writeable
    with pytest.raises(AttributeError):
        tracking_model.n = 2
