import numpy as np
import pytest

from pempc import (
    ExperimentConfig,
    MpcConfig,
    ParametricModel,
    find_equilibrium,
    generate_pe_reference,
)


def scalar_bilinear_model(theta1, theta2, w_bar=0.2):
    """x+ = theta1*x + theta2*x*u + u + w."""
    return ParametricModel(
        n=1,
        m=1,
        f0=(((1.0, (0,), (1,)),),),
        basis=(
            (((1.0, (1,), (0,)),),),
            (((1.0, (1,), (1,)),),),
        ),
        theta_true=np.array([theta1, theta2]),
        w_bar=w_bar,
    )


def linear_model_from_matrices(A, B):
    """Encode x+ = A x + B u with every matrix entry an unknown parameter.

    Basis map (i, l) is e_i * x_l (then e_i * u_l); theta_true stacks the
    entries of A row-major, then B.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, m = A.shape[0], B.shape[1]
    zero_rows = tuple(() for _ in range(n))
    basis = []
    theta = []
    for i in range(n):
        for l in range(n):
            rows = list(zero_rows)
            xp = [0] * n
            xp[l] = 1
            rows[i] = ((1.0, tuple(xp), (0,) * m),)
            basis.append(tuple(rows))
            theta.append(A[i, l])
    for i in range(n):
        for l in range(m):
            rows = list(zero_rows)
            up = [0] * m
            up[l] = 1
            rows[i] = ((1.0, (0,) * n, tuple(up)),)
            basis.append(tuple(rows))
            theta.append(B[i, l])
    return ParametricModel(
        n=n,
        m=m,
        f0=zero_rows,
        basis=tuple(basis),
        theta_true=np.array(theta),
        w_bar=0.0,
    )


def random_polynomial_model(rng, n=None, m=None, S=None, max_power=2):
    """Random monomial-basis model for property tests."""
    n = n or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 3))
    S = S or int(rng.integers(1, 4))
    maps = []
    for _ in range(S + 1):
        rows = []
        for _ in range(n):
            terms = []
            for _ in range(int(rng.integers(1, 4))):
                terms.append(
                    (
                        float(rng.normal()),
                        tuple(int(p) for p in rng.integers(0, max_power + 1, n)),
                        tuple(int(p) for p in rng.integers(0, max_power + 1, m)),
                    )
                )
            rows.append(tuple(terms))
        maps.append(tuple(rows))
    return ParametricModel(
        n=n,
        m=m,
        f0=maps[0],
        basis=tuple(maps[1:]),
        theta_true=rng.normal(size=S),
        w_bar=0.0,
    )


@pytest.fixture(scope="session")
def tracking_model():
    return scalar_bilinear_model(1.1, 0.1, w_bar=0.2)


@pytest.fixture(scope="session")
def origin_model():
    return scalar_bilinear_model(1.0, 0.1, w_bar=0.2)


@pytest.fixture(scope="session")
def tracking_reference(tracking_model):
    eq = find_equilibrium(tracking_model, tracking_model.theta_true, [-0.09], [1.0])
    return generate_pe_reference(
        tracking_model, tracking_model.theta_true, eq, M=4, amplitude=0.3
    )


@pytest.fixture(scope="session")
def tracking_mpc_config():
    return MpcConfig(Q=[[6.0]], R=[[0.1]], N=4)


def tracking_experiment(tracking_model, tracking_reference, **kwargs):
    defaults = dict(
        model=tracking_model,
        reference=tracking_reference,
        mpc=MpcConfig(Q=[[6.0]], R=[[0.1]], N=4),
        rls_lambda=0.9,
        rls_T=np.eye(1),
        rls_P_init=10.0 * np.eye(2),
        theta_hat_0=np.array([1.5, -0.4]),
        x0=np.array([1.0]),
        K_total=300,
        w_bar=0.2,
        seed=0,
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)
