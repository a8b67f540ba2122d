"""Multi-output recursive least squares with constant forgetting factor.

State update, consuming one data pair (phi_k, x_{k+1}) per call with
xtilde = x_{k+1} - f0(x_k, u_k):

    D      = lambda T + phi^T P phi
    theta+ = theta + P phi D^{-1} (xtilde - phi^T theta)
    P+     = (1/lambda) (I - P phi D^{-1} phi^T) P

P is re-symmetrized every step. The pairing of theta with the previous
P is chosen so that the recursion reproduces, at every k, the exact
minimizer of the exponentially weighted batch cost

    lambda^k |theta0 - theta|^2_{P0^{-1}}
        + sum_i lambda^{k-i} |xtilde_i - phi_{i-1}^T theta|^2_{T^{-1}},

which the test suite enforces against a direct normal-equations solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, IllConditionedUpdate


def _check_spd(mat, name):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigurationError(f"{name} must be square")
    if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
        raise ConfigurationError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat)[0] <= 0:
        raise ConfigurationError(f"{name} must be positive definite")
    return mat


@dataclass(frozen=True)
class RlsState:
    theta_hat: np.ndarray
    P: np.ndarray
    lam: float
    T: np.ndarray
    k: int = 0

    def __post_init__(self):
        if not (0.0 < self.lam < 1.0):
            raise ConfigurationError("forgetting factor must lie strictly in (0, 1)")
        object.__setattr__(self, "theta_hat", np.asarray(self.theta_hat, dtype=float).ravel())
        object.__setattr__(self, "P", _check_spd(self.P, "P"))
        object.__setattr__(self, "T", _check_spd(self.T, "T"))
        if self.P.shape[0] != self.theta_hat.shape[0]:
            raise ConfigurationError("P and theta_hat dimensions disagree")


def predict_error(state: RlsState, phi, x_next, f0_val) -> np.ndarray:
    """Innovation xtilde - phi^T theta_hat before the update."""
    phi = np.asarray(phi, dtype=float)
    xtilde = np.asarray(x_next, dtype=float).ravel() - np.asarray(f0_val, dtype=float).ravel()
    return xtilde - phi.T @ state.theta_hat


def rls_update(state: RlsState, phi, x_next, f0_val) -> RlsState:
    """Consume one data pair and return the next estimator state.

    Raises IllConditionedUpdate when the innovation weighting D is
    numerically singular; the caller may then skip the sample.
    """
    phi = np.asarray(phi, dtype=float)
    S = state.theta_hat.shape[0]
    n = state.T.shape[0]
    if phi.shape != (S, n):
        raise ConfigurationError(f"phi must have shape ({S}, {n}), got {phi.shape}")
    innovation = predict_error(state, phi, x_next, f0_val)
    Pphi = state.P @ phi
    D = state.lam * state.T + phi.T @ Pphi
    D = 0.5 * (D + D.T)
    evals = np.linalg.eigvalsh(D)
    if evals[0] <= np.finfo(float).eps * max(evals[-1], 0.0):
        raise IllConditionedUpdate(
            f"innovation weighting matrix is numerically singular "
            f"(eigenvalues {evals[0]:.3e} .. {evals[-1]:.3e})"
        )
    gain = np.linalg.solve(D, Pphi.T).T  # P phi D^{-1}, shape (S, n)
    theta_new = state.theta_hat + gain @ innovation
    P_new = (state.P - gain @ Pphi.T) / state.lam
    P_new = 0.5 * (P_new + P_new.T)
    return RlsState(theta_hat=theta_new, P=P_new, lam=state.lam, T=state.T, k=state.k + 1)
