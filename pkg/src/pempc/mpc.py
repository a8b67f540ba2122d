"""Finite-horizon reference-tracking MPC without state or input constraints.

The stage cost is |x_i - x_r(k+i)|^2_Q + |u_i - u_r(k+i)|^2_R summed over
the horizon, with predictions rolled out under the current parameter
estimate. The minimizer over the stacked input sequence is computed by
Levenberg-Marquardt on the square-root residual form, with the residual
Jacobian assembled from forward sensitivities chained along the rollout.
Only the first input of the minimizing sequence is ever applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .errors import ConfigurationError, ConvergenceFailure, RolloutDiverged


def _sym_sqrt(mat, name):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigurationError(f"{name} must be a square matrix")
    if not np.allclose(mat, mat.T, rtol=1e-12, atol=1e-12):
        raise ConfigurationError(f"{name} must be symmetric")
    evals, evecs = np.linalg.eigh(mat)
    if evals[0] <= 0:
        raise ConfigurationError(f"{name} must be positive definite")
    return (evecs * np.sqrt(evals)) @ evecs.T


@dataclass(frozen=True)
class MpcConfig:
    Q: np.ndarray
    R: np.ndarray
    N: int
    gn_tol: float = 1e-9
    max_iter: int = 50
    lm_damping: float = 0.0
    Q_sqrt: np.ndarray = field(init=False, repr=False, compare=False)
    R_sqrt: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError("horizon N must be >= 1")
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        object.__setattr__(self, "Q_sqrt", _sym_sqrt(self.Q, "Q"))
        object.__setattr__(self, "R_sqrt", _sym_sqrt(self.R, "R"))
        if self.lm_damping < 0:
            raise ConfigurationError("lm_damping must be nonnegative")


@dataclass
class MpcSolution:
    u_star: np.ndarray
    first_input: np.ndarray
    value: float
    predicted_states: np.ndarray
    iterations: int
    grad_norm: float
    cost_history: list
    hessian_lambda_min: float | None = None
    hessian_pd: bool | None = None


def _ref_windows(ref, k, N):
    xr = np.stack([ref.state_at(k + i) for i in range(N)])
    ur = np.stack([ref.input_at(k + i) for i in range(N)])
    return xr, ur


def evaluate_cost(model, theta_hat, x_k, u_seq, ref, k, cfg: MpcConfig):
    """Tracking cost of an input sequence; returns (J_N, rollout states)."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.m)
    N = u_seq.shape[0]
    x_k = mdl._as_vector(x_k, model.n, "x_k")
    xs = mdl.rollout(model, theta_hat, x_k, u_seq)
    if not np.isfinite(xs).all():
        raise RolloutDiverged("prediction rollout produced non-finite states")
    xr, ur = _ref_windows(ref, k, N)
    dx = xs[:N] - xr
    du = u_seq - ur
    J = float(np.einsum("in,nl,il->", dx, cfg.Q, dx) + np.einsum("im,ml,il->", du, cfg.R, du))
    return J, xs


def _assemble(model, theta_hat, x_k, u_seq, ref, k, cfg):
    """Residual vector, residual Jacobian, and rollout for one input sequence.

    Residual layout: N state blocks Q^{1/2}(x_i - x_r), then N input
    blocks R^{1/2}(u_i - u_r). The x_0 block is constant in u (zero
    Jacobian rows); it still contributes to the cost value.
    """
    n, m, N = model.n, model.m, cfg.N
    xs, As, Bs = mdl.rollout_with_jacobians(model, theta_hat, x_k, u_seq)
    if not np.isfinite(xs).all():
        raise RolloutDiverged("prediction rollout produced non-finite states")
    xr, ur = _ref_windows(ref, k, N)
    # sens[i] = d x_i / d u_flat, shape (n, N*m)
    sens = np.zeros((N, n, N * m))
    for i in range(1, N):
        sens[i] = As[i - 1] @ sens[i - 1]
        sens[i][:, (i - 1) * m : i * m] += Bs[i - 1]
    r = np.empty(N * (n + m))
    J = np.zeros((N * (n + m), N * m))
    for i in range(N):
        r[i * n : (i + 1) * n] = cfg.Q_sqrt @ (xs[i] - xr[i])
        J[i * n : (i + 1) * n] = cfg.Q_sqrt @ sens[i]
    off = N * n
    for i in range(N):
        r[off + i * m : off + (i + 1) * m] = cfg.R_sqrt @ (u_seq[i] - ur[i])
        J[off + i * m : off + (i + 1) * m, i * m : (i + 1) * m] = cfg.R_sqrt
    return r, J, xs


def cost_gradient(model, theta_hat, x_k, u_seq, ref, k, cfg):
    """Analytic gradient of J_N with respect to the stacked input sequence."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(cfg.N, model.m)
    r, J, _ = _assemble(model, theta_hat, x_k, u_seq, ref, k, cfg)
    return 2.0 * (J.T @ r)


def solve(model, theta_hat, x_k, ref, k, cfg: MpcConfig, warm_start=None) -> MpcSolution:
    """Minimize the horizon cost over the input sequence.

    Starts from the shifted previous solution when given, otherwise from
    the reference inputs. Terminates when the cost gradient norm drops
    below gn_tol * (1 + J_N); quadratic instances converge in a single
    Gauss-Newton step since the initial damping defaults to zero.
    """
    x_k = mdl._as_vector(x_k, model.n, "x_k")
    if warm_start is None:
        _, ur = _ref_windows(ref, k, cfg.N)
        u = ur.copy()
    else:
        u = np.asarray(warm_start, dtype=float).reshape(cfg.N, model.m).copy()

    mu = cfg.lm_damping
    r, J, xs = _assemble(model, theta_hat, x_k, u, ref, k, cfg)
    cost = float(r @ r)
    history = [cost]
    iterations = 0
    for _ in range(cfg.max_iter):
        g = 2.0 * (J.T @ r)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.gn_tol * (1.0 + cost):
            break
        H = J.T @ J
        diag_scale = float(np.max(np.diag(H))) if H.size else 1.0
        stepped = False
        for _ in range(40):
            try:
                delta = np.linalg.solve(
                    H + mu * np.eye(H.shape[0]), -(J.T @ r)
                )
            except np.linalg.LinAlgError:
                mu = max(3.0 * mu, 1e-6 * diag_scale)
                continue
            u_try = u + delta.reshape(cfg.N, model.m)
            try:
                r_try, J_try, xs_try = _assemble(model, theta_hat, x_k, u_try, ref, k, cfg)
            except RolloutDiverged:
                mu = max(3.0 * mu, 1e-6 * diag_scale)
                continue
            cost_try = float(r_try @ r_try)
            # ulp-level cost equality counts as acceptance: near the float
            # floor of the cost the refinement step still shrinks the true
            # gradient even when the cost change is below representable
            if np.isfinite(cost_try) and cost_try <= cost + 8.0 * np.finfo(float).eps * cost:
                u, r, J, xs, cost = u_try, r_try, J_try, xs_try, cost_try
                mu /= 3.0
                stepped = True
                break
            mu = max(3.0 * mu, 1e-6 * diag_scale)
        if not stepped:
            break
        iterations += 1
        history.append(cost)
    g = 2.0 * (J.T @ r)
    gnorm = float(np.linalg.norm(g))
    sol = MpcSolution(
        u_star=u,
        first_input=u[0].copy(),
        value=cost,
        predicted_states=xs,
        iterations=iterations,
        grad_norm=gnorm,
        cost_history=history,
    )
    if gnorm > cfg.gn_tol * (1.0 + cost):
        raise ConvergenceFailure(
            f"gradient norm {gnorm:.3e} above tolerance after "
            f"{iterations} accepted steps",
            best_solution=sol,
        )
    return sol


def check_hessian_pd(model, theta_hat, solution: MpcSolution, ref, k, cfg: MpcConfig, step=1e-4):
    """Smallest eigenvalue of the numerical cost Hessian at the solution.

    Central differences of the analytic gradient in the stacked input
    sequence, symmetrized. A non-positive result is reported, not raised.
    """
    u = solution.u_star.ravel()
    dim = u.size
    x_k = solution.predicted_states[0]
    H = np.empty((dim, dim))
    h = step * max(1.0, float(np.max(np.abs(u))))
    for j in range(dim):
        up = u.copy()
        um = u.copy()
        up[j] += h
        um[j] -= h
        gp = cost_gradient(model, theta_hat, x_k, up, ref, k, cfg)
        gm = cost_gradient(model, theta_hat, x_k, um, ref, k, cfg)
        H[:, j] = (gp - gm) / (2.0 * h)
    H = 0.5 * (H + H.T)
    lam_min = float(np.linalg.eigvalsh(H)[0])
    solution.hessian_lambda_min = lam_min
    solution.hessian_pd = lam_min > 0.0
    return lam_min, solution.hessian_pd
