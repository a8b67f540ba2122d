"""Discrete-time systems that are linear in an unknown parameter vector.

The dynamics are x+ = f0(x, u) + sum_j theta_j f_j(x, u) + w with every
basis map f_j a vector of polynomials. Each polynomial row is declared
as a list of monomial terms (coeff, x_powers, u_powers), which keeps the
model linear in theta and smooth by construction and gives exact
analytic Jacobians.

Regressor convention: phi(x, u) has shape (S, n) with row j equal to
f_{j+1}(x, u), so that x+ = f0 + phi.T @ theta + w and window sums
phi @ phi.T are (S, S).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError


def _as_vector(v, size, what):
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.shape != (size,):
        raise ConfigurationError(f"{what} must have shape ({size},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ParametricModel:
    """Polynomial model with unknown linear parameters.

    f0 and each entry of `basis` are lists of n rows; every row is a
    list of (coeff, x_powers, u_powers) monomial terms. `theta_true`
    is only ever read by the simulator, never by the controller or the
    estimator.
    """

    n: int
    m: int
    f0: tuple
    basis: tuple
    theta_true: np.ndarray
    w_bar: float = 0.0
    _terms: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ConfigurationError("state and input dimensions must be >= 1")
        if len(self.basis) < 1:
            raise ConfigurationError("at least one parametric basis map is required")
        maps = (self.f0,) + tuple(self.basis)
        for j, rows in enumerate(maps):
            if len(rows) != self.n:
                raise ConfigurationError(
                    f"basis map {j} has {len(rows)} rows, expected n={self.n}"
                )
        theta = _as_vector(self.theta_true, self.S, "theta_true")
        theta.setflags(write=False)
        object.__setattr__(self, "theta_true", theta)
        if not np.isfinite(self.w_bar) or self.w_bar < 0:
            raise ConfigurationError("w_bar must be a finite nonnegative number")
        object.__setattr__(self, "_terms", self._compile(maps))

    @property
    def S(self) -> int:
        return len(self.basis)

    def _compile(self, maps):
        basis_idx, row_idx, coeff, xpow, upow = [], [], [], [], []
        for j, rows in enumerate(maps):
            for i, terms in enumerate(rows):
                for term in terms:
                    try:
                        c, xp, up = term
                    except (TypeError, ValueError):
                        raise ConfigurationError(
                            f"term {term!r} is not a (coeff, x_powers, u_powers) triple"
                        )
                    xp = list(xp)
                    up = list(up)
                    if len(xp) != self.n or len(up) != self.m:
                        raise ConfigurationError(
                            f"term in map {j} row {i}: power lists must have lengths "
                            f"n={self.n} and m={self.m}"
                        )
                    for p in xp + up:
                        if int(p) != p or p < 0:
                            raise ConfigurationError(
                                f"term in map {j} row {i}: exponents must be "
                                f"nonnegative integers, got {p!r}"
                            )
                    basis_idx.append(j)
                    row_idx.append(i)
                    coeff.append(float(c))
                    xpow.append([int(p) for p in xp])
                    upow.append([int(p) for p in up])
        arrays = (
            np.asarray(basis_idx, dtype=np.int32),
            np.asarray(row_idx, dtype=np.int32),
            np.asarray(coeff, dtype=float),
            np.asarray(xpow, dtype=np.int32).reshape(len(coeff), self.n),
            np.asarray(upow, dtype=np.int32).reshape(len(coeff), self.m),
        )
        for a in arrays:
            a.setflags(write=False)
        return arrays

    def _check_xu(self, x, u):
        return _as_vector(x, self.n, "x"), _as_vector(u, self.m, "u")

    def _check_theta(self, theta):
        return _as_vector(theta, self.S, "theta")


@dataclass(frozen=True)
class Linearization:
    """First-order data at an operating point.

    A, B are the total Jacobians of f (f0 included). A_basis[j], B_basis[j]
    are the Jacobians of f_{j+1} alone. C[i] (S, n) and D[i] (S, m) stack
    row i of every A_basis[j] / B_basis[j]; they are the per-state-row
    output systems used by the reachability test.
    """

    A: np.ndarray
    B: np.ndarray
    A_basis: np.ndarray
    B_basis: np.ndarray
    C: np.ndarray
    D: np.ndarray
    x_op: np.ndarray
    u_op: np.ndarray
    theta: np.ndarray


def step(model: ParametricModel, x, u, theta, w=None) -> np.ndarray:
    """One step of the dynamics: f0(x,u) + sum_j theta_j f_j(x,u) + w."""
    x, u = model._check_xu(x, u)
    theta = model._check_theta(theta)
    out = kernels.step_eval(*model._terms, model.S + 1, theta, x, u)
    if w is not None:
        out = out + _as_vector(w, model.n, "w")
    return out


def f0_value(model: ParametricModel, x, u) -> np.ndarray:
    """The parameter-free part f0(x, u)."""
    x, u = model._check_xu(x, u)
    return kernels.basis_values(*model._terms, model.S + 1, x, u)[0]


def regressor(model: ParametricModel, x, u) -> np.ndarray:
    """Regressor phi(x, u), shape (S, n), row j = f_{j+1}(x, u).

    Depends on (x, u) only; satisfies step(x,u,theta) = f0 + phi.T @ theta
    for every theta.
    """
    x, u = model._check_xu(x, u)
    return kernels.basis_values(*model._terms, model.S + 1, x, u)[1:]


def linearize(model: ParametricModel, x_op, u_op, theta) -> Linearization:
    """Analytic linearization of the model at (x_op, u_op) for a given theta."""
    x_op, u_op = model._check_xu(x_op, u_op)
    theta = model._check_theta(theta)
    Jx, Ju = kernels.basis_jacobians(*model._terms, model.S + 1, x_op, u_op)
    A = Jx[0] + np.tensordot(theta, Jx[1:], axes=1)
    B = Ju[0] + np.tensordot(theta, Ju[1:], axes=1)
    return Linearization(
        A=A,
        B=B,
        A_basis=Jx[1:],
        B_basis=Ju[1:],
        C=np.ascontiguousarray(Jx[1:].transpose(1, 0, 2)),
        D=np.ascontiguousarray(Ju[1:].transpose(1, 0, 2)),
        x_op=x_op,
        u_op=u_op,
        theta=theta,
    )


def rollout(model: ParametricModel, theta, x0, u_seq) -> np.ndarray:
    """Noise-free N-step rollout; returns the (N+1, n) state sequence."""
    x0 = _as_vector(x0, model.n, "x0")
    theta = model._check_theta(theta)
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.m)
    return kernels.rollout(*model._terms, model.S + 1, theta, x0, u_seq)


def rollout_with_jacobians(model: ParametricModel, theta, x0, u_seq):
    """Rollout plus per-step total Jacobians (states, As, Bs)."""
    x0 = _as_vector(x0, model.n, "x0")
    theta = model._check_theta(theta)
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.m)
    return kernels.rollout_with_jacobians(*model._terms, model.S + 1, theta, x0, u_seq)
