"""Pure-numpy evaluation kernels for monomial-basis parametric models.

All functions operate on the flattened term arrays produced by
`model.ParametricModel` (one entry per monomial term):

    basis_idx : int32 (nt,)    which basis map the term belongs to (0..S)
    row_idx   : int32 (nt,)    which state row it contributes to (0..n-1)
    coeff     : float64 (nt,)
    xpow      : int32 (nt, n)  exponents of the state components
    upow      : int32 (nt, m)  exponents of the input components

The compiled twin in `_kernels_cy.pyx` implements the same signatures;
`kernels` picks one at import time.
"""

import numpy as np


def basis_values(basis_idx, row_idx, coeff, xpow, upow, n_basis, x, u):
    """Evaluate every basis map at (x, u); returns (n_basis, n).

    Overflow propagates as inf, matching the compiled backend; callers
    detect divergence with finiteness checks.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        vals = (
            coeff
            * np.prod(x[None, :] ** xpow, axis=1)
            * np.prod(u[None, :] ** upow, axis=1)
        )
        out = np.zeros((n_basis, x.shape[0]))
        np.add.at(out, (basis_idx, row_idx), vals)
    return out


def basis_jacobians(basis_idx, row_idx, coeff, xpow, upow, n_basis, x, u):
    """Exact Jacobians of every basis map at (x, u).

    Returns (Jx, Ju) with shapes (n_basis, n, n) and (n_basis, n, m).
    """
    n = x.shape[0]
    m = u.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        xprod = np.prod(x[None, :] ** xpow, axis=1)
        uprod = np.prod(u[None, :] ** upow, axis=1)
        Jx = np.zeros((n_basis, n, n))
        Ju = np.zeros((n_basis, n, m))
        for l in range(n):
            p = xpow[:, l]
            mask = p > 0
            if not mask.any():
                continue
            ex = xpow[mask].copy()
            ex[:, l] -= 1
            dvals = (
                coeff[mask]
                * p[mask]
                * np.prod(x[None, :] ** ex, axis=1)
                * uprod[mask]
            )
            np.add.at(Jx, (basis_idx[mask], row_idx[mask], np.full(mask.sum(), l)), dvals)
        for l in range(m):
            p = upow[:, l]
            mask = p > 0
            if not mask.any():
                continue
            eu = upow[mask].copy()
            eu[:, l] -= 1
            dvals = (
                coeff[mask]
                * p[mask]
                * xprod[mask]
                * np.prod(u[None, :] ** eu, axis=1)
            )
            np.add.at(Ju, (basis_idx[mask], row_idx[mask], np.full(mask.sum(), l)), dvals)
    return Jx, Ju


def step_eval(basis_idx, row_idx, coeff, xpow, upow, n_basis, theta, x, u):
    """One dynamics step f0(x,u) + sum_j theta_j f_j(x,u), no disturbance."""
    vals = basis_values(basis_idx, row_idx, coeff, xpow, upow, n_basis, x, u)
    with np.errstate(over="ignore", invalid="ignore"):
        return vals[0] + theta @ vals[1:]


def rollout(basis_idx, row_idx, coeff, xpow, upow, n_basis, theta, x0, useq):
    """Roll the noise-free dynamics N steps; returns states (N+1, n)."""
    N = useq.shape[0]
    xs = np.empty((N + 1, x0.shape[0]))
    xs[0] = x0
    for k in range(N):
        xs[k + 1] = step_eval(
            basis_idx, row_idx, coeff, xpow, upow, n_basis, theta, xs[k], useq[k]
        )
    return xs


def rollout_with_jacobians(basis_idx, row_idx, coeff, xpow, upow, n_basis, theta, x0, useq):
    """Rollout plus the per-step total Jacobians under `theta`.

    Returns (xs, As, Bs): states (N+1, n), d f/dx and d f/du at every
    visited (x_k, u_k), shapes (N, n, n) and (N, n, m).
    """
    N = useq.shape[0]
    n = x0.shape[0]
    m = useq.shape[1]
    xs = np.empty((N + 1, n))
    As = np.empty((N, n, n))
    Bs = np.empty((N, n, m))
    xs[0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            vals = basis_values(basis_idx, row_idx, coeff, xpow, upow, n_basis, xs[k], useq[k])
            Jx, Ju = basis_jacobians(
                basis_idx, row_idx, coeff, xpow, upow, n_basis, xs[k], useq[k]
            )
            xs[k + 1] = vals[0] + theta @ vals[1:]
            As[k] = Jx[0] + np.tensordot(theta, Jx[1:], axes=1)
            Bs[k] = Ju[0] + np.tensordot(theta, Ju[1:], axes=1)
    return xs, As, Bs
