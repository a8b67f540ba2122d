# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of _kernels_py: same signatures, C loops over the terms."""

import numpy as np


cdef inline double ipow(double base, int e) noexcept nogil:
    cdef double r = 1.0
    cdef int i
    for i in range(e):
        r *= base
    return r


cdef inline double term_value(const double[:] x, const double[:] u,
                              const int[:, :] xpow, const int[:, :] upow,
                              Py_ssize_t t) noexcept nogil:
    cdef double v = 1.0
    cdef Py_ssize_t l
    for l in range(x.shape[0]):
        v *= ipow(x[l], xpow[t, l])
    for l in range(u.shape[0]):
        v *= ipow(u[l], upow[t, l])
    return v


def basis_values(const int[:] basis_idx, const int[:] row_idx, const double[:] coeff,
                 const int[:, :] xpow, const int[:, :] upow, int n_basis,
                 const double[:] x, const double[:] u):
    out = np.zeros((n_basis, x.shape[0]))
    cdef double[:, :] o = out
    cdef Py_ssize_t t
    for t in range(coeff.shape[0]):
        o[basis_idx[t], row_idx[t]] += coeff[t] * term_value(x, u, xpow, upow, t)
    return out


def basis_jacobians(const int[:] basis_idx, const int[:] row_idx, const double[:] coeff,
                    const int[:, :] xpow, const int[:, :] upow, int n_basis,
                    const double[:] x, const double[:] u):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = u.shape[0]
    Jx = np.zeros((n_basis, n, n))
    Ju = np.zeros((n_basis, n, m))
    cdef double[:, :, :] jx = Jx
    cdef double[:, :, :] ju = Ju
    cdef Py_ssize_t t, l, l2
    cdef int p
    cdef double d
    for t in range(coeff.shape[0]):
        for l in range(n):
            p = xpow[t, l]
            if p == 0:
                continue
            d = coeff[t] * p * ipow(x[l], p - 1)
            for l2 in range(n):
                if l2 != l:
                    d *= ipow(x[l2], xpow[t, l2])
            for l2 in range(m):
                d *= ipow(u[l2], upow[t, l2])
            jx[basis_idx[t], row_idx[t], l] += d
        for l in range(m):
            p = upow[t, l]
            if p == 0:
                continue
            d = coeff[t] * p * ipow(u[l], p - 1)
            for l2 in range(n):
                d *= ipow(x[l2], xpow[t, l2])
            for l2 in range(m):
                if l2 != l:
                    d *= ipow(u[l2], upow[t, l2])
            ju[basis_idx[t], row_idx[t], l] += d
    return Jx, Ju


cdef inline void _step_into(const int[:] basis_idx, const int[:] row_idx,
                            const double[:] coeff, const int[:, :] xpow,
                            const int[:, :] upow, const double[:] theta,
                            const double[:] x, const double[:] u,
                            double[:] out) noexcept nogil:
    cdef Py_ssize_t t
    cdef int j
    cdef double w
    for t in range(out.shape[0]):
        out[t] = 0.0
    for t in range(coeff.shape[0]):
        j = basis_idx[t]
        w = 1.0 if j == 0 else theta[j - 1]
        out[row_idx[t]] += w * coeff[t] * term_value(x, u, xpow, upow, t)


def step_eval(const int[:] basis_idx, const int[:] row_idx, const double[:] coeff,
              const int[:, :] xpow, const int[:, :] upow, int n_basis,
              const double[:] theta, const double[:] x, const double[:] u):
    out = np.empty(x.shape[0])
    cdef double[:] o = out
    _step_into(basis_idx, row_idx, coeff, xpow, upow, theta, x, u, o)
    return out


def rollout(const int[:] basis_idx, const int[:] row_idx, const double[:] coeff,
            const int[:, :] xpow, const int[:, :] upow, int n_basis,
            const double[:] theta, const double[:] x0, const double[:, :] useq):
    cdef Py_ssize_t N = useq.shape[0]
    cdef Py_ssize_t n = x0.shape[0]
    xs = np.empty((N + 1, n))
    cdef double[:, :] xv = xs
    cdef Py_ssize_t k, i
    for i in range(n):
        xv[0, i] = x0[i]
    for k in range(N):
        _step_into(basis_idx, row_idx, coeff, xpow, upow, theta,
                   xv[k, :], useq[k, :], xv[k + 1, :])
    return xs


def rollout_with_jacobians(const int[:] basis_idx, const int[:] row_idx,
                           const double[:] coeff, const int[:, :] xpow,
                           const int[:, :] upow, int n_basis,
                           const double[:] theta, const double[:] x0,
                           const double[:, :] useq):
    cdef Py_ssize_t N = useq.shape[0]
    cdef Py_ssize_t n = x0.shape[0]
    cdef Py_ssize_t m = useq.shape[1]
    xs = np.empty((N + 1, n))
    As = np.zeros((N, n, n))
    Bs = np.zeros((N, n, m))
    cdef double[:, :] xv = xs
    cdef double[:, :, :] av = As
    cdef double[:, :, :] bv = Bs
    cdef Py_ssize_t k, t, l, l2, i
    cdef int j, p
    cdef double w, d
    cdef const double[:] xk
    cdef const double[:] uk
    for i in range(n):
        xv[0, i] = x0[i]
    for k in range(N):
        xk = xv[k, :]
        uk = useq[k, :]
        _step_into(basis_idx, row_idx, coeff, xpow, upow, theta, xk, uk, xv[k + 1, :])
        for t in range(coeff.shape[0]):
            j = basis_idx[t]
            w = 1.0 if j == 0 else theta[j - 1]
            w *= coeff[t]
            for l in range(n):
                p = xpow[t, l]
                if p == 0:
                    continue
                d = w * p * ipow(xk[l], p - 1)
                for l2 in range(n):
                    if l2 != l:
                        d *= ipow(xk[l2], xpow[t, l2])
                for l2 in range(m):
                    d *= ipow(uk[l2], upow[t, l2])
                av[k, row_idx[t], l] += d
            for l in range(m):
                p = upow[t, l]
                if p == 0:
                    continue
                d = w * p * ipow(uk[l], p - 1)
                for l2 in range(n):
                    d *= ipow(xk[l2], xpow[t, l2])
                for l2 in range(m):
                    if l2 != l:
                        d *= ipow(uk[l2], upow[t, l2])
                bv[k, row_idx[t], l] += d
    return xs, As, Bs
