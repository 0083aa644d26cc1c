# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled grid kernels.

Both kernels evaluate a sum over observations (or quadrature nodes) at many
parameter points without materialising the ``N x n`` matrix of linear
predictors, which is what makes posterior quadrature at ``n = 5000`` cheap.
"""
import numpy as np

from libc.math cimport exp, log, log1p


cdef inline double _softplus(double a) nogil:
    if a > 0.0:
        return a + log1p(exp(-a))
    return log1p(exp(a))


def logistic_loglik_many(const double[:, ::1] design,
                         const double[::1] labels,
                         const double[:, ::1] points):
    """Logistic log-likelihood ``sum_i y_i a_i - log(1 + e^{a_i})`` at each row of ``points``."""
    cdef Py_ssize_t n = design.shape[0]
    cdef Py_ssize_t p = design.shape[1]
    cdef Py_ssize_t npts = points.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double a, total
    out = np.empty(npts, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for k in range(npts):
            total = 0.0
            for i in range(n):
                a = 0.0
                for j in range(p):
                    a = a + design[i, j] * points[k, j]
                total = total + labels[i] * a - _softplus(a)
            res[k] = total
    return out


def tilted_logsumexp_many(const double[:, ::1] features,
                          const double[::1] log_weights,
                          const double[:, ::1] points):
    """``log sum_m exp(log_w_m + <features_m, u>)`` at each row ``u`` of ``points``."""
    cdef Py_ssize_t m = features.shape[0]
    cdef Py_ssize_t p = features.shape[1]
    cdef Py_ssize_t npts = points.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double a, top, acc
    out = np.empty(npts, dtype=np.float64)
    cdef double[::1] res = out
    cdef double[::1] buf = np.empty(m, dtype=np.float64)
    with nogil:
        for k in range(npts):
            top = -1.0e308
            for i in range(m):
                a = log_weights[i]
                for j in range(p):
                    a = a + features[i, j] * points[k, j]
                buf[i] = a
                if a > top:
                    top = a
            acc = 0.0
            for i in range(m):
                acc = acc + exp(buf[i] - top)
            res[k] = top + log(acc)
    return out
