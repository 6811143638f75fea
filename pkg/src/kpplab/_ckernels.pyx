# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the grid solver.

Both routines act in place on ``u`` (float64, contiguous) with the first and
last entries held at ``left`` / ``right``.
"""
from libc.math cimport exp
from libc.stdlib cimport malloc, free

import numpy as np


cdef struct Factor:
    double rho
    double *c    # modified super-diagonal
    double *inv  # 1 / pivot


cdef int factor_init(Factor *f, double rho, Py_ssize_t m) except -1:
    cdef Py_ssize_t i
    cdef double piv
    f.rho = rho
    f.c = <double *> malloc(m * sizeof(double))
    f.inv = <double *> malloc(m * sizeof(double))
    if f.c == NULL or f.inv == NULL:
        raise MemoryError()
    piv = 1.0 + 2.0 * rho
    f.inv[0] = 1.0 / piv
    f.c[0] = -rho * f.inv[0]
    for i in range(1, m):
        piv = 1.0 + 2.0 * rho + rho * f.c[i - 1]
        f.inv[i] = 1.0 / piv
        f.c[i] = -rho * f.inv[i]
    return 0


cdef void factor_free(Factor *f):
    free(f.c)
    free(f.inv)


cdef void cn_solve(double *u, double *d, Factor *f, Py_ssize_t n,
                   double left, double right) nogil:
    # one Crank-Nicolson step on interior points 1..n-2, solved for the
    # increment so that constant states are reproduced bit for bit
    cdef Py_ssize_t i, m = n - 2
    cdef double rho2 = 2.0 * f.rho
    u[0] = left
    u[n - 1] = right
    for i in range(m):
        d[i] = rho2 * (u[i] - 2.0 * u[i + 1] + u[i + 2])
    # forward sweep
    d[0] = d[0] * f.inv[0]
    for i in range(1, m):
        d[i] = (d[i] + f.rho * d[i - 1]) * f.inv[i]
    # back substitution
    for i in range(m - 2, -1, -1):
        d[i] = d[i] - f.c[i] * d[i + 1]
    for i in range(m):
        u[i + 1] += d[i]


cdef void logistic(double *u, Py_ssize_t n, double g) nogil:
    # exact flow of du = r u (1 - u) over one step, g = exp(r h)
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = u[i]
        u[i] = v * g / (1.0 + v * (g - 1.0))


def heat_cn(double[::1] u, double h, double dx, long nsteps, double left, double right):
    cdef Py_ssize_t n = u.shape[0]
    cdef Factor f
    cdef long k
    cdef double *d
    if n < 3 or nsteps <= 0:
        return
    factor_init(&f, h / (4.0 * dx * dx), n - 2)
    d = <double *> malloc((n - 2) * sizeof(double))
    try:
        with nogil:
            for k in range(nsteps):
                cn_solve(&u[0], d, &f, n, left, right)
    finally:
        free(d)
        factor_free(&f)


def strang_fkpp(double[::1] u, double h, double dx, long nsteps, double r,
                double left, double right):
    """``nsteps`` Strang steps heat(h/2), logistic(h), heat(h/2); inner halves merged."""
    cdef Py_ssize_t n = u.shape[0]
    cdef Factor half, full
    cdef long k
    cdef double g = exp(r * h)
    cdef double *d
    if n < 3 or nsteps <= 0:
        return
    factor_init(&half, h / (8.0 * dx * dx), n - 2)
    factor_init(&full, h / (4.0 * dx * dx), n - 2)
    d = <double *> malloc((n - 2) * sizeof(double))
    try:
        with nogil:
            cn_solve(&u[0], d, &half, n, left, right)
            for k in range(nsteps - 1):
                logistic(&u[0], n, g)
                cn_solve(&u[0], d, &full, n, left, right)
            logistic(&u[0], n, g)
            cn_solve(&u[0], d, &half, n, left, right)
    finally:
        free(d)
        factor_free(&half)
        factor_free(&full)
