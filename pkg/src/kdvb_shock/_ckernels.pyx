# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the line and cell solvers.

Every function here has a numpy twin in ``_pykernels`` with the same
signature; ``kernels`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()


def stencil_apply(const double[::1] v, const double[::1] coeffs, double[::1] out):
    """Centered stencil with zero values outside the array (zero ghosts)."""
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t w = coeffs.shape[0]
    cdef Py_ssize_t r = w // 2
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(n):
        if r <= i < n - r:
            continue
        acc = 0.0
        for j in range(w):
            k = i + j - r
            if 0 <= k < n:
                acc += coeffs[j] * v[k]
        out[i] = acc
    # interior: no bounds tests, so the compiler can vectorize over i
    for i in range(r, n - r):
        out[i] = 0.0
    for j in range(w):
        for i in range(r, n - r):
            out[i] += coeffs[j] * v[i + j - r]
    return np.asarray(out)


def banded_factor(double[:, ::1] ab, Py_ssize_t r):
    """In-place LU without pivoting of a (2r+1)-banded matrix.

    ``ab[r + i - j, j] = A[i, j]`` (LAPACK band layout).  Valid for matrices
    whose symmetric part is positive definite.
    """
    cdef Py_ssize_t n = ab.shape[1]
    cdef Py_ssize_t k, i, j, imax, jmax
    cdef double piv, m
    for k in range(n - 1):
        piv = ab[r, k]
        if piv == 0.0:
            raise ZeroDivisionError("zero pivot in banded LU")
        imax = k + r
        if imax > n - 1:
            imax = n - 1
        jmax = imax
        for i in range(k + 1, imax + 1):
            m = ab[r + i - k, k] / piv
            ab[r + i - k, k] = m
            for j in range(k + 1, jmax + 1):
                ab[r + i - j, j] -= m * ab[r + k - j, j]
    return np.asarray(ab)


def banded_solve(const double[:, ::1] lu, Py_ssize_t r, const double[::1] b, double[::1] x):
    cdef Py_ssize_t n = lu.shape[1]
    cdef Py_ssize_t i, j, jmin, jmax
    cdef double acc
    for i in range(n):
        acc = b[i]
        jmin = i - r
        if jmin < 0:
            jmin = 0
        for j in range(jmin, i):
            acc -= lu[r + i - j, j] * x[j]
        x[i] = acc
    for i in range(n - 1, -1, -1):
        acc = x[i]
        jmax = i + r
        if jmax > n - 1:
            jmax = n - 1
        for j in range(i + 1, jmax + 1):
            acc -= lu[r + i - j, j] * x[j]
        x[i] = acc / lu[r, i]
    return np.asarray(x)


def trig_series(const double complex[::1] a, double kappa, const double[::1] x,
                int deriv, double[::1] out):
    """Evaluate d^deriv/dx^deriv of a_0 + 2 Re sum_k a_k exp(i k kappa x).

    Uses the angle-addition recurrence, so one sin/cos pair per point.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t K = a.shape[0]
    cdef Py_ssize_t i, k
    cdef double c1, s1, cr, ci, tmp, acc, kk, ar, ai
    cdef double complex ik
    cdef int d
    # a_k * (i k kappa)^deriv
    cdef double complex[:] rot = np.empty(K, dtype=complex)
    for k in range(K):
        kk = k * kappa
        ik = 1.0
        for d in range(deriv):
            ik = ik * (1j * kk)
        rot[k] = ik * a[k]
    for i in range(n):
        c1 = cos(kappa * x[i])
        s1 = sin(kappa * x[i])
        cr = 1.0
        ci = 0.0
        if deriv == 0:
            acc = a[0].real
        else:
            acc = 0.0
        for k in range(1, K):
            tmp = cr * c1 - ci * s1
            ci = cr * s1 + ci * c1
            cr = tmp
            ar = rot[k].real
            ai = rot[k].imag
            acc += 2.0 * (ar * cr - ai * ci)
        out[i] = acc
    return np.asarray(out)


def cumulative_trapezoid(const double[::1] y, double h, double[::1] out):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t i
    cdef double acc = 0.0
    out[0] = 0.0
    for i in range(1, n):
        acc += 0.5 * h * (y[i - 1] + y[i])
        out[i] = acc
    return np.asarray(out)
