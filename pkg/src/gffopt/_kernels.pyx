# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the cascade hot loop. See ``_kernels_py`` for the reference semantics.

Matrix-vector products go straight to BLAS ``dgemv``; the per-channel dB
conversions run in C without touching the interpreter.
"""

import numpy as np

from libc.math cimport exp, log10
from scipy.linalg.cython_blas cimport dgemv

cdef double LN10_OVER_10 = 0.23025850929940458


cdef inline void _matvec(const double[:, ::1] W, const double* x, double* y) noexcept nogil:
    # row-major (m, n) W is column-major (n, m) W.T, so y = W @ x is dgemv("T")
    cdef char trans = b"T"
    cdef int n = <int>W.shape[1], m = <int>W.shape[0], inc = 1
    cdef double one = 1.0, zero = 0.0
    dgemv(&trans, &n, &m, &one, <double*>&W[0, 0], &n, <double*>x, &inc, &zero, y, &inc)


cdef void _mlp(const double[:, ::1] W1, const double[::1] b1,
               const double[:, ::1] W2, const double[::1] b2,
               const double* x, double* h, double* out) noexcept nogil:
    cdef Py_ssize_t i
    _matvec(W1, x, h)
    for i in range(W1.shape[0]):
        h[i] = h[i] + b1[i]
        if h[i] < 0.0:
            h[i] = 0.0
    _matvec(W2, h, out)
    for i in range(W2.shape[0]):
        out[i] = out[i] + b2[i]


def mlp_forward(const double[:, ::1] W1, const double[::1] b1,
                const double[:, ::1] W2, const double[::1] b2,
                const double[::1] x, double[::1] out):
    cdef double[::1] h = np.empty(W1.shape[0])
    with nogil:
        _mlp(W1, b1, W2, b2, &x[0], &h[0], &out[0])


def amplifier_chain(double[::1] signal, double[::1] ase,
                    const double[:, ::1] W1, const double[::1] b1,
                    const double[:, ::1] W2, const double[::1] b2,
                    const double[::1] in_mean, const double[::1] in_std, const double[::1] out_mean,
                    double current_ma, const double[::1] span_factors, const double[::1] ase_coef,
                    double[:, ::1] gains_out, double[::1] totals_out):
    cdef Py_ssize_t n = signal.shape[0]
    cdef Py_ssize_t n_amp = span_factors.shape[0]
    cdef Py_ssize_t i, k
    cdef double[::1] x = np.empty(n + 1)
    cdef double[::1] h = np.empty(W1.shape[0])
    cdef double[::1] g = np.empty(W2.shape[0])
    cdef double p, tot, lin, s, gdb
    with nogil:
        for k in range(n_amp):
            tot = 0.0
            for i in range(n):
                p = (signal[i] + ase[i]) * 1e3
                tot += p
                x[i] = (10.0 * log10(p) - in_mean[i]) / in_std[i]
            x[n] = (current_ma - in_mean[n]) / in_std[n]
            totals_out[k] = 10.0 * log10(tot)
            _mlp(W1, b1, W2, b2, &x[0], &h[0], &g[0])
            s = span_factors[k]
            for i in range(n):
                gdb = g[i] + out_mean[i]
                gains_out[k, i] = gdb
                lin = exp(gdb * LN10_OVER_10)
                signal[i] = signal[i] * lin * s
                ase[i] = (ase[i] * lin + ase_coef[i] * (lin - 1.0)) * s
