# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled interpolation kernels.

Both kernels evaluate a complex input sequence at arbitrary real-valued
positions (in input-sample units). Taps falling outside the input are
treated as zeros.
"""
import numpy as np

from libc.math cimport floor

cdef enum:
    MAX_COEF = 16


def sinc_interp(const double complex[::1] x, const double[::1] pos,
                const double[:, ::1] table):
    cdef Py_ssize_t n_in = x.shape[0]
    cdef Py_ssize_t n_out = pos.shape[0]
    cdef Py_ssize_t n_phase = table.shape[0] - 1
    cdef Py_ssize_t n_taps = table.shape[1]
    cdef Py_ssize_t half = n_taps // 2
    cdef Py_ssize_t m, j, k, i0, idx, base, j_lo, j_hi
    cdef double p, mu, f, w, c, acc_r, acc_i

    out = np.zeros(n_out, dtype=np.complex128)
    cdef double complex[::1] y = out

    for m in range(n_out):
        p = pos[m]
        k = <Py_ssize_t>floor(p)
        mu = p - k
        f = mu * n_phase
        i0 = <Py_ssize_t>f
        if i0 >= n_phase:
            i0 = n_phase - 1
        w = f - i0
        base = k - half + 1
        j_lo = 0 if base >= 0 else -base
        j_hi = n_taps if base + n_taps <= n_in else n_in - base
        acc_r = 0.0
        acc_i = 0.0
        for j in range(j_lo, j_hi):
            c = table[i0, j] + w * (table[i0 + 1, j] - table[i0, j])
            acc_r += c * x[base + j].real
            acc_i += c * x[base + j].imag
        y[m] = acc_r + 1j * acc_i
    return out


def farrow(const double complex[::1] x, const double[:, ::1] coeffs,
           double start, double step, Py_ssize_t n_out):
    cdef Py_ssize_t n_in = x.shape[0]
    cdef Py_ssize_t n_taps = coeffs.shape[0]
    cdef Py_ssize_t n_coef = coeffs.shape[1]
    cdef Py_ssize_t half = n_taps // 2
    cdef Py_ssize_t m, j, q, k, base, j_lo, j_hi
    cdef double p, mu, h, acc_r, acc_i
    cdef double pw[MAX_COEF]
    if n_coef > MAX_COEF:
        raise ValueError(f"polynomial order above {MAX_COEF - 1} not supported")

    out = np.zeros(n_out, dtype=np.complex128)
    cdef double complex[::1] y = out

    for m in range(n_out):
        p = start + m * step
        k = <Py_ssize_t>floor(p)
        mu = p - k
        base = k - half + 1
        j_lo = 0 if base >= 0 else -base
        j_hi = n_taps if base + n_taps <= n_in else n_in - base
        # powers of mu once per output; the tap weights are then independent dot products
        pw[0] = 1.0
        for q in range(1, n_coef):
            pw[q] = pw[q - 1] * mu
        acc_r = 0.0
        acc_i = 0.0
        for j in range(j_lo, j_hi):
            h = 0.0
            for q in range(n_coef):
                h += coeffs[j, q] * pw[q]
            acc_r += h * x[base + j].real
            acc_i += h * x[base + j].imag
        y[m] = acc_r + 1j * acc_i
    return out
