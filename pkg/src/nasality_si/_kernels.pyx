# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled recursive-filter kernels.

Every function here has a drop-in twin in ``_fallback.py``; the two are
selected between in ``kernels.py``.  Inputs are float64 C-contiguous arrays.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def onepole(const double[::1] x, double a, double y0):
    """y[n] = a*y[n-1] + (1-a)*x[n], with y[-1] = y0."""
    cdef Py_ssize_t n = x.shape[0], i
    cdef double b = 1.0 - a
    cdef double y = y0
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            y = a * y + b * x[i]
            o[i] = y
    return out


def biquad_blocks(const double[::1] x, const double[:, ::1] coefs, Py_ssize_t block):
    """Time-varying biquad, transposed direct form II.

    ``coefs[j] = (b0, b1, b2, a1, a2)`` applies to samples
    ``[j*block, (j+1)*block)``; state carries across coefficient changes.
    """
    cdef Py_ssize_t n = x.shape[0], i, j
    cdef double b0, b1, b2, a1, a2, xi, yi
    cdef double z1 = 0.0, z2 = 0.0
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    if coefs.shape[0] * block < n:
        raise ValueError("not enough coefficient blocks for signal length")
    with nogil:
        for i in range(n):
            j = i // block
            b0 = coefs[j, 0]
            b1 = coefs[j, 1]
            b2 = coefs[j, 2]
            a1 = coefs[j, 3]
            a2 = coefs[j, 4]
            xi = x[i]
            yi = b0 * xi + z1
            z1 = b1 * xi - a1 * yi + z2
            z2 = b2 * xi - a2 * yi
            o[i] = yi
    return out


def resonator_bank(const double[::1] x, const double[:, ::1] coefs,
                   double alpha, Py_ssize_t hop, Py_ssize_t n_frames):
    """Bandpass bank -> half-wave rectify -> leaky integrate -> frame sample.

    ``coefs[c] = (b0, a1, a2)`` for the bandpass ``[b0, 0, -b0] / [1, a1, a2]``.
    The integrator output is read at the last sample of each hop.
    """
    cdef Py_ssize_t n = x.shape[0], n_ch = coefs.shape[0], c, i, k
    cdef double b0, a1, a2, xi, yi, z1, z2, e, r
    cdef double g = 1.0 - alpha
    if n_frames * hop > n:
        raise ValueError("signal too short for requested frames")
    out = np.zeros((n_ch, n_frames), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for c in range(n_ch):
            b0 = coefs[c, 0]
            a1 = coefs[c, 1]
            a2 = coefs[c, 2]
            z1 = 0.0
            z2 = 0.0
            e = 0.0
            k = 0
            for i in range(n_frames * hop):
                xi = x[i]
                yi = b0 * xi + z1
                z1 = -a1 * yi + z2
                z2 = -b0 * xi - a2 * yi
                r = yi if yi > 0.0 else 0.0
                e = alpha * e + g * r
                if (i + 1) % hop == 0:
                    o[c, k] = e
                    k += 1
    return out


def frame_autocorr(const double[::1] x, const cnp.int64_t[::1] starts,
                   Py_ssize_t win, Py_ssize_t lag_min, Py_ssize_t lag_max):
    """Normalized autocorrelation per frame for lags lag_min..lag_max.

    ``x`` must already be padded so every ``start + win + lag_max`` is in range.
    """
    cdef Py_ssize_t n_fr = starts.shape[0], n_lag = lag_max - lag_min + 1
    cdef Py_ssize_t f, l, i, s, lag
    cdef double num, e0, e1, den
    out = np.zeros((n_fr, n_lag), dtype=np.float64)
    cdef double[:, ::1] o = out
    for f in range(n_fr):
        if starts[f] < 0 or starts[f] + win + lag_max > x.shape[0]:
            raise ValueError("frame out of range")
    with nogil:
        for f in range(n_fr):
            s = starts[f]
            e0 = 0.0
            for i in range(win):
                e0 = e0 + x[s + i] * x[s + i]
            for l in range(n_lag):
                lag = lag_min + l
                num = 0.0
                e1 = 0.0
                for i in range(win):
                    num = num + x[s + i] * x[s + i + lag]
                    e1 = e1 + x[s + i + lag] * x[s + i + lag]
                den = sqrt(e0 * e1)
                if den > 0.0:
                    o[f, l] = num / den
    return out
