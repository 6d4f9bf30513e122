# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror :mod:`decor._kernels_py`."""
import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sin, sqrt, M_PI

cnp.import_array()


cdef double _bessel_i0(double x) nogil:
    cdef double half = 0.5 * x
    cdef double term = 1.0
    cdef double total = 1.0
    cdef int k = 1
    while True:
        term *= (half / k) * (half / k)
        total += term
        if term < 1e-17 * total:
            break
        k += 1
    return total


cdef inline double _sinc(double x) nogil:
    if x == 0.0:
        return 1.0
    return sin(M_PI * x) / (M_PI * x)


def backward_energy(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] e = out
    cdef double acc = 0.0
    cdef Py_ssize_t i
    with nogil:
        for i in range(n - 1, -1, -1):
            acc += x[i] * x[i]
            e[i] = acc
    return out


def sinc_resample(const double[::1] x, double step, Py_ssize_t out_len,
                  double cutoff, int half_width, double beta):
    cdef Py_ssize_t n = x.shape[0]
    out = np.zeros(out_len, dtype=np.float64)
    cdef double[::1] y = out
    cdef double norm = _bessel_i0(beta)
    cdef double pos, d, u, w, acc, wsum
    cdef Py_ssize_t k, m, center
    with nogil:
        for k in range(out_len):
            pos = k * step
            center = <Py_ssize_t>floor(pos)
            acc = 0.0
            wsum = 0.0
            for m in range(center - half_width + 1, center + half_width + 1):
                d = pos - m
                u = d / half_width
                if u <= -1.0 or u >= 1.0:
                    continue
                w = cutoff * _sinc(cutoff * d) * _bessel_i0(beta * sqrt(1.0 - u * u)) / norm
                wsum += w
                if 0 <= m < n:
                    acc += w * x[m]
            if wsum != 0.0:
                y[k] = acc / wsum
    return out
