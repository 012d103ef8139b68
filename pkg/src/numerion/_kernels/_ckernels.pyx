# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the routines in ``_fallback``."""

import numpy as np
from libc.math cimport tanh, pow, fabs, cos, sin, sqrt, cbrt, isinf, M_PI


cdef inline int _int_exponent(double p) nogil:
    if p >= 1.0 and p <= 32.0 and p == <double>(<int>p):
        return <int>p
    return 0


cdef inline double _apow(double a, double p, int ip) nogil:
    # integer exponents by repeated squaring, no libm call
    cdef double r = 1.0
    if ip > 0:
        while ip:
            if ip & 1:
                r *= a
            a *= a
            ip >>= 1
        return r
    return pow(a, p)


cdef inline double _sign(double v) nogil:
    if v > 0:
        return 1.0
    if v < 0:
        return -1.0
    return 0.0


cdef inline double _row_norm(const double[:, ::1] x, Py_ssize_t r, double p,
                             int ip, bint inf_p) nogil:
    cdef Py_ssize_t i, n = x.shape[1]
    cdef double s = 0.0, a
    if inf_p:
        for i in range(n):
            a = fabs(x[r, i])
            if a > s:
                s = a
        return s
    if ip > 0 and ip % 2 == 0:
        for i in range(n):
            s += _apow(x[r, i], p, ip)
    else:
        for i in range(n):
            s += _apow(fabs(x[r, i]), p, ip)
    if ip == 1:
        return s
    if ip == 2:
        return sqrt(s)
    if ip == 3:
        return cbrt(s)
    if ip == 6:
        return cbrt(sqrt(s))
    return pow(s, 1.0 / p)


def hntanh_forward(const double[:, ::1] x, double p, double eps):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], r, i
    out = np.empty((m, n), dtype=np.float64)
    norms = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[::1] nv = norms
    cdef int ip = _int_exponent(p)
    cdef bint inf_p = isinf(p)
    cdef double s, scale
    with nogil:
        for r in range(m):
            s = _row_norm(x, r, p, ip, inf_p)
            nv[r] = s
            if s < eps:
                scale = 1.0
            else:
                scale = tanh(s) / s
            for i in range(n):
                y[r, i] = x[r, i] * scale
    return out, norms


def hntanh_backward(const double[:, ::1] x, const double[::1] norms,
                    const double[:, ::1] grad, double p, double eps):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], r, i
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef int ip = _int_exponent(p)
    cdef int ipm1 = ip - 1 if ip > 1 else 0
    cdef bint inf_p = isinf(p)
    cdef double mm, t, ratio, k, xg, mpow, a, dn
    with nogil:
        for r in range(m):
            mm = norms[r]
            if mm < eps:
                for i in range(n):
                    dx[r, i] = grad[r, i]
                continue
            t = tanh(mm)
            ratio = t / mm
            k = (mm * (1.0 - t * t) - t) / (mm * mm)
            xg = 0.0
            for i in range(n):
                xg += x[r, i] * grad[r, i]
            if not inf_p and ip != 1:
                # m^(1-p); integer p avoids the libm pow call
                mpow = 1.0 / _apow(mm, p - 1.0, ipm1) if ipm1 > 0 else pow(mm, 1.0 - p)
            for i in range(n):
                a = fabs(x[r, i])
                if inf_p:
                    dn = _sign(x[r, i]) if a == mm else 0.0
                elif ip == 1:
                    dn = _sign(x[r, i])
                elif ipm1 % 2 == 1:
                    # odd power keeps the sign: |x|^q sgn(x) = x^q
                    dn = _apow(x[r, i], p - 1.0, ipm1) * mpow
                elif ipm1 > 0:
                    dn = _apow(a, p - 1.0, ipm1) * _sign(x[r, i]) * mpow
                else:
                    dn = pow(a, p - 1.0) * _sign(x[r, i]) * mpow
                dx[r, i] = grad[r, i] * ratio + dn * k * xg
    return out


def hmul_left(const double[:, ::1] a, const double[:, ::1] b,
              const long[:, ::1] select, const double[:, ::1] sign):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], r, i, j
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double acc
    with nogil:
        for r in range(m):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc = acc + sign[i, j] * a[r, select[i, j]] * b[r, j]
                o[r, i] = acc
    return out


def dft(x):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k, t
    re = np.empty(n, dtype=np.float64)
    im = np.empty(n, dtype=np.float64)
    cdef double[::1] rv = re
    cdef double[::1] iv = im
    cdef double[::1] ct = np.cos(2.0 * np.pi * np.arange(n) / n)
    cdef double[::1] st = np.sin(2.0 * np.pi * np.arange(n) / n)
    cdef double sr, si
    cdef Py_ssize_t idx
    with nogil:
        for k in range(n):
            sr = 0.0
            si = 0.0
            idx = 0
            for t in range(n):
                sr = sr + xv[t] * ct[idx]
                si = si - xv[t] * st[idx]
                idx = idx + k
                if idx >= n:
                    idx = idx - n
            rv[k] = sr
            iv[k] = si
    return re, im
