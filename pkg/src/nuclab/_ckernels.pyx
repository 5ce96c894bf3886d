# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fmax, fmin

cnp.import_array()


def smoothstep_cutoff(r, double r0, double r1):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rr = np.ascontiguousarray(r, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = rr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zeta = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dzeta = np.empty(n)
    cdef double width = r1 - r0, t
    for i in range(n):
        t = fmin(fmax((rr[i] - r0) / width, 0.0), 1.0)
        zeta[i] = 1.0 - t * t * (3.0 - 2.0 * t)
        dzeta[i] = -6.0 * t * (1.0 - t) / width
    shape = np.shape(r)
    return zeta.reshape(shape), dzeta.reshape(shape)


def lens_tail_inner(z, double H, double L, double beta, double nd, nodes, weights):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xg = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wg = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t N = zz.shape[0], n = zz.shape[1], ng = xg.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(N)
    cdef Py_ssize_t i, j
    cdef double s, rho2, g2, hi, lo, zc, total, a_hi, ln, zd, r, t, zeta, dz, w, gx, f, acc
    cdef double width = 2.0 * L
    g2 = 4.0 * H * H * n / (L * L)
    if nd <= 0 and beta <= 0:
        return out
    for i in range(N):
        s = 0.0
        rho2 = 0.0
        for j in range(n):
            s += zz[i, j]
            rho2 += zz[i, j] * zz[i, j]
        hi = -H * (1.0 - s / L)
        lo = -sqrt(fmax(16.0 * L * L - rho2, 0.0))
        if nd > 0:
            lo = fmax(lo, -zz[i, 0] * beta / nd)
        zc = -sqrt(fmax(4.0 * L * L - rho2, 0.0))
        total = g2 * fmax(hi - fmax(lo, zc), 0.0)
        a_hi = fmin(hi, zc)
        ln = fmax(a_hi - lo, 0.0)
        if ln > 0:
            w = 2.0 * H / L * s - 2.0 * H
            gx = 2.0 * H / L * s
            acc = 0.0
            for j in range(ng):
                zd = lo + ln * xg[j]
                r = sqrt(rho2 + zd * zd)
                t = fmin(fmax((r - 2.0 * L) / width, 0.0), 1.0)
                zeta = 1.0 - t * t * (3.0 - 2.0 * t)
                dz = -6.0 * t * (1.0 - t) / width
                f = zeta * zeta * g2 + 2.0 * zeta * dz * w * gx / r + w * w * dz * dz
                acc += wg[j] * f
            total += ln * acc
        out[i] = total
    return out


cdef _apply_2d(double[:, ::1] w, double[:, ::1] om0, double[:, ::1] om1, double[:, ::1] y):
    cdef Py_ssize_t n0 = w.shape[0], n1 = w.shape[1], i, j
    cdef double q
    for i in range(n0 - 1):
        for j in range(n1):
            q = om0[i, j] * (w[i + 1, j] - w[i, j])
            y[i, j] -= q
            y[i + 1, j] += q
    for i in range(n0):
        for j in range(n1 - 1):
            q = om1[i, j] * (w[i, j + 1] - w[i, j])
            y[i, j] -= q
            y[i, j + 1] += q


cdef _apply_3d(double[:, :, ::1] w, double[:, :, ::1] om0, double[:, :, ::1] om1,
               double[:, :, ::1] om2, double[:, :, ::1] y):
    cdef Py_ssize_t n0 = w.shape[0], n1 = w.shape[1], n2 = w.shape[2], i, j, k
    cdef double q
    for i in range(n0 - 1):
        for j in range(n1):
            for k in range(n2):
                q = om0[i, j, k] * (w[i + 1, j, k] - w[i, j, k])
                y[i, j, k] -= q
                y[i + 1, j, k] += q
    for i in range(n0):
        for j in range(n1 - 1):
            for k in range(n2):
                q = om1[i, j, k] * (w[i, j + 1, k] - w[i, j, k])
                y[i, j, k] -= q
                y[i, j + 1, k] += q
    for i in range(n0):
        for j in range(n1):
            for k in range(n2 - 1):
                q = om2[i, j, k] * (w[i, j, k + 1] - w[i, j, k])
                y[i, j, k] -= q
                y[i, j, k + 1] += q


def laplace_apply(w, weights):
    wc = np.ascontiguousarray(w, dtype=np.float64)
    y = np.zeros_like(wc)
    oms = [np.ascontiguousarray(o, dtype=np.float64) for o in weights]
    if wc.ndim == 2:
        _apply_2d(wc, oms[0], oms[1], y)
    elif wc.ndim == 3:
        _apply_3d(wc, oms[0], oms[1], oms[2], y)
    else:
        from ._kernels_py import laplace_apply as generic
        return generic(wc, oms)
    return y
