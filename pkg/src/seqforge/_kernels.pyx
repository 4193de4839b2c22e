# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics mirror ``_kernels_py`` operation by operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, INFINITY, M_PI

cnp.import_array()


def synth_loglinear(const float[::1] rho, const float[::1] t1, const float[::1] t2,
                    const cnp.uint8_t[::1] sel, int kind, double c0, double c1, double c2):
    cdef Py_ssize_t n = rho.shape[0], i
    out = np.zeros(n, dtype=np.float32)
    cdef float[::1] o = out
    cdef double v, r1, max_log = -INFINITY
    with nogil:
        for i in range(n):
            if not sel[i]:
                continue
            r1 = t1[i]
            v = c0 + log(<double>rho[i])
            if kind == 0:
                v = v + c1 / r1
                v = v + c2 / <double>t2[i]
            else:
                v = v + c1 * r1
                v = v + c2 * (r1 * r1)
            if v > max_log:
                max_log = v
            o[i] = <float>exp(v)
    return out, max_log


def em_pass(const double[::1] x, means, variances, weights):
    cdef double mu[3]
    cdef double inv2v[3]
    cdef double lognorm[3]
    cdef double nk[3]
    cdef double s1[3]
    cdef double s2[3]
    cdef double lp[3]
    cdef Py_ssize_t n = x.shape[0], i
    cdef int k
    cdef double m, s, r, d, ll = 0.0, xi
    for k in range(3):
        mu[k] = means[k]
        inv2v[k] = 0.5 / variances[k]
        lognorm[k] = log(weights[k]) - 0.5 * log(2.0 * M_PI * variances[k])
        nk[k] = 0.0
        s1[k] = 0.0
        s2[k] = 0.0
    with nogil:
        for i in range(n):
            xi = x[i]
            for k in range(3):
                d = xi - mu[k]
                lp[k] = lognorm[k] - d * d * inv2v[k]
            m = lp[0]
            if lp[1] > m:
                m = lp[1]
            if lp[2] > m:
                m = lp[2]
            s = 0.0
            for k in range(3):
                lp[k] = exp(lp[k] - m)
                s = s + lp[k]
            ll = ll + (m + log(s))
            for k in range(3):
                r = lp[k] / s
                d = xi - mu[k]
                nk[k] = nk[k] + r
                s1[k] = s1[k] + r * d
                s2[k] = s2[k] + r * d * d
    return (np.array([nk[0], nk[1], nk[2]]), np.array([s1[0], s1[1], s1[2]]),
            np.array([s2[0], s2[1], s2[2]]), ll)


def responsibilities(const double[::1] x, means, variances, weights):
    cdef Py_ssize_t n = x.shape[0], i
    cdef int k
    cdef double mu[3]
    cdef double inv2v[3]
    cdef double lognorm[3]
    cdef double lp[3]
    cdef double m, s, d
    out = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] o = out
    for k in range(3):
        mu[k] = means[k]
        inv2v[k] = 0.5 / variances[k]
        lognorm[k] = log(weights[k]) - 0.5 * log(2.0 * M_PI * variances[k])
    with nogil:
        for i in range(n):
            for k in range(3):
                d = x[i] - mu[k]
                lp[k] = lognorm[k] - d * d * inv2v[k]
            m = lp[0]
            if lp[1] > m:
                m = lp[1]
            if lp[2] > m:
                m = lp[2]
            s = 0.0
            for k in range(3):
                lp[k] = exp(lp[k] - m)
                s = s + lp[k]
            for k in range(3):
                o[i, k] = lp[k] / s
    return out


def fuse_accumulate(double[:, :, :, ::1] acc, cnp.int64_t[:, :, ::1] cnt,
                    Py_ssize_t ox, Py_ssize_t oy, Py_ssize_t oz,
                    const float[:, :, :, ::1] patch):
    cdef Py_ssize_t sx = patch.shape[0], sy = patch.shape[1], sz = patch.shape[2]
    cdef Py_ssize_t nl = patch.shape[3], i, j, k, l
    with nogil:
        for i in range(sx):
            for j in range(sy):
                for k in range(sz):
                    cnt[ox + i, oy + j, oz + k] += 1
                    for l in range(nl):
                        acc[ox + i, oy + j, oz + k, l] = acc[ox + i, oy + j, oz + k, l] + patch[i, j, k, l]
