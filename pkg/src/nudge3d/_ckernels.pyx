# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the pseudo-spectral solver.

Every function here has a numpy twin in ``_pykernels`` with the same
signature and semantics; ``nudge3d.kernels`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def cross(const double[:, :, :, ::1] a, const double[:, :, :, ::1] b, double[:, :, :, ::1] out):
    """out = a x b for vector fields of shape (3, n0, n1, n2)."""
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t n0 = a.shape[1], n1 = a.shape[2], n2 = a.shape[3]
    cdef double a0, a1, a2, b0, b1, b2
    with nogil:
        for i in range(n0):
            for j in range(n1):
                for k in range(n2):
                    a0 = a[0, i, j, k]
                    a1 = a[1, i, j, k]
                    a2 = a[2, i, j, k]
                    b0 = b[0, i, j, k]
                    b1 = b[1, i, j, k]
                    b2 = b[2, i, j, k]
                    out[0, i, j, k] = a1 * b2 - a2 * b1
                    out[1, i, j, k] = a2 * b0 - a0 * b2
                    out[2, i, j, k] = a0 * b1 - a1 * b0
    return np.asarray(out)


def project(const double complex[:, :, :, ::1] v, const double[::1] kx, const double[::1] ky,
            const double[::1] kz, const double[:, :, ::1] inv_k2, const double[:, :, ::1] mask,
            double scale, double complex[:, :, :, ::1] out):
    """out = scale * mask * (v - k (k.v)/|k|^2), in place safe (out may be v).

    ``inv_k2`` must be zero at k = 0 so the mean mode is annihilated.
    """
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t n0 = v.shape[1], n1 = v.shape[2], n2 = v.shape[3]
    cdef double complex v0, v1, v2, kv
    cdef double m, px, py, pz
    with nogil:
        for i in range(n0):
            px = kx[i]
            for j in range(n1):
                py = ky[j]
                for k in range(n2):
                    m = mask[i, j, k]
                    if m == 0.0 or inv_k2[i, j, k] == 0.0:
                        out[0, i, j, k] = 0
                        out[1, i, j, k] = 0
                        out[2, i, j, k] = 0
                        continue
                    pz = kz[k]
                    v0 = v[0, i, j, k]
                    v1 = v[1, i, j, k]
                    v2 = v[2, i, j, k]
                    kv = (px * v0 + py * v1 + pz * v2) * inv_k2[i, j, k]
                    m = m * scale
                    out[0, i, j, k] = m * (v0 - px * kv)
                    out[1, i, j, k] = m * (v1 - py * kv)
                    out[2, i, j, k] = m * (v2 - pz * kv)
    return np.asarray(out)


def curl(const double complex[:, :, :, ::1] v, const double[::1] kx, const double[::1] ky,
         const double[::1] kz, double complex[:, :, :, ::1] out):
    """Spectral curl i k x v. Wavenumber arrays carry zeros at Nyquist."""
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t n0 = v.shape[1], n1 = v.shape[2], n2 = v.shape[3]
    cdef double complex v0, v1, v2
    cdef double px, py, pz
    cdef double complex I = 1j
    with nogil:
        for i in range(n0):
            px = kx[i]
            for j in range(n1):
                py = ky[j]
                for k in range(n2):
                    pz = kz[k]
                    v0 = v[0, i, j, k]
                    v1 = v[1, i, j, k]
                    v2 = v[2, i, j, k]
                    out[0, i, j, k] = I * (py * v2 - pz * v1)
                    out[1, i, j, k] = I * (pz * v0 - px * v2)
                    out[2, i, j, k] = I * (px * v1 - py * v0)
    return np.asarray(out)


cdef void _scale_sum(const double[:, :, ::1] E, const double[:, :, :, ::1] u, double c,
                    const double[:, :, :, ::1] k, double[:, :, :, ::1] out) noexcept nogil:
    # complex arrays viewed as interleaved (re, im) doubles along the last axis
    cdef Py_ssize_t d, i, j, l
    cdef Py_ssize_t n0 = u.shape[1], n1 = u.shape[2], n2 = E.shape[2]
    cdef double e
    for d in range(3):
        for i in range(n0):
            for j in range(n1):
                for l in range(n2):
                    e = E[i, j, l]
                    out[d, i, j, 2 * l] = e * (u[d, i, j, 2 * l] + c * k[d, i, j, 2 * l])
                    out[d, i, j, 2 * l + 1] = e * (u[d, i, j, 2 * l + 1] + c * k[d, i, j, 2 * l + 1])


def if_stage(const double[:, :, ::1] E, u, double c, k, out):
    """out = E * (u + c * k) with E broadcast over the component axis."""
    _scale_sum(E, np.asarray(u).view(np.float64), c, np.asarray(k).view(np.float64),
               np.asarray(out).view(np.float64))
    return out


def block_mean(const double[:, :, ::1] f, Py_ssize_t p):
    """Average over non-overlapping p x p x p blocks of a cubic array."""
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t m = n // p
    cdef Py_ssize_t i, j, k
    out_arr = np.zeros((m, m, m), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double w = 1.0 / (p * p * p)
    with nogil:
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    out[i // p, j // p, k // p] += f[i, j, k]
        for i in range(m):
            for j in range(m):
                for k in range(m):
                    out[i, j, k] *= w
    return out_arr
