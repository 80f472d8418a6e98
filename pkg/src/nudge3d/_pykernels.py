"""Pure numpy implementations of the hot kernels.

Signatures mirror ``_ckernels``; ``out`` arrays are written in place and
returned.
"""
import numpy as np


def cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


def project(v, kx, ky, kz, inv_k2, mask, scale, out):
    kx = kx[:, None, None]
    ky = ky[None, :, None]
    kz = kz[None, None, :]
    kv = (kx * v[0] + ky * v[1] + kz * v[2]) * inv_k2
    m = mask * scale * (inv_k2 != 0.0)
    out[0] = m * (v[0] - kx * kv)
    out[1] = m * (v[1] - ky * kv)
    out[2] = m * (v[2] - kz * kv)
    return out


def curl(v, kx, ky, kz, out):
    kx = kx[:, None, None]
    ky = ky[None, :, None]
    kz = kz[None, None, :]
    v0, v1, v2 = v[0].copy(), v[1].copy(), v[2].copy()
    out[0] = 1j * (ky * v2 - kz * v1)
    out[1] = 1j * (kz * v0 - kx * v2)
    out[2] = 1j * (kx * v1 - ky * v0)
    return out


def if_stage(E, u, c, k, out):
    np.multiply(E, u + c * k, out=out)
    return out


def block_mean(f, p):
    n = f.shape[0]
    m = n // p
    return f.reshape(m, p, m, p, m, p).mean(axis=(1, 3, 5))
