"""Periodic-box spectral representation of divergence-free vector fields.

Convention: ``u(x) = sum_k u_k exp(i 2 pi k.x / L)`` with integer wavevectors
``k``. Coefficients are stored in numpy's ``rfftn`` layout, shape
``(3, n, n, n//2 + 1)``, so Hermitian symmetry of real fields is implicit.
All norms carry the ``L**3`` Parseval factor and are true integral norms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from nudge3d import kernels
from nudge3d.errors import ConfigurationError

DEALIAS_RULES = ("two-thirds", "none")

_fft_workers = 1


def set_fft_workers(workers):
    """Thread count for scipy's FFTs. Results do not depend on it."""
    global _fft_workers
    _fft_workers = max(1, int(workers))


def fft_workers():
    return _fft_workers


@dataclass(frozen=True)
class GridSpec:
    n: int
    L: float = 2 * math.pi
    dealias: str = "two-thirds"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise ConfigurationError(f"grid.n must be an even integer >= 4, got {self.n}")
        if not self.L > 0:
            raise ConfigurationError(f"grid.L must be positive, got {self.L}")
        if self.dealias not in DEALIAS_RULES:
            raise ConfigurationError(f"unknown dealias rule {self.dealias!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def spectral_shape(self):
        return (3, self.n, self.n, self.n // 2 + 1)

    @property
    def dx(self):
        return self.L / self.n

    @property
    def k0(self):
        """Base wavenumber 2 pi / L."""
        return 2 * math.pi / self.L

    @property
    def lambda1(self):
        """Smallest Stokes eigenvalue (2 pi / L)^2."""
        return self.k0**2

    @property
    def volume(self):
        return self.L**3

    @cached_property
    def kx(self):
        return np.fft.fftfreq(self.n, 1.0 / self.n)

    @cached_property
    def kz(self):
        return np.fft.rfftfreq(self.n, 1.0 / self.n)

    @cached_property
    def k2(self):
        """Integer |k|^2 on the rfft layout."""
        kx = self.kx[:, None, None]
        ky = self.kx[None, :, None]
        kz = self.kz[None, None, :]
        return kx**2 + ky**2 + kz**2

    @cached_property
    def inv_k2(self):
        with np.errstate(divide="ignore"):
            out = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        return np.ascontiguousarray(out)

    @cached_property
    def eigenvalues(self):
        """Stokes eigenvalue |2 pi k / L|^2 of every stored mode."""
        return self.lambda1 * self.k2

    @cached_property
    def weights(self):
        """Multiplicity of each rfft column in a full-spectrum sum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w

    @cached_property
    def deriv_k(self):
        """Scaled wavenumbers for derivatives, Nyquist entries zeroed."""
        kx = self.k0 * self.kx
        kx[self.n // 2] = 0.0
        kz = self.k0 * self.kz
        kz[-1] = 0.0
        return np.ascontiguousarray(kx), np.ascontiguousarray(kz)

    @property
    def kmax_dealias(self):
        """Largest retained |k_i|."""
        if self.dealias == "two-thirds":
            return -(-self.n // 3) - 1
        return self.n // 2 - 1

    @cached_property
    def dealias_mask(self):
        K = self.kmax_dealias
        kx = np.abs(self.kx) <= K
        kz = np.abs(self.kz) <= K
        m = kx[:, None, None] & kx[None, :, None] & kz[None, None, :]
        return np.ascontiguousarray(m.astype(np.float64))

    @cached_property
    def max_eigenvalue(self):
        """Largest eigenvalue carried by a dealiased (Galerkin) mode."""
        return float(self.eigenvalues[self.dealias_mask > 0].max())

    @cached_property
    def max_resolvable_eigenvalue(self):
        """Largest eigenvalue among non-Nyquist modes."""
        K = self.n // 2 - 1
        return self.lambda1 * 3 * K * K

    def coordinates(self):
        x = np.arange(self.n) * self.dx
        return np.meshgrid(x, x, x, indexing="ij")

    def eig_power(self, alpha):
        cache = self.__dict__.setdefault("_eig_power_cache", {})
        key = float(alpha)
        if key not in cache:
            lam = self.eigenvalues
            if key == 0.0:
                p = np.ones_like(lam)
            else:
                with np.errstate(divide="ignore"):
                    p = np.where(lam > 0, np.where(lam > 0, lam, 1.0) ** key, 0.0)
            cache[key] = p * self.weights
        return cache[key]


def to_physical(grid, hat):
    return sfft.irfftn(hat, s=grid.shape, axes=(-3, -2, -1), norm="forward",
                       workers=_fft_workers)


def to_spectral(grid, phys):
    return sfft.rfftn(phys, axes=(-3, -2, -1), norm="forward", workers=_fft_workers)


class SpectralField:
    """Immutable real vector field held as Fourier coefficients.

    The mean (k = 0) mode is zeroed on construction.
    """

    __slots__ = ("grid", "coeffs")

    def __init__(self, grid, coeffs, copy=True):
        arr = np.array(coeffs, dtype=np.complex128, copy=copy, order="C")
        if arr.shape != grid.spectral_shape:
            raise ConfigurationError(
                f"coefficient shape {arr.shape} does not match grid {grid.spectral_shape}")
        if not arr.flags.writeable:
            arr = arr.copy()
        arr[:, 0, 0, 0] = 0.0
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "coeffs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("SpectralField is immutable")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.spectral_shape, np.complex128), copy=False)

    @classmethod
    def from_physical(cls, grid, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (3,) + grid.shape:
            raise ConfigurationError(f"physical field must have shape {(3,) + grid.shape}")
        return cls(grid, to_spectral(grid, u), copy=False)

    def to_physical(self):
        return to_physical(self.grid, self.coeffs)

    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid:
            raise ConfigurationError("fields live on different grids")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs + other.coeffs, copy=False)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs - other.coeffs, copy=False)

    def __mul__(self, a):
        if not np.isscalar(a):
            return NotImplemented
        return SpectralField(self.grid, self.coeffs * a, copy=False)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, copy=False)

    def __repr__(self):
        return f"SpectralField(n={self.grid.n}, L={self.grid.L:g}, |u|={sobolev_norm(self, 0):.6g})"

    def divergence_error(self):
        """max |k.u_k| / max |k||u_k|, zero for an exactly solenoidal field."""
        g = self.grid
        kx = g.kx[:, None, None]
        ky = g.kx[None, :, None]
        kz = g.kz[None, None, :]
        c = self.coeffs
        div = np.abs(kx * c[0] + ky * c[1] + kz * c[2])
        scale = np.sqrt(g.k2) * np.sqrt(np.sum(np.abs(c) ** 2, axis=0))
        top = scale.max()
        return float(div.max() / top) if top > 0 else 0.0

    def is_divergence_free(self, tol=1e-12):
        return self.divergence_error() <= tol


def hermitian_error(v):
    """Largest violation of u_{-k} = conj(u_k) in the self-paired rfft planes."""
    c = v.coeffs
    n = v.grid.n
    worst = 0.0
    for iz in (0, n // 2):
        plane = c[:, :, :, iz]
        mirrored = np.conj(plane[:, (-np.arange(n)) % n][:, :, (-np.arange(n)) % n])
        worst = max(worst, float(np.abs(plane - mirrored).max()))
    return worst


def dealias(v):
    """Galerkin truncation P_N onto the retained band."""
    return SpectralField(v.grid, v.coeffs * v.grid.dealias_mask, copy=False)


def leray_project(v):
    """Leray-Hopf projection onto divergence-free fields."""
    g = v.grid
    out = np.empty(g.spectral_shape, np.complex128)
    ones = np.ones(g.k2.shape)
    kernels.project(np.ascontiguousarray(v.coeffs), g.kx, g.kx, g.kz, g.inv_k2, ones, 1.0, out)
    return SpectralField(g, out, copy=False)


def stokes_apply(v, power):
    """A^power acting diagonally; A = -Laplacian on solenoidal fields."""
    power = float(power)
    if power < -1:
        raise ConfigurationError("stokes_apply supports power >= -1")
    g = v.grid
    if power == 0:
        return SpectralField(g, v.coeffs, copy=True)
    lam = g.eigenvalues
    with np.errstate(divide="ignore"):
        factor = np.where(lam > 0, np.where(lam > 0, lam, 1.0) ** power, 0.0)
    return SpectralField(g, v.coeffs * factor, copy=False)


def curl(v):
    g = v.grid
    kx, kz = g.deriv_k
    out = np.empty(g.spectral_shape, np.complex128)
    kernels.curl(np.ascontiguousarray(v.coeffs), kx, kx, kz, out)
    return SpectralField(g, out, copy=False)


def divergence_coeffs(v):
    g = v.grid
    kx, kz = g.deriv_k
    c = v.coeffs
    return 1j * (kx[:, None, None] * c[0] + kx[None, :, None] * c[1] + kz[None, None, :] * c[2])


def inner_product(u, v):
    """L^2 inner product (u, v) = integral of u . v over the box."""
    g = u.grid
    prod = np.sum(u.coeffs * np.conj(v.coeffs), axis=0).real
    return float(g.volume * np.sum(prod * g.weights))


def _norm_sq(grid, hat, alpha):
    a2 = np.sum(hat.real**2 + hat.imag**2, axis=0)
    return grid.volume * float(np.sum(a2 * grid.eig_power(alpha)))


def sobolev_norm(v, alpha=0):
    """|A^{alpha/2} v|: alpha=0 gives |v|, alpha=1 gives ||v||, alpha=2 gives |Av|."""
    if alpha < 0:
        raise ConfigurationError("sobolev_norm needs alpha >= 0")
    return math.sqrt(_norm_sq(v.grid, v.coeffs, alpha))


def bilinear_term(u, v):
    """P_sigma[(u . grad) v], dealiased; inputs are truncated to the Galerkin band first."""
    g = u.grid
    if v.grid != g:
        raise ConfigurationError("fields live on different grids")
    mask = g.dealias_mask
    uh = u.coeffs * mask
    vh = v.coeffs * mask
    up = to_physical(g, uh)
    kx, kz = g.deriv_k
    ks = (kx[:, None, None], kx[None, :, None], kz[None, None, :])
    conv = np.zeros((3,) + g.shape)
    for j in range(3):
        grads = to_physical(g, np.stack([1j * ks[i] * vh[j] for i in range(3)]))
        conv[j] = up[0] * grads[0] + up[1] * grads[1] + up[2] * grads[2]
    out = np.empty(g.spectral_shape, np.complex128)
    kernels.project(to_spectral(g, conv), g.kx, g.kx, g.kz, g.inv_k2, mask, 1.0, out)
    return SpectralField(g, out, copy=False)


def nonlinear_term(u):
    """B(u, u) via the rotational form P_sigma(omega x u); equals bilinear_term(u, u)."""
    g = u.grid
    mask = g.dealias_mask
    uh = np.ascontiguousarray(u.coeffs * mask)
    kx, kz = g.deriv_k
    wh = np.empty_like(uh)
    kernels.curl(uh, kx, kx, kz, wh)
    up = np.ascontiguousarray(to_physical(g, uh))
    wp = np.ascontiguousarray(to_physical(g, wh))
    prod = np.empty_like(up)
    kernels.cross(wp, up, prod)
    out = np.empty(g.spectral_shape, np.complex128)
    kernels.project(np.ascontiguousarray(to_spectral(g, prod)), g.kx, g.kx, g.kz, g.inv_k2,
                    mask, 1.0, out)
    return SpectralField(g, out, copy=False)


def _as_seed(seed):
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed]
    return int(seed)


def random_div_free_field(grid, seed, spectrum=5.0 / 3.0, k_max=4, amplitude=1.0):
    """Random real solenoidal field with |u_k| = amplitude * |k|^-spectrum for 0 < |k| <= k_max.

    Directions and phases are random; the coefficients depend only on
    ``seed``, ``spectrum`` and ``k_max``, not on ``grid.n``, so the same seed
    yields the same continuous field on every grid that resolves it.
    """
    k_max = int(k_max)
    if k_max >= grid.n // 2:
        raise ConfigurationError(f"k_max={k_max} must be < n/2={grid.n // 2}")
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    rng = np.random.default_rng(_as_seed(seed))
    m = 2 * k_max + 1
    r = np.arange(-k_max, k_max + 1)
    KX, KY, KZ = np.meshgrid(r, r, r, indexing="ij")
    g = rng.standard_normal((3, m, m, m)) + 1j * rng.standard_normal((3, m, m, m))
    # index of -k in the centred cube is the reversed index
    h = g + np.conj(g[:, ::-1, ::-1, ::-1])
    kk = np.stack([KX, KY, KZ]).astype(float)
    k2 = np.sum(kk**2, axis=0)
    safe = np.where(k2 > 0, k2, 1.0)
    h = h - kk * (np.sum(kk * h, axis=0) / safe)
    norm = np.sqrt(np.sum(np.abs(h) ** 2, axis=0))
    keep = (k2 > 0) & (k2 <= k_max**2) & (norm > 1e-300)
    mag = np.where(keep, amplitude * safe ** (-spectrum / 2.0) / np.where(norm > 0, norm, 1.0), 0.0)
    h = h * mag
    out = np.zeros(grid.spectral_shape, np.complex128)
    half = KZ >= 0
    ix = KX[half] % grid.n
    iy = KY[half] % grid.n
    iz = KZ[half]
    for c in range(3):
        out[c, ix, iy, iz] = h[c][half]
    return SpectralField(grid, out, copy=False)


def beltrami_field(a, b, c, grid):
    """ABC flow (a sin z + c cos y, b sin x + a cos z, c sin y + b cos x) in units of 2 pi x / L.

    It is an eigenfield of the curl with eigenvalue 2 pi / L.
    """
    X, Y, Z = (grid.k0 * q for q in grid.coordinates())
    u = np.stack([
        a * np.sin(Z) + c * np.cos(Y),
        b * np.sin(X) + a * np.cos(Z),
        c * np.sin(Y) + b * np.cos(X),
    ])
    return SpectralField.from_physical(grid, u)


def taylor_green_field(grid, amplitude=1.0):
    """(sin x cos y cos z, -cos x sin y cos z, 0) scaled to the box; solenoidal, |k|^2 = 3."""
    X, Y, Z = (grid.k0 * q for q in grid.coordinates())
    u = amplitude * np.stack([
        np.sin(X) * np.cos(Y) * np.cos(Z),
        -np.cos(X) * np.sin(Y) * np.cos(Z),
        np.zeros_like(X),
    ])
    return SpectralField.from_physical(grid, u)
