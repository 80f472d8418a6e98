"""Observation operators I_h and empirical estimates of their type-1 constants.

Three kinds are supported:

* ``modal``: orthogonal projection onto Fourier shells with eigenvalue <= cutoff.
* ``volume``: cell averages on a partition into cubes of side ``h``, mean corrected.
* ``mollified``: the volume interpolant convolved with a smooth bump of radius
  ``eps_fraction * h``, so its range lies in H^1.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from nudge3d import kernels
from nudge3d.errors import ConfigurationError
from nudge3d.spectral import (
    SpectralField,
    random_div_free_field,
    sobolev_norm,
    to_physical,
    to_spectral,
)

KINDS = ("modal", "volume", "mollified")

# relative slack when comparing eigenvalues against a cutoff
_CUTOFF_RTOL = 1e-9


@dataclass(frozen=True)
class InterpolantSpec:
    kind: str
    cutoff: float | None = None
    h: float | None = None
    eps_fraction: float | None = None
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    c_override: float | None = None
    protocol: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown interpolant kind {self.kind!r}")
        if self.kind == "modal":
            if self.cutoff is None or not self.cutoff > 0:
                raise ConfigurationError("modal interpolant needs a positive cutoff")
        else:
            if self.h is None or not self.h > 0:
                raise ConfigurationError(f"{self.kind} interpolant needs a positive h")
        if self.kind == "mollified":
            if self.eps_fraction is None or not 0 < self.eps_fraction <= 0.5:
                raise ConfigurationError("eps_fraction must lie in (0, 1/2]")
        for name in ("c1", "c2", "c3", "c_override"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ConfigurationError(f"{name} must be positive")

    @classmethod
    def modal(cls, cutoff, **kw):
        return cls("modal", cutoff=float(cutoff), **kw)

    @classmethod
    def volume(cls, h, **kw):
        return cls("volume", h=float(h), **kw)

    @classmethod
    def mollified(cls, h, eps_fraction=0.5, **kw):
        return cls("mollified", h=float(h), eps_fraction=float(eps_fraction), **kw)

    @property
    def resolution(self):
        """The length scale h of the type-1 inequalities (cutoff^-1/2 for modal)."""
        if self.kind == "modal":
            return 0.0 if math.isinf(self.cutoff) else self.cutoff ** -0.5
        return self.h

    @property
    def c(self):
        """Single constant used by the nudging-parameter windows."""
        if self.c_override is not None:
            return self.c_override
        if self.kind == "modal" and self.c1 is None:
            return 1.0
        known = [x for x in (self.c1, self.c2, self.c3) if x is not None]
        if not known:
            raise ConfigurationError(
                f"{self.kind} interpolant has no estimated constants; run "
                "estimate_type1_constants or set c_override")
        return max([x * x for x in known] + [1.0])

    def key(self):
        return (self.kind, self.cutoff, self.h, self.eps_fraction)

    def with_constants(self, c1, c2, c3=None, protocol=None):
        return replace(self, c1=c1, c2=c2, c3=c3, protocol=protocol)

    def to_dict(self):
        d = asdict(self)
        if d["cutoff"] is not None and math.isinf(d["cutoff"]):
            d["cutoff"] = "inf"
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("cutoff") == "inf":
            d["cutoff"] = math.inf
        return cls(**d)


def _bump(r):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(r < 1, np.exp(-1.0 / np.where(r < 1, 1 - r * r, 1.0)), 0.0)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(200)
_R = 0.5 * (_GL_NODES + 1.0)
_W = 0.5 * _GL_WEIGHTS


def mollifier_normalization():
    """K0 with 1/K0 = integral of exp(-1/(1-|x|^2)) over the unit ball."""
    return 1.0 / (4 * math.pi * np.sum(_W * _bump(_R) * _R**2))


def mollifier_transform(q):
    """Fourier transform of the unit-radius normalized bump at radial frequency q."""
    q = np.asarray(q, dtype=float)
    k0 = mollifier_normalization()
    # sinc(x/pi) = sin(x)/x
    integrand = _bump(_R) * _R**2 * np.sinc(np.multiply.outer(q, _R) / math.pi)
    return 4 * math.pi * k0 * np.sum(integrand * _W, axis=-1)


class InterpolantOperator:
    """An InterpolantSpec bound to a grid, acting on raw coefficient arrays."""

    def __init__(self, spec, grid):
        self.spec = spec
        self.grid = grid
        if spec.kind == "modal":
            lam = grid.eigenvalues
            if math.isinf(spec.cutoff):
                keep = lam > 0
            else:
                if spec.cutoff > grid.max_resolvable_eigenvalue * (1 + _CUTOFF_RTOL):
                    raise ConfigurationError(
                        f"cutoff {spec.cutoff:g} exceeds the grid's largest resolvable "
                        f"eigenvalue {grid.max_resolvable_eigenvalue:g}")
                keep = (lam > 0) & (lam <= spec.cutoff * (1 + _CUTOFF_RTOL))
                n = grid.n
                keep[n // 2, :, :] = False
                keep[:, n // 2, :] = False
                keep[:, :, -1] = False
            self.mask = keep.astype(np.float64)
            self.needs_physical = False
        else:
            ratio = spec.h / grid.dx
            p = int(round(ratio))
            if p < 1 or abs(ratio - p) > 1e-9 * max(1.0, ratio) or grid.n % p:
                raise ConfigurationError(
                    f"h={spec.h:g} must be an integer multiple of the grid spacing "
                    f"{grid.dx:g} that divides L")
            self.p = p
            self.cells = grid.n // p
            self.needs_physical = True
            self.smoothing = None
            if spec.kind == "mollified":
                eps = spec.eps_fraction * spec.h
                q = grid.k0 * np.sqrt(grid.k2) * eps
                uniq, inv = np.unique(q, return_inverse=True)
                self.smoothing = mollifier_transform(uniq)[inv].reshape(q.shape)

    def apply(self, hat, phys=None):
        """I_h of a coefficient array; ``phys`` may carry its physical values."""
        if self.spec.kind == "modal":
            return hat * self.mask
        if phys is None:
            phys = to_physical(self.grid, hat)
        means = np.empty((3,) + (self.cells,) * 3)
        for c in range(3):
            means[c] = kernels.block_mean(np.ascontiguousarray(phys[c]), self.p)
        return self.from_cell_means(means)

    def from_cell_means(self, means):
        """Output coefficients for per-component cell averages of shape (3, m, m, m)."""
        p = self.p
        pieces = np.empty((3,) + self.grid.shape)
        for c in range(3):
            m = means[c] - means[c].mean()
            pieces[c] = np.repeat(np.repeat(np.repeat(m, p, 0), p, 1), p, 2)
        out = to_spectral(self.grid, pieces)
        if self.smoothing is not None:
            out *= self.smoothing
        out[:, 0, 0, 0] = 0.0
        return out


    def cell_means_from(self, coeffs):
        """Invert ``from_cell_means`` using the coarse-grid band of ``coeffs``."""
        g = self.grid
        c, n = self.cells, g.n
        kc = np.rint(np.fft.fftfreq(c, 1.0 / c)).astype(np.int64)
        kzc = np.rint(np.fft.rfftfreq(c, 1.0 / c)).astype(np.int64)
        ix = kc % n
        sub = coeffs[:, ix][:, :, ix][..., kzc]

        def box(k):
            j = np.arange(self.p)
            return np.exp(-2j * np.pi * np.multiply.outer(k, j) / n).mean(axis=-1)

        factor = box(kc)[:, None, None] * box(kc)[None, :, None] * box(kzc)[None, None, :]
        if self.smoothing is not None:
            factor = factor * self.smoothing[np.ix_(ix, ix, kzc)]
        return sfft.irfftn(sub / factor, s=(c, c, c), axes=(-3, -2, -1), norm="forward")


_operator_cache = {}


def make_operator(spec, grid):
    key = (spec.key(), grid)
    op = _operator_cache.get(key)
    if op is None:
        op = InterpolantOperator(spec, grid)
        if len(_operator_cache) > 64:
            _operator_cache.clear()
        _operator_cache[key] = op
    return op


def apply_interpolant(spec, v):
    """I_h v. Volume kinds are not Leray-projected."""
    op = make_operator(spec, v.grid)
    return SpectralField(v.grid, op.apply(v.coeffs), copy=False)


def lambda_of_cutoff(grid, cutoff):
    """Largest retained eigenvalue and number of retained wavevectors for a shell cutoff."""
    if cutoff < grid.lambda1 * (1 - _CUTOFF_RTOL):
        raise ConfigurationError(
            f"cutoff {cutoff:g} is below lambda1={grid.lambda1:g}: empty projector")
    op = make_operator(InterpolantSpec.modal(cutoff), grid)
    keep = op.mask > 0
    lam_k = float(grid.eigenvalues[keep].max())
    count = int(round(float(np.sum(op.mask * grid.weights))))
    return lam_k, count


def shell_eigenvalues(grid, limit=None):
    """Distinct nonzero eigenvalues of the Galerkin band, ascending."""
    lam = grid.eigenvalues[(grid.dealias_mask > 0) & (grid.k2 > 0)]
    vals = np.unique(np.round(lam / grid.lambda1).astype(np.int64)) * grid.lambda1
    if limit is not None:
        vals = vals[vals <= limit * (1 + _CUTOFF_RTOL)]
    return vals


DEFAULT_SPECTRA = (0.0, 5.0 / 6.0, 5.0 / 3.0, 2.5, 11.0 / 3.0)


def _default_kmax(grid):
    return tuple(k for k in (1, 2, 3, 4, 6, 8, 12, 16, 24) if k < grid.n // 2)


def _sample_ratios(spec, grid, seed, i, spectrum, k_max):
    v = random_div_free_field(grid, (seed, i), spectrum, k_max)
    op = make_operator(spec, grid)
    iv = op.apply(v.coeffs)
    Iv = SpectralField(grid, iv, copy=False)
    l2 = sobolev_norm(v, 0)
    h1 = sobolev_norm(v, 1)
    r1 = sobolev_norm(Iv, 0) / l2
    r2 = sobolev_norm(Iv - v, 0) / (spec.resolution * h1)
    r3 = sobolev_norm(Iv, 1) / h1
    return r1, r2, r3


def estimate_type1_constants(spec, grid, n_samples=200, seed=0, spectra=DEFAULT_SPECTRA,
                             kmax_choices=None, workers=1):
    """Empirical (c1, c2, c3) for ``spec`` on ``grid``.

    c1 bounds |I v|/|v|, c2 bounds |I v - v|/(h ||v||) and c3 bounds
    ||I v||/||v|| over random solenoidal fields. The modal projector returns
    its exact constants (1, 1, 1); c3 is None for the sharp volume
    interpolant, whose range is not in H^1.
    """
    if n_samples < 100:
        raise ConfigurationError("n_samples must be >= 100")
    if spec.kind == "modal":
        return 1.0, 1.0, 1.0
    kmax_choices = tuple(kmax_choices or _default_kmax(grid))
    params = [(i, spectra[i % len(spectra)], kmax_choices[(i // len(spectra)) % len(kmax_choices)])
              for i in range(n_samples)]
    make_operator(spec, grid)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            ratios = list(pool.map(lambda a: _sample_ratios(spec, grid, seed, *a), params))
    else:
        ratios = [_sample_ratios(spec, grid, seed, *a) for a in params]
    r = np.array(ratios)
    c1, c2, c3 = (float(x) for x in r.max(axis=0))
    if spec.kind == "volume":
        c3 = None
    return c1, c2, c3


def calibrate(spec, grid, n_samples=200, seed=0, **kw):
    """Return ``spec`` with estimated constants and the sampling protocol attached."""
    c1, c2, c3 = estimate_type1_constants(spec, grid, n_samples, seed, **kw)
    protocol = {
        "method": "exact" if spec.kind == "modal" else "max over random solenoidal fields",
        "n_samples": n_samples,
        "seed": seed,
        "grid_n": grid.n,
        "grid_L": grid.L,
    }
    return spec.with_constants(c1, c2, c3, protocol)
