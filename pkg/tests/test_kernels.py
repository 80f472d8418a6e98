import os
import subprocess
import sys

import numpy as np
import pytest

from nudge3d import kernels
from nudge3d.spectral import GridSpec

py = kernels.backend_module("python")
try:
    cy = kernels.backend_module("cython")
except ImportError:
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


@pytest.fixture
def rng():
    return np.random.default_rng(3)


def spectral(rng, g):
    shape = g.spectral_shape
    return np.ascontiguousarray(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@needs_cython
def test_cross(rng):
    a, b = rng.standard_normal((2, 3, 12, 12, 12))
    expect = py.cross(a, b, np.empty_like(a))
    got = cy.cross(np.ascontiguousarray(a), np.ascontiguousarray(b), np.empty_like(a))
    np.testing.assert_allclose(got, expect, rtol=0, atol=1e-14)
    np.testing.assert_allclose(expect, np.cross(a, b, axis=0), atol=1e-14)


@needs_cython
@pytest.mark.parametrize("n", [8, 12])
def test_project(rng, n):
    g = GridSpec(n, 3.0)
    v = spectral(rng, g)
    mask = (rng.random(g.spectral_shape[1:]) > 0.3).astype(float)
    args = (v, g.kx, g.kx, g.kz, g.inv_k2, mask, 0.5)
    expect = py.project(*args, np.empty_like(v))
    got = cy.project(*args, np.empty_like(v))
    np.testing.assert_allclose(got, expect, rtol=1e-14, atol=1e-14)


@needs_cython
def test_curl(rng):
    g = GridSpec(10)
    v = spectral(rng, g)
    expect = py.curl(v, g.kx, g.kx, g.kz, np.empty_like(v))
    got = cy.curl(v, g.kx, g.kx, g.kz, np.empty_like(v))
    np.testing.assert_array_equal(got, expect)


@needs_cython
def test_if_stage(rng):
    g = GridSpec(8)
    u, k = spectral(rng, g), spectral(rng, g)
    E = np.ascontiguousarray(rng.random(g.spectral_shape[1:]))
    expect = py.if_stage(E, u, 0.25, k, np.empty_like(u))
    got = cy.if_stage(E, u, 0.25, k, np.empty_like(u))
    np.testing.assert_allclose(got, expect, rtol=1e-15, atol=1e-15)


@needs_cython
@pytest.mark.parametrize("p", [1, 2, 4])
def test_block_mean(rng, p):
    f = rng.standard_normal((16, 16, 16))
    np.testing.assert_allclose(cy.block_mean(f, p), py.block_mean(f, p), rtol=1e-13, atol=1e-15)


def test_block_mean_by_hand():
    f = np.arange(8.0).reshape(2, 2, 2)
    assert py.block_mean(f, 2).item() == pytest.approx(3.5)


def test_pure_python_switch():
    env = dict(os.environ, NUDGE3D_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from nudge3d import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.backend_module("fortran")


RUN = """
import sys
import numpy as np
from nudge3d.dynamics import SolverConfig, integrate
from nudge3d.scenarios import initial_field
from nudge3d.spectral import GridSpec
g = GridSpec(16)
u0 = initial_field(g, "random", seed=1, amplitude=0.5)
res = integrate(u0, SolverConfig(g, 0.05, 0.02, 0.2, "IF-RK4"))
np.save(sys.argv[1], res.u.coeffs)
"""


@needs_cython
def test_solver_agrees_across_backends(tmp_path):
    outs = []
    for flag in ("0", "1"):
        path = tmp_path / f"u{flag}.npy"
        env = dict(os.environ, NUDGE3D_PURE_PYTHON=flag)
        subprocess.run([sys.executable, "-c", RUN, str(path)], env=env, check=True)
        outs.append(np.load(path))
    scale = np.abs(outs[1]).max()
    assert np.abs(outs[0] - outs[1]).max() <= 1e-12 * scale
