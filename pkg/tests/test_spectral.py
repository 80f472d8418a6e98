import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nudge3d.errors import ConfigurationError
from nudge3d.spectral import (
    GridSpec,
    SpectralField,
    beltrami_field,
    bilinear_term,
    curl,
    hermitian_error,
    inner_product,
    leray_project,
    nonlinear_term,
    random_div_free_field,
    sobolev_norm,
    stokes_apply,
    to_physical,
)


def single_mode(grid, k, vec):
    """Real field 2 Re(vec e^{i 2 pi k.x/L}) built in physical space."""
    X, Y, Z = grid.coordinates()
    ph = grid.k0 * (k[0] * X + k[1] * Y + k[2] * Z)
    vec = np.asarray(vec, dtype=complex)
    u = np.stack([2 * (vec[i] * np.exp(1j * ph)).real for i in range(3)])
    return SpectralField.from_physical(grid, u)


def unprojected(grid, seed):
    rng = np.random.default_rng(seed)
    return SpectralField.from_physical(grid, rng.standard_normal((3,) + grid.shape))


class TestGrid:
    def test_lambda1(self):
        assert GridSpec(8, 4.0).lambda1 == pytest.approx((2 * math.pi / 4.0) ** 2, rel=1e-15)

    @pytest.mark.parametrize("n", [2, 5, 7])
    def test_bad_n(self, n):
        with pytest.raises(ConfigurationError):
            GridSpec(n)

    def test_bad_length(self):
        with pytest.raises(ConfigurationError):
            GridSpec(8, -1.0)

    def test_dealias_keeps_strictly_below_a_third(self):
        # alias-free band for the quadratic product: 2K < n - K
        for n in (16, 32, 48, 64):
            K = GridSpec(n).kmax_dealias
            assert 3 * K < n and 3 * (K + 1) >= n


class TestLeray:
    def test_gradient_mode_annihilated(self, grid16):
        v = single_mode(grid16, (1, 0, 0), (1, 0, 0))
        assert sobolev_norm(leray_project(v)) < 1e-13

    def test_solenoidal_mode_unchanged(self, grid16):
        v = single_mode(grid16, (0, 1, 0), (1, 0, 0))
        assert np.allclose(leray_project(v).coeffs, v.coeffs, atol=1e-15)

    def test_idempotent(self, grid16):
        p = leray_project(unprojected(grid16, 3))
        assert np.abs(leray_project(p).coeffs - p.coeffs).max() < 1e-14 * np.abs(p.coeffs).max()

    def test_output_divergence_free(self, grid16):
        assert leray_project(unprojected(grid16, 4)).divergence_error() < 1e-14

    def test_self_adjoint(self, grid16):
        for s in range(5):
            u, v = unprojected(grid16, 10 + s), unprojected(grid16, 20 + s)
            a = inner_product(leray_project(u), v)
            b = inner_product(u, leray_project(v))
            assert abs(a - b) <= 1e-12 * sobolev_norm(u) * sobolev_norm(v)


class TestStokes:
    def test_eigenvalue_one(self):
        g = GridSpec(8)
        v = single_mode(g, (1, 0, 0), (0, 1, 0))
        assert np.allclose(stokes_apply(v, 1).coeffs, v.coeffs, atol=1e-15)

    def test_half_power_scales_by_two(self):
        g = GridSpec(8)
        v = single_mode(g, (2, 0, 0), (0, 0, 1))
        assert np.allclose(stokes_apply(v, 0.5).coeffs, 2 * v.coeffs, atol=1e-14)

    def test_identity_at_zero(self, grid16):
        v = random_div_free_field(grid16, 1)
        assert np.array_equal(stokes_apply(v, 0).coeffs, v.coeffs)

    def test_rejects_power_below_minus_one(self, grid16):
        with pytest.raises(ConfigurationError):
            stokes_apply(random_div_free_field(grid16, 1), -1.5)

    def test_box_scaling(self, box_grid):
        v = single_mode(box_grid, (0, 0, 1), (1, 0, 0))
        np.testing.assert_allclose(stokes_apply(v, 1).coeffs, box_grid.lambda1 * v.coeffs,
                                   atol=1e-14)


class TestNorms:
    def test_single_mode_l2(self):
        g = GridSpec(16)
        X = g.coordinates()[0]
        u = SpectralField.from_physical(g, np.stack([0 * X, np.sin(X), 0 * X]))
        assert sobolev_norm(u, 0) == pytest.approx(math.sqrt((2 * math.pi) ** 3 / 2), rel=1e-13)
        assert sobolev_norm(u, 1) == pytest.approx(sobolev_norm(u, 0), rel=1e-13)

    def test_poincare(self, box_grid):
        for s in range(100):
            v = random_div_free_field(box_grid, s, 1.0, 5)
            assert math.sqrt(box_grid.lambda1) * sobolev_norm(v, 0) <= sobolev_norm(v, 1) * (1 + 1e-14)

    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 3.0))
    def test_parseval(self, seed, spectrum):
        g = GridSpec(16, 2.5)
        v = random_div_free_field(g, seed, spectrum, 7)
        quad = np.sum(to_physical(g, v.coeffs) ** 2) * g.dx**3
        assert sobolev_norm(v, 0) ** 2 == pytest.approx(quad, rel=1e-10)

    def test_h2_is_norm_of_stokes(self, grid16):
        v = random_div_free_field(grid16, 2)
        assert sobolev_norm(v, 2) == pytest.approx(sobolev_norm(stokes_apply(v, 1), 0), rel=1e-13)


class TestRandomField:
    def test_deterministic(self, grid16):
        a, b = random_div_free_field(grid16, 1), random_div_free_field(grid16, 1)
        assert np.array_equal(a.coeffs, b.coeffs)

    def test_invariants(self, grid16):
        v = random_div_free_field(grid16, 5, 1.0, 7)
        assert v.divergence_error() < 1e-12
        assert hermitian_error(v) < 1e-14
        assert np.all(v.coeffs[:, 0, 0, 0] == 0)

    def test_rejects_large_kmax(self, grid16):
        with pytest.raises(ConfigurationError):
            random_div_free_field(grid16, 0, 1.0, 8)

    def test_shell_energy_ratio(self, grid32):
        # oracle: count lattice points on the shells |k|=1 and |k|=4 directly
        v = random_div_free_field(grid32, 11, 2.0, 4)
        shell_count = {
            r2: sum(1 for k in itertools.product(range(-4, 5), repeat=3)
                    if sum(x * x for x in k) == r2)
            for r2 in (1, 16)
        }
        a2 = np.sum(np.abs(v.coeffs) ** 2, axis=0) * grid32.weights
        k2 = np.rint(grid32.k2)
        e1, e16 = a2[k2 == 1].sum(), a2[k2 == 16].sum()
        expected = (1 / 4) ** 4 * shell_count[16] / shell_count[1]
        assert e16 / e1 == pytest.approx(expected, rel=1e-12)

    def test_same_field_on_finer_grid(self):
        a = random_div_free_field(GridSpec(16), 3, 1.0, 5)
        b = random_div_free_field(GridSpec(32), 3, 1.0, 5)
        assert sobolev_norm(a, 1) == pytest.approx(sobolev_norm(b, 1), rel=1e-13)


class TestBeltrami:
    def test_curl_eigenfield(self, grid16):
        u = beltrami_field(1, 1, 1, grid16)
        assert np.abs(curl(u).coeffs - u.coeffs).max() < 1e-13

    def test_energy(self, grid16):
        u = beltrami_field(1, 0, 0, grid16)
        assert sobolev_norm(u, 0) ** 2 == pytest.approx((2 * math.pi) ** 3, rel=1e-13)

    @pytest.mark.parametrize("abc", [(1, 1, 1), (0.3, -2, 0.7)])
    def test_projection_fixed(self, grid16, abc):
        u = beltrami_field(*abc, grid16)
        assert np.abs(leray_project(u).coeffs - u.coeffs).max() < 1e-15


class TestBilinear:
    def test_beltrami_annihilated(self, grid32):
        u = beltrami_field(1, 1, 1, grid32)
        assert sobolev_norm(bilinear_term(u, u)) <= 1e-12 * sobolev_norm(u) ** 2

    def test_energy_orthogonality(self, grid16):
        for s in range(10):
            u = random_div_free_field(grid16, (1, s), 1.0, 7)
            w = random_div_free_field(grid16, (2, s), 0.5, 7)
            b = bilinear_term(u, w)
            scale = sobolev_norm(b) * sobolev_norm(w)
            assert abs(inner_product(b, w)) <= 1e-10 * scale

    def test_difference_identity(self, grid16):
        u = random_div_free_field(grid16, 7, 1.0, 5)
        w = random_div_free_field(grid16, 8, 1.0, 5)
        d = u - w
        lhs = bilinear_term(u, u) - bilinear_term(w, w)
        rhs = bilinear_term(d, u) + bilinear_term(w, d)
        assert sobolev_norm(lhs - rhs) <= 1e-10 * sobolev_norm(lhs)

    def test_rotational_form_matches(self, grid16):
        u = random_div_free_field(grid16, 9, 1.0, 5)
        a, b = nonlinear_term(u), bilinear_term(u, u)
        assert sobolev_norm(a - b) <= 1e-12 * sobolev_norm(b)

    def test_output_divergence_free(self, grid16):
        u = random_div_free_field(grid16, 9, 1.0, 7)
        assert bilinear_term(u, u).divergence_error() < 1e-12

    def test_trilinear_envelope(self, grid16):
        # |<B(u,v),w>| <= C |u|^{1/4} ||u||^{3/4} ||v|| |w|^{1/4} ||w||^{3/4} with one C
        ratios = []
        for s in range(30):
            u, v, w = (random_div_free_field(grid16, (s, j), 1.0 + j / 2, 7) for j in range(3))
            lhs = abs(inner_product(bilinear_term(u, v), w))
            rhs = (sobolev_norm(u, 0) ** 0.25 * sobolev_norm(u, 1) ** 0.75 * sobolev_norm(v, 1)
                   * sobolev_norm(w, 0) ** 0.25 * sobolev_norm(w, 1) ** 0.75)
            ratios.append(lhs / rhs)
        assert max(ratios) < 1.0


class TestFieldValue:
    def test_immutable(self, grid16):
        v = random_div_free_field(grid16, 1)
        with pytest.raises((AttributeError, ValueError)):
            v.coeffs[0, 1, 0, 0] = 1.0
        with pytest.raises(AttributeError):
            v.grid = None

    def test_mean_zeroed(self, grid16):
        arr = np.zeros(grid16.spectral_shape, complex)
        arr[:, 0, 0, 0] = 1.0
        assert np.all(SpectralField(grid16, arr).coeffs == 0)
