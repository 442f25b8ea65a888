"""Spectral core: transforms, derivatives, projections, multipliers, norms."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusns import spectral as sp


def brute_force_dft(values):
    """O(M^{2N}) direct evaluation of the normalized DFT (oracle)."""
    m = values.shape[0]
    dim = values.ndim
    freqs = np.fft.fftfreq(m, d=1.0 / m)
    idx = np.arange(m)
    out = np.zeros(values.shape, dtype=complex)
    for k_flat in np.ndindex(values.shape):
        k = np.array([freqs[i] for i in k_flat])
        phase = 1.0
        for axis in range(dim):
            phase = np.multiply.outer(phase, np.exp(-1j * k[axis] * 2 * np.pi * idx / m)) \
                if axis == 0 else phase
        # build the full phase grid explicitly
        grids = np.meshgrid(*([idx] * dim), indexing="ij")
        expo = sum(k[a] * grids[a] for a in range(dim))
        out[k_flat] = np.sum(values * np.exp(-2j * np.pi * expo / m)) / values.size
    return out


@pytest.fixture(scope="module")
def grid():
    return sp.TorusGrid(2, 32)


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(2024)


class TestGrid:
    def test_frequency_set(self, grid):
        f = set(grid.axis_frequencies.tolist())
        assert f == set(range(-15, 17))  # {-M/2+1, ..., M/2}

    def test_sample_count(self, grid):
        assert grid.size == 32 ** 2

    @pytest.mark.parametrize("dim,m", [(1, 32), (4, 32), (2, 7), (2, 24), (2, 4)])
    def test_rejects_bad_parameters(self, dim, m):
        with pytest.raises(ValueError):
            sp.TorusGrid(dim, m)


class TestTransform:
    def test_single_mode_roundtrip(self, grid):
        f = sp.ScalarField.from_function(grid, lambda x, y: np.cos(x))
        g = sp.transform_roundtrip(f)
        assert np.max(np.abs(g.samples - f.samples)) < 1e-13

    def test_zero_field(self, grid):
        z = sp.ScalarField.zero(grid)
        assert np.max(np.abs(sp.transform_roundtrip(z).samples)) == 0.0

    def test_against_brute_force_dft(self):
        # small grid so the O(M^4) oracle stays cheap
        g = sp.TorusGrid(2, 8)
        rng = np.random.default_rng(7)
        f = sp.random_field(g, rng, max_wavenumber=3)
        oracle = brute_force_dft(f.samples)
        assert np.max(np.abs(oracle - f.coeffs)) < 1e-12

    def test_hermitian_symmetry(self, grid, rng):
        f = sp.random_field(grid, rng)
        assert f.hermitian_defect() < 1e-14

    def test_grid_mismatch_rejected(self, grid):
        other = sp.TorusGrid(2, 16)
        with pytest.raises(sp.GridMismatchError):
            sp.ScalarField(grid, np.zeros(other.shape, dtype=complex))


class TestDerivatives:
    def test_d1_sin(self, grid):
        f = sp.ScalarField.from_function(grid, lambda x, y: np.sin(x))
        d = sp.differentiate(f, (1, 0))
        x, _ = grid.coordinates()
        assert np.max(np.abs(d.samples - np.cos(x))) < 1e-13

    def test_divergence_of_stream_function_field(self, grid):
        x, y = grid.coordinates()
        psi = sp.ScalarField.from_samples(grid, np.sin(x) * np.sin(y))
        u = sp.VectorField.from_components([-sp.partial(psi, 1), sp.partial(psi, 0)])
        div = sp.divergence(u)
        assert sp.lebesgue_norm(div, np.inf) < 1e-13

    def test_laplacian_against_finite_differences(self):
        # second-order finite differences on a refined grid converge O(h^2)
        f_fn = lambda x, y: np.sin(2 * x) * np.cos(y) + 0.3 * np.cos(3 * y)
        errors = []
        for m in (32, 64, 128):
            g = sp.TorusGrid(2, m)
            f = sp.ScalarField.from_function(g, f_fn)
            lap = sp.laplacian(f).samples
            s = f.samples
            h = g.spacing
            fd = sum((np.roll(s, -1, axis=a) - 2 * s + np.roll(s, 1, axis=a)) / h ** 2
                     for a in range(2))
            errors.append(np.max(np.abs(lap - fd)))
        order = math.log2(errors[0] / errors[1])
        assert 1.7 < order < 2.3
        order = math.log2(errors[1] / errors[2])
        assert 1.7 < order < 2.3

    def test_curl_2d(self, grid):
        x, y = grid.coordinates()
        u = sp.VectorField.from_samples(grid, np.stack([np.sin(y), np.zeros_like(x)]))
        w = sp.curl(u)
        assert np.max(np.abs(w.samples + np.cos(y))) < 1e-13

    def test_curl_3d(self):
        g = sp.TorusGrid(3, 8)
        x, y, z = g.coordinates()
        u = sp.VectorField.from_samples(g, np.stack(
            [np.zeros_like(x), np.zeros_like(x), np.sin(x)]))
        w = sp.curl(u)
        # curl (0,0,sin x) = (0, -cos x, 0)... components: (d2 u3 - d3 u2, d3 u1 - d1 u3, ...)
        assert np.max(np.abs(w.samples[1] + np.cos(x))) < 1e-13
        assert np.max(np.abs(w.samples[0])) < 1e-13

    def test_nyquist_zeroed(self):
        g = sp.TorusGrid(2, 8)
        x, _ = g.coordinates()
        f = sp.ScalarField.from_samples(g, np.cos(4 * x))  # pure Nyquist cosine
        assert sp.lebesgue_norm(sp.partial(f, 0), np.inf) < 1e-13

    def test_strain_symmetry(self, grid, rng):
        u = sp.random_vector_field(grid, rng)
        d = sp.strain(u)
        assert np.max(np.abs(d - np.swapaxes(d, 0, 1))) < 1e-13


class TestInverseLaplacian:
    def test_eigenfunction(self, grid):
        f = sp.ScalarField.from_function(grid, lambda x, y: np.cos(x))
        g = sp.inv_laplacian_zero_mean(f)
        assert np.max(np.abs(g.samples + f.samples)) < 1e-13

    def test_constant_maps_to_zero(self, grid):
        c = sp.ScalarField.constant(grid, 3.7)
        assert sp.lebesgue_norm(sp.inv_laplacian_zero_mean(c), np.inf) == 0.0

    def test_two_sided_inverse(self, grid, rng):
        f = sp.random_field(grid, rng)
        g = sp.inv_laplacian_zero_mean(f)
        resid = sp.laplacian(g) - (f - sp.ScalarField.constant(grid, f.mean))
        assert sp.lebesgue_norm(resid, np.inf) < 1e-12
        assert abs(g.mean) < 1e-14


class TestRiesz:
    def test_diagonal_on_eigenmode(self, grid):
        f = sp.ScalarField.from_function(grid, lambda x, y: np.cos(x))
        r = sp.riesz_composite(0, 0, f)
        assert np.max(np.abs(r.samples - f.samples)) < 1e-13

    def test_off_diagonal_kills_axis_mode(self, grid):
        f = sp.ScalarField.from_function(grid, lambda x, y: np.cos(x))
        r = sp.riesz_composite(0, 1, f)
        assert sp.lebesgue_norm(r, np.inf) < 1e-13

    def test_trace_identity(self, grid, rng):
        f = sp.random_field(grid, rng)  # zero mean by construction
        total = sp.ScalarField.zero(grid)
        for i in range(2):
            total = total + sp.riesz_composite(i, i, f)
        assert sp.lebesgue_norm(total - f, np.inf) < 1e-12


class TestLeray:
    def test_gradient_field_has_zero_p_part(self, grid):
        phi = sp.ScalarField.from_function(grid, lambda x, y: np.sin(x + y))
        u = sp.gradient(phi)
        p, q = sp.leray_project(u)
        assert sp.lebesgue_norm(p, np.inf) < 1e-12

    def test_stream_function_field_is_fixed(self, grid):
        x, y = grid.coordinates()
        psi = sp.ScalarField.from_samples(grid, np.sin(x) * np.sin(y))
        u = sp.VectorField.from_components([-sp.partial(psi, 1), sp.partial(psi, 0)])
        p, q = sp.leray_project(u)
        assert sp.lebesgue_norm(p - u, np.inf) < 1e-12

    def test_projector_algebra(self, grid, rng):
        u = sp.random_vector_field(grid, rng)
        p, q = sp.leray_project(u)
        assert sp.lebesgue_norm(sp.divergence(p), np.inf) < 1e-12
        assert sp.lebesgue_norm(sp.curl(q), np.inf) < 1e-12
        assert sp.lebesgue_norm((p + q) - u, np.inf) < 1e-12
        pp, pq = sp.leray_project(p)
        assert sp.lebesgue_norm(pp - p, np.inf) < 1e-12
        assert sp.lebesgue_norm(pq, np.inf) < 1e-12
        qp, qq = sp.leray_project(q)
        assert sp.lebesgue_norm(qp, np.inf) < 1e-12
        assert sp.lebesgue_norm(qq - q, np.inf) < 1e-12


class TestMultipliers:
    def test_identity_symbol(self, grid, rng):
        one = sp.MultiplierSymbol(lambda *k: np.ones_like(k[0]), order=0, name="one")
        f = sp.random_field(grid, rng)
        assert sp.lebesgue_norm(sp.apply_multiplier(one, f) - f, np.inf) == 0.0

    def test_minus_laplacian_symbol(self, grid):
        sym = sp.MultiplierSymbol(lambda *k: sum(x ** 2 for x in k), order=2, name="|xi|^2")
        f = sp.ScalarField.from_function(grid, lambda x, y: np.cos(x))
        out = sp.apply_multiplier(sym, f)
        assert np.max(np.abs(out.samples - f.samples)) < 1e-13  # |xi|^2 = 1 on the mode

    def test_bessel_decay_across_modes(self, grid):
        sym = sp.MultiplierSymbol(lambda *k: (1.0 + sum(x ** 2 for x in k)) ** -0.5,
                                  order=-1, name="bessel")
        for k in (1, 2, 4, 8):
            f = sp.ScalarField.from_function(grid, lambda x, y, k=k: np.cos(k * x))
            out = sp.apply_multiplier(sym, f)
            ratio = sp.lebesgue_norm(out, 2) / sp.lebesgue_norm(f, 2)
            assert abs(ratio - (1 + k ** 2) ** -0.5) < 1e-12

    def test_non_finite_symbol_rejected(self, grid, rng):
        def singular(*k):
            with np.errstate(divide="ignore"):
                return 1.0 / sum(x ** 2 for x in k)
        bad = sp.MultiplierSymbol(singular, order=-2, name="singular")
        with pytest.raises(ValueError, match="non-finite"):
            sp.apply_multiplier(bad, sp.random_field(grid, rng))

    def test_bound_constant_finite(self, grid):
        sym = sp.MultiplierSymbol(lambda *k: sum(x ** 2 for x in k), order=2)
        assert sym.bound_constant(grid) <= 2.0


class TestNorms:
    def test_constant_lp(self, grid):
        one = sp.ScalarField.constant(grid, 1.0)
        for p in (1, 2, 4):
            assert abs(sp.lebesgue_norm(one, p) - (2 * np.pi) ** (2 / p)) < 1e-12

    def test_cos_linf(self, grid):
        f = sp.ScalarField.from_function(grid, lambda x, y: np.cos(x))
        assert abs(sp.lebesgue_norm(f, np.inf) - 1.0) < 1e-14

    def test_cos_l2_against_analytic_integral(self, grid):
        # int cos^2 over (0,2pi)^2 = 2*pi^2, so the L2 norm is pi*sqrt(2)
        f = sp.ScalarField.from_function(grid, lambda x, y: np.cos(x))
        assert abs(sp.lebesgue_norm(f, 2) - np.pi * math.sqrt(2.0)) < 1e-12

    def test_invalid_p(self, grid):
        f = sp.ScalarField.constant(grid, 1.0)
        with pytest.raises(ValueError):
            sp.lebesgue_norm(f, 0.5)

    def test_parseval(self, grid, rng):
        for _ in range(5):
            f = sp.random_field(grid, rng)
            assert abs(sp.lebesgue_norm(f, 2) - sp.coefficient_l2_norm(f)) < 1e-12

    def test_sobolev_norm_single_mode(self, grid):
        f = sp.ScalarField.from_function(grid, lambda x, y: np.cos(x))
        # W^{1,2}: (||f||^2 + ||df||^2)^{1/2} = sqrt(2) ||f||_2
        expected = math.sqrt(2.0) * sp.lebesgue_norm(f, 2)
        assert abs(sp.sobolev_norm(f, 1, 2) - expected) < 1e-12


class TestTranslationInvariance:
    @settings(max_examples=8, deadline=None)
    @given(shift=st.tuples(st.integers(0, 31), st.integers(0, 31)), seed=st.integers(0, 99))
    def test_operators_commute_with_translation(self, shift, seed):
        grid = sp.TorusGrid(2, 32)
        f = sp.random_field(grid, np.random.default_rng(seed))
        ops = [lambda x: sp.partial(x, 0), sp.laplacian, sp.inv_laplacian_zero_mean,
               lambda x: sp.riesz_composite(0, 1, x)]
        for op in ops:
            a = op(f.shifted(shift)).samples
            b = np.roll(op(f).samples, shift, axis=(0, 1))
            assert np.max(np.abs(a - b)) < 1e-11


class TestProducts:
    def test_dealiased_product_band(self, grid, rng):
        a = sp.random_field(grid, rng)
        b = sp.random_field(grid, rng)
        prod = sp.multiply(a, b)
        assert prod.max_frequency() <= grid.n // 3

    def test_product_linear_in_each_factor(self, grid, rng):
        a, b, c = (sp.random_field(grid, rng) for _ in range(3))
        lhs = sp.multiply(a + b, c)
        rhs = sp.multiply(a, c) + sp.multiply(b, c)
        assert sp.lebesgue_norm(lhs - rhs, np.inf) < 1e-12


class TestFourierEval:
    def test_matches_grid_samples(self, grid, rng):
        f = sp.random_field(grid, rng, max_wavenumber=5)
        x, y = grid.coordinates()
        pts = np.stack([x.ravel()[:50], y.ravel()[:50]], axis=1)
        vals = sp.fourier_eval(f, pts)
        assert np.max(np.abs(vals - f.samples.ravel()[:50])) < 1e-12

    def test_single_mode_off_grid(self, grid):
        f = sp.ScalarField.from_function(grid, lambda x, y: np.sin(x))
        pts = np.array([[0.123, 4.5], [2.2, 0.01]])
        vals = sp.fourier_eval(f, pts)
        assert np.max(np.abs(vals - np.sin(pts[:, 0]))) < 1e-12
