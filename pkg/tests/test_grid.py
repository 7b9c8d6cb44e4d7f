import numpy as np
import pytest

from deturck.grid import (
    CENTRAL4,
    SPECTRAL,
    DerivativeBackend,
    GridSpec,
    ScalarField,
    SymTensorField,
    VectorField,
    divergence_values,
    gradient,
    gradient_values,
    interpolate_periodic,
    laplacian,
    laplacian_values,
    pointwise_norm,
    sym_component_index,
    sym_index_pairs,
)

from conftest import random_bandlimited_scalar


class TestGridSpec:
    def test_spacing_exact(self):
        g = GridSpec(2, 64, 10.0)
        assert g.spacing == 10.0 / 64

    @pytest.mark.parametrize("res", [7, 12, 100, 4])
    def test_rejects_non_power_of_two(self, res):
        with pytest.raises(ValueError):
            GridSpec(2, res, 1.0)

    @pytest.mark.parametrize("n", [1, 5])
    def test_rejects_bad_dimension(self, n):
        with pytest.raises(ValueError):
            GridSpec(n, 16, 1.0)

    def test_sym_index_roundtrip(self):
        for n in (2, 3, 4):
            pairs = sym_index_pairs(n)
            assert len(pairs) == n * (n + 1) // 2
            for c, (i, j) in enumerate(pairs):
                assert sym_component_index(n, i, j) == c
                assert sym_component_index(n, j, i) == c


class TestFields:
    def test_scalar_rejects_nan(self):
        g = GridSpec(2, 8, 1.0)
        v = np.zeros(g.shape)
        v[3, 5] = np.nan
        with pytest.raises(ValueError, match=r"\(3, 5\)"):
            ScalarField(g, v)

    def test_sym_full_roundtrip(self, rng):
        g = GridSpec(3, 8, 1.0)
        h = SymTensorField(g, rng.standard_normal((6,) + g.shape))
        full = h.to_full()
        assert np.array_equal(full[..., 0, 1], full[..., 1, 0])
        back = SymTensorField.from_full(g, full)
        assert np.array_equal(back.values, h.values)

    def test_pointwise_norm_zero(self):
        g = GridSpec(2, 8, 1.0)
        h = SymTensorField.zero(g)
        assert np.all(pointwise_norm(h, 0.0).values == 0.0)

    def test_pointwise_norm_delta(self):
        g = GridSpec(2, 8, 1.0)
        h = SymTensorField.zero(g)
        assert np.allclose(pointwise_norm(h, 4.0).values, 2.0)

    def test_pointwise_norm_diag_345(self):
        # h = diag(3, 4) has Euclidean entry norm 5
        g = GridSpec(2, 8, 1.0)
        vals = np.zeros((3,) + g.shape)
        vals[0] = 3.0
        vals[2] = 4.0
        h = SymTensorField(g, vals)
        assert np.allclose(pointwise_norm(h, 0.0).values, 5.0)

    def test_pointwise_norm_counts_offdiagonal_twice(self):
        g = GridSpec(2, 8, 1.0)
        vals = np.zeros((3,) + g.shape)
        vals[1] = 1.0  # h_01 = h_10 = 1
        h = SymTensorField(g, vals)
        assert np.allclose(pointwise_norm(h, 0.0).values, np.sqrt(2.0))

    def test_negative_delta_rejected(self):
        g = GridSpec(2, 8, 1.0)
        with pytest.raises(ValueError):
            pointwise_norm(SymTensorField.zero(g), -1.0)


class TestDerivatives:
    @pytest.mark.parametrize("backend", [SPECTRAL, CENTRAL4])
    def test_constant_has_zero_gradient(self, backend):
        g = GridSpec(2, 16, 5.0)
        f = ScalarField(g, np.full(g.shape, 3.7))
        assert np.max(np.abs(gradient(f, backend))) < 1e-13

    def test_single_mode_exact_spectral(self):
        g = GridSpec(2, 32, 4.0)
        x = g.coords()
        f = ScalarField(g, np.sin(2 * np.pi * x[0] / g.box_length))
        df = gradient(f, SPECTRAL)
        exact = (2 * np.pi / g.box_length) * np.cos(2 * np.pi * x[0] / g.box_length)
        assert np.max(np.abs(df[0] - exact)) < 1e-12 * np.max(np.abs(exact))
        assert np.max(np.abs(df[1])) < 1e-13

    def test_laplacian_eigenfunction(self):
        g = GridSpec(2, 32, 4.0)
        x = g.coords()
        s = np.sin(2 * np.pi * x[0] / g.box_length)
        lap = laplacian(ScalarField(g, s), SPECTRAL)
        assert np.allclose(lap.values, -((2 * np.pi / g.box_length) ** 2) * s, atol=1e-12)

    def test_laplacian_constant_zero(self):
        g = GridSpec(3, 8, 1.0)
        lap = laplacian(ScalarField(g, np.full(g.shape, 2.0)), CENTRAL4)
        assert np.max(np.abs(lap.values)) < 1e-12

    def test_gaussian_laplacian_matches_closed_form(self):
        # Oracle: for f = exp(-r^2 / (2 s^2)), Laplacian f = f * (r^2/s^4 - n/s^2).
        # Tails at L/2 are below double precision so the periodic grid sees
        # the free-space function.
        g = GridSpec(2, 128, 10.0)
        s = 0.5
        r = g.radius_from(g.center())
        f = np.exp(-(r**2) / (2 * s**2))
        lap = laplacian_values(f, g, SPECTRAL)
        exact = f * (r**2 / s**4 - g.n / s**2)
        rel = np.max(np.abs(lap - exact)) / np.max(np.abs(exact))
        assert rel < 1e-6

    def test_spectral_vs_central4_order4(self, rng):
        # Richardson over 3 resolutions: central4 converges to the spectral
        # gradient at 4th order.
        errs = []
        for res in (32, 64, 128):
            g = GridSpec(2, res, 6.0)
            f = random_bandlimited_scalar(g, 3, np.random.default_rng(7))
            d_sp = gradient_values(f, g, SPECTRAL)
            d_c4 = gradient_values(f, g, CENTRAL4)
            errs.append(np.max(np.abs(d_sp - d_c4)))
        r1 = errs[0] / errs[1]
        r2 = errs[1] / errs[2]
        assert 14 <= r1 <= 18
        assert 14 <= r2 <= 18

    def test_gradient_then_divergence_equals_laplacian(self, rng):
        g = GridSpec(2, 32, 6.0)
        f = random_bandlimited_scalar(g, 5, rng)
        grad = gradient_values(f, g, SPECTRAL)
        div = divergence_values(grad, g, SPECTRAL)
        lap = laplacian_values(f, g, SPECTRAL)
        assert np.max(np.abs(div - lap)) < 1e-11 * max(1.0, np.max(np.abs(lap)))

    def test_gradient_then_divergence_central4_consistent(self, rng):
        # Composition of first-derivative stencils differs from the second
        # derivative stencil at the same 4th order it converges at.
        errs = []
        for res in (32, 64):
            g = GridSpec(2, res, 6.0)
            f = random_bandlimited_scalar(g, 3, np.random.default_rng(11))
            div = divergence_values(gradient_values(f, g, CENTRAL4), g, CENTRAL4)
            lap = laplacian_values(f, g, CENTRAL4)
            errs.append(np.max(np.abs(div - lap)))
        assert errs[1] < errs[0] / 10

    def test_operations_pure(self, rng):
        g = GridSpec(2, 16, 1.0)
        f = random_bandlimited_scalar(g, 3, rng)
        copy = f.copy()
        gradient_values(f, g, SPECTRAL)
        laplacian_values(f, g, CENTRAL4)
        assert np.array_equal(f, copy)

    def test_rejects_nonfinite_input(self):
        g = GridSpec(2, 8, 1.0)
        v = np.zeros(g.shape)
        v[0, 0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            gradient_values(v, g, SPECTRAL)

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError):
            DerivativeBackend("upwind")


class TestInterpolation:
    def test_exact_at_grid_points(self, rng):
        g = GridSpec(2, 16, 2.0)
        f = random_bandlimited_scalar(g, 4, rng)
        pts = np.stack(g.coords(), axis=-1).reshape(-1, 2)[:: 7]
        vals = interpolate_periodic(f, g, pts)
        assert np.allclose(vals, f.reshape(-1)[:: 7], atol=1e-13)

    def test_linear_between_points(self):
        g = GridSpec(2, 16, 16.0)  # spacing 1
        x = g.coords()
        f = np.sin(2 * np.pi * x[0] / 16.0)
        p = np.array([[3.5, 2.0]])
        v = interpolate_periodic(f, g, p)
        expected = 0.5 * (np.sin(2 * np.pi * 3 / 16) + np.sin(2 * np.pi * 4 / 16))
        assert abs(v[0] - expected) < 1e-13

    def test_periodic_wrap(self):
        g = GridSpec(2, 8, 8.0)
        f = np.arange(64.0).reshape(8, 8)
        v = interpolate_periodic(f, g, np.array([[7.5, 0.0]]))
        expected = 0.5 * (f[7, 0] + f[0, 0])
        assert abs(v[0] - expected) < 1e-13
