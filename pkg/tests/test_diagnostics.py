import numpy as np
import pytest

from deturck.diagnostics import (
    BarrierReport,
    CutoffFamily,
    DiagnosticsSeries,
    adm_mass,
    annulus_indicator,
    barrier_monitor,
    cutoff_profile,
    decay_fit,
    derivative_decay_check,
    gronwall_check,
    grad_l2_integral,
    interpolation_check,
    interpolation_constant,
    local_mass,
    lp_norm,
    smoothstep,
    spacetime_grad_l2,
    sup_norm,
    unit_ball_volume,
    xt_norm,
)
from deturck.flow import FlowConfig, FlowState, Trajectory, heat_convolve, run_flow
from deturck.grid import (
    CENTRAL4,
    SPECTRAL,
    GridSpec,
    ScalarField,
    SymTensorField,
    gradient_values,
    sym_index_pairs,
)

from conftest import random_bandlimited_scalar, random_bandlimited_sym


def gaussian_scalar(grid, a, sigma, center=None):
    r = grid.radius_from(grid.center() if center is None else center)
    return a * np.exp(-(r**2) / (2 * sigma**2))


def diag_bump(grid, a, sigma):
    vals = np.zeros((grid.sym_components,) + grid.shape)
    bump = gaussian_scalar(grid, a, sigma)
    for c, (i, j) in enumerate(sym_index_pairs(grid.n)):
        if i == j:
            vals[c] = bump
    return SymTensorField(grid, vals)


class TestNorms:
    def test_zero_field(self):
        g = GridSpec(2, 16, 4.0)
        z = ScalarField(g, np.zeros(g.shape))
        assert lp_norm(z, 2.0) == 0.0
        assert sup_norm(z) == 0.0

    def test_indicator_block(self):
        g = GridSpec(2, 32, 8.0)
        vals = np.zeros(g.shape)
        vals[4:12, 6:10] = 1.0  # 8 x 4 cells
        V = 8 * 4 * g.cell_volume
        f = ScalarField(g, vals)
        for p in (1.0, 2.0, 3.0):
            assert np.isclose(lp_norm(f, p), V ** (1 / p), rtol=1e-12)

    def test_gaussian_closed_form(self):
        # ||a exp(-r^2/(2 s^2))||_p = a (2 pi s^2 / p)^{n/(2p)}
        g = GridSpec(2, 128, 20.0)
        a, s = 0.7, 1.1
        f = ScalarField(g, gaussian_scalar(g, a, s))
        for p in (1.0, 2.0, 3.0):
            expected = a * (2 * np.pi * s**2 / p) ** (g.n / (2 * p))
            assert np.isclose(lp_norm(f, p), expected, rtol=1e-6)

    def test_p_below_one_rejected(self):
        g = GridSpec(2, 16, 4.0)
        with pytest.raises(ValueError):
            lp_norm(ScalarField(g, np.zeros(g.shape)), 0.5)

    def test_holder_relation_exact(self, rng):
        # ||f||_p^p <= ||f||_inf^{p-1} ||f||_1 holds exactly on every field
        g = GridSpec(2, 32, 5.0)
        for _ in range(25):
            f = ScalarField(g, random_bandlimited_scalar(g, 4, rng, amplitude=rng.uniform(0.1, 3.0)))
            p = rng.uniform(1.0, 4.0)
            lhs = lp_norm(f, p) ** p
            rhs = sup_norm(f) ** (p - 1) * lp_norm(f, 1.0)
            assert lhs <= rhs * (1 + 1e-12)


class TestDecayFit:
    def test_exact_power_law(self):
        t = np.geomspace(0.1, 10.0, 40)
        slope, r2 = decay_fit(t, t ** (-1.5))
        assert abs(slope + 1.5) < 1e-6
        assert r2 > 1 - 1e-12

    def test_constant_series(self):
        t = np.geomspace(0.1, 10.0, 40)
        slope, _ = decay_fit(t, np.ones_like(t))
        assert abs(slope) < 1e-12

    def test_rejections(self):
        with pytest.raises(ValueError, match="10 samples"):
            decay_fit(np.geomspace(0.1, 10, 5), np.ones(5))
        with pytest.raises(ValueError, match="decade"):
            decay_fit(np.geomspace(0.1, 0.5, 20), np.ones(20))
        t = np.geomspace(0.1, 10, 20)
        with pytest.raises(ValueError, match="positive"):
            decay_fit(t, np.zeros(20))


class TestGronwall:
    def test_constant_equality(self):
        t = np.linspace(0, 1, 50)
        ok, viol = gronwall_check(t, np.full(50, 2.0), np.full(50, 2.0), np.zeros(50))
        assert ok
        assert abs(viol) < 1e-12

    def test_exponential_saturation(self):
        t = np.linspace(0, 2, 400)
        ok, viol = gronwall_check(t, np.exp(t), np.ones_like(t), np.ones_like(t))
        assert ok  # trapezoid integrates the constant exactly
        assert abs(viol) < 1e-9

    def test_violation_detected(self):
        t = np.linspace(0, 1, 50)
        ok, viol = gronwall_check(t, np.full(50, 1.1), np.ones(50), np.zeros(50))
        assert not ok
        assert np.isclose(viol, 0.1, rtol=1e-12)

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError, match="common time grid"):
            gronwall_check(np.linspace(0, 1, 5), np.zeros(4), np.ones(5), np.zeros(5))


class TestLocalMass:
    def test_zero_field(self):
        g = GridSpec(2, 32, 8.0)
        assert local_mass(SymTensorField.zero(g), 2.0, 1.0) == 0.0

    def test_plateau_captures_full_mass(self):
        # support strictly inside the eta = 1 ball: A equals the full p-mass
        g = GridSpec(2, 64, 16.0)
        h = diag_bump(g, 0.1, 0.4)  # support radius ~ 1.8
        R = 2.5
        p = 2.0
        full_mass = float(np.sum((np.sqrt(2) * gaussian_scalar(g, 0.1, 0.4)) ** p) * g.cell_volume)
        a_val = local_mass(h, p, R)
        assert np.isclose(a_val, full_mass, rtol=1e-6)

    def test_explicit_centers_match_fft_path(self):
        g = GridSpec(2, 32, 8.0)
        h = diag_bump(g, 0.1, 0.5)
        centers = np.stack(g.coords(), axis=-1).reshape(-1, 2)
        best_direct = local_mass(h, 2.0, 1.0, centers=centers)
        best_fft = local_mass(h, 2.0, 1.0)
        assert np.isclose(best_direct, best_fft, rtol=1e-10)

    def test_radius_too_large_rejected(self):
        g = GridSpec(2, 32, 8.0)
        with pytest.raises(ValueError, match="too large"):
            local_mass(SymTensorField.zero(g), 2.0, 2.1)

    def test_cutoff_family_invariants(self):
        g = GridSpec(2, 32, 8.0)
        fam = CutoffFamily(g, R=1.0)
        eta = fam.eta(g.center())
        assert np.all(eta >= 0.0) and np.all(eta <= 1.0)
        r = g.radius_from(g.center())
        assert np.all(eta[r <= 1.0] == 1.0)
        assert np.all(eta[r > 2.0] == 0.0)
        assert len(fam.centers()) == 64  # stride 32//8 = 4 gives an 8x8 lattice

    def test_smoothstep_c2(self):
        u = np.linspace(-0.5, 1.5, 1001)
        s = smoothstep(u)
        assert s[0] == 0.0 and s[-1] == 1.0
        assert np.all(np.diff(s) >= -1e-15)


class TestBarrierMonitor:
    def _short_run(self, amplitude=0.02):
        g = GridSpec(2, 32, 16.0)
        h0 = diag_bump(g, amplitude, 0.9)
        cfg = FlowConfig(scheme="imex", dt=0.005, t_end=0.1)
        return run_flow(h0, cfg)

    def test_zero_trajectory_all_zero(self):
        g = GridSpec(2, 16, 8.0)
        traj = Trajectory(g, [], [])
        for m in range(5):
            traj.append(0.01 * m, SymTensorField.zero(g))
        rep = barrier_monitor(traj, 2.0, 1.0)
        assert np.all(rep.dmass_dt == 0.0)
        assert np.all(rep.annulus == 0.0)
        assert rep.fitted_c1 == 0.0
        assert rep.energy_residual == 0.0

    def test_energy_identity_balances(self):
        traj = self._short_run()
        rep = barrier_monitor(traj, 2.0, 3.0)
        assert rep.energy_residual < 1e-3

    def test_fitted_constants_finite(self):
        traj = self._short_run()
        rep = barrier_monitor(traj, 2.0, 3.0)
        assert rep.fitted_c1 is not None and np.isfinite(rep.fitted_c1)
        assert rep.fitted_c3 >= 0.0
        rep1 = barrier_monitor(traj, 1.5, 3.0)
        assert rep1.fitted_c2 is not None and np.isfinite(rep1.fitted_c2)


class TestSpacetimeGradient:
    def test_zero_trajectory(self):
        g = GridSpec(2, 16, 8.0)
        traj = Trajectory(g, [], [])
        for m in range(4):
            traj.append(0.01 * m, SymTensorField.zero(g))
        assert spacetime_grad_l2(traj) == 0.0

    def test_heat_trajectory_matches_parseval(self):
        # For the pure heat semigroup the space-time gradient integral equals
        # (||h0||_2^2 - ||h_T||_2^2) / 2 exactly.
        g = GridSpec(2, 64, 16.0)
        h0 = diag_bump(g, 1e-3, 1.0)
        times = np.linspace(0.0, 2.0, 161)
        traj = Trajectory(g, [], [])
        traj.append(0.0, h0)
        for t in times[1:]:
            traj.append(t, heat_convolve(h0, t))
        integral = spacetime_grad_l2(traj)
        l2_0 = lp_norm(h0, 2.0) ** 2
        l2_T = lp_norm(traj.fields[-1], 2.0) ** 2
        expected = 0.5 * (l2_0 - l2_T)
        assert np.isclose(integral, expected, rtol=2e-3)


class TestInterpolation:
    def test_constant_value(self):
        # C(2,2) = (3*4 / (pi * 2))^{1/4} = (6/pi)^{1/4}
        assert np.isclose(interpolation_constant(2, 2.0), (6.0 / np.pi) ** 0.25, rtol=1e-12)
        assert np.isclose(unit_ball_volume(3), 4.0 * np.pi / 3.0, rtol=1e-12)

    def test_zero_field_holds(self):
        g = GridSpec(2, 32, 8.0)
        out = interpolation_check(ScalarField(g, np.zeros(g.shape)), 2.0)
        assert out["holds"]

    def test_randomized_suite_no_violations(self, rng):
        g = GridSpec(2, 32, 8.0)
        envelope = smoothstep(2.0 - g.radius_from(g.center()) / 1.5) ** 2
        for _ in range(50):
            raw = random_bandlimited_scalar(g, 4, rng, amplitude=rng.uniform(0.1, 2.0))
            f = ScalarField(g, raw * envelope)
            for p in (1.0, 2.0, 3.0):
                out = interpolation_check(f, p)
                assert out["holds"], (p, out)

    def test_boundary_support_rejected(self):
        g = GridSpec(2, 32, 8.0)
        with pytest.raises(ValueError, match="boundary"):
            interpolation_check(ScalarField(g, np.ones(g.shape)), 2.0)


class TestXtNorm:
    def _const_traj(self, value=0.03):
        g = GridSpec(2, 32, 8.0)
        vals = np.zeros((3,) + g.shape)
        vals[0] = value
        traj = Trajectory(g, [], [])
        for m in range(9):
            traj.append(0.05 * m, SymTensorField(g, vals))
        return traj, value

    def test_zero_trajectory(self):
        g = GridSpec(2, 32, 8.0)
        traj = Trajectory(g, [], [])
        for m in range(9):
            traj.append(0.05 * m, SymTensorField.zero(g))
        out = xt_norm(traj, radii=[0.5])
        assert out["value"] == 0.0

    def test_constant_field_reduces_to_sup(self):
        traj, value = self._const_traj()
        out = xt_norm(traj, radii=[0.5])
        assert np.isclose(out["value"], value, atol=1e-12)

    def test_insufficient_slices_skipped(self):
        traj, _ = self._const_traj()
        out = xt_norm(traj, radii=[0.5, 0.05])
        assert any(r == 0.05 for r, _ in out["skipped"])
        with pytest.raises(ValueError, match="no usable radius"):
            xt_norm(traj, radii=[0.05])


class TestAdmMass:
    def test_zero_field(self):
        g = GridSpec(3, 16, 8.0)
        masses = adm_mass(SymTensorField.zero(g), [1.0, 2.0])
        assert np.max(np.abs(masses)) < 1e-14

    def test_outside_compact_support(self):
        g = GridSpec(2, 64, 16.0)
        h = diag_bump(g, 0.05, 0.5)  # support radius ~ 2.3
        masses = adm_mass(h, [5.0])
        assert abs(masses[0]) < 1e-8

    def test_conformal_3d_closed_form(self):
        # g = u^4 delta, u = 1 + m (r^2+a^2)^{-1/2}:
        # m(r) = -2 (u^4)'(r) * 4 pi r^2 = 32 pi m u^3 r^3 (r^2+a^2)^{-3/2}
        g = GridSpec(3, 64, 16.0)
        m, a = 0.05, 0.6
        r = g.radius_from(g.center())
        u = 1.0 + m / np.sqrt(r**2 + a**2)
        hvals = np.zeros((6,) + g.shape)
        for c, (i, j) in enumerate(sym_index_pairs(3)):
            if i == j:
                hvals[c] = u**4 - 1.0
        h = SymTensorField(g, hvals)
        radii = np.array([2.0, 3.0])
        masses = adm_mass(h, radii, backend=CENTRAL4)
        ur = 1.0 + m / np.sqrt(radii**2 + a**2)
        expected = 32 * np.pi * m * ur**3 * radii**3 * (radii**2 + a**2) ** (-1.5)
        assert np.max(np.abs(masses / expected - 1.0)) < 1e-2

    def test_boundary_radius_rejected(self):
        g = GridSpec(2, 32, 8.0)
        with pytest.raises(ValueError, match="4 spacings"):
            adm_mass(SymTensorField.zero(g), [3.9])


class TestDerivativeDecay:
    def test_heat_gradient_exponent(self):
        # pure heat evolution of an L1 bump: sup|grad h| ~ t^{-(n+1)/2}
        g = GridSpec(2, 64, 24.0)
        sigma = 0.45
        h0 = diag_bump(g, 1e-3, sigma)
        t0, t1 = 4 * sigma**2, 40 * sigma**2
        times = np.geomspace(t0, t1, 24)
        traj = Trajectory(g, [], [])
        traj.append(0.0, h0)
        for t in times:
            traj.append(t, heat_convolve(h0, t))
        out = derivative_decay_check(traj, p=1.0, t_window=(t0, t1))
        expected = -(g.n + 1) / 2.0
        assert out["grad"] is not None
        assert abs(out["grad"]["exponent"] - expected) < 0.15 * abs(expected)

    def test_constant_trajectory_not_applicable(self):
        g = GridSpec(2, 16, 8.0)
        traj = Trajectory(g, [], [])
        for m in range(12):
            traj.append(0.1 * (m + 1), SymTensorField.zero(g))
        out = derivative_decay_check(traj, p=1.0)
        assert out["grad"] is None and out["grad2"] is None and out["dt"] is None


class TestDiagnosticsSeries:
    def test_csv_schema_and_roundtrip(self, tmp_path):
        g = GridSpec(2, 32, 16.0)
        h0 = diag_bump(g, 0.01, 0.8)
        series = DiagnosticsSeries(p=1.0, local_mass_radii=(2.0,), curvature=True)
        cfg = FlowConfig(scheme="imex", dt=0.01, t_end=0.05)
        run_flow(h0, cfg, recorder=series.record)
        path = tmp_path / "series.csv"
        series.to_csv(path)
        text = path.read_text().splitlines()
        assert text[0] == "t,sup_h,l1_h,l2_h,lp_h,min_R,max_R,l1_R,grad_l2_cum,A_R1"
        assert len(text) == len(series.rows) + 1
        # shortest round-trip floats parse back exactly
        first = text[1].split(",")
        assert float(first[1]) == series.rows[0]["sup_h"]

    def test_grad_cumulative_nondecreasing(self):
        g = GridSpec(2, 32, 16.0)
        h0 = diag_bump(g, 0.01, 0.8)
        series = DiagnosticsSeries(p=2.0)
        cfg = FlowConfig(scheme="imex", dt=0.01, t_end=0.08)
        run_flow(h0, cfg, recorder=series.record)
        cum = series.series("grad_l2_cum")
        assert np.all(np.diff(cum) >= -1e-15)
        times = series.series("t")
        assert np.all(np.diff(times) > 0)
