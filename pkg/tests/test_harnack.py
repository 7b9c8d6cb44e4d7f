import math

import numpy as np
import pytest
from scipy.integrate import quad

from deturck.flow import Trajectory
from deturck.geometry import metric_of_perturbation
from deturck.grid import GridSpec, SymTensorField
from deturck.harnack import (
    BackgroundTrajectory,
    HarnackConstants,
    SpaceTimeCurve,
    _l_length_gradient,
    _straight_l_batch,
    borderline_l1_check,
    evolve_heat_on_background,
    gaussian_blob,
    kernel_lower_bound_check,
    l_length,
    measure_c2,
    reduced_distance,
    rigidity_probe,
)


def synthetic_background(res=256, curved=False):
    g = GridSpec(2, res, 10.0)
    x1, x2 = g.coords()
    R = np.cos(2 * np.pi * x1 / 10.0)
    if curved:
        hv = np.zeros((3,) + g.shape)
        hv[0] = 0.1 * np.sin(2 * np.pi * x1 / 10.0)
        hv[1] = 0.05 * np.sin(2 * np.pi * (x1 + x2) / 10.0)
        hv[2] = -0.08 * np.cos(2 * np.pi * x2 / 10.0)
        gm = metric_of_perturbation(SymTensorField(g, hv))
    else:
        gm = metric_of_perturbation(SymTensorField.zero(g))
    return BackgroundTrajectory(
        grid=g,
        times=np.array([0.0, 2.0]),
        metrics=[gm, gm],
        scalar_fields=[R, R],
        curv_sup=np.zeros(2),
        t0=0.0,
        lam=1.0,
        h0_lp=1.0,
    )


class TestLLength:
    def test_coincident_points_flat(self):
        g = GridSpec(2, 32, 10.0)
        bg = BackgroundTrajectory.flat(g, 0.0, 1.0)
        x = np.array([5.0, 5.0])
        curve = SpaceTimeCurve.straight(x, 0.9, x, 0.1, nodes=16)
        assert l_length(curve, bg) == 0.0

    def test_quadrature_second_order(self):
        # straight line through a smooth curvature field: the sqrt weight is
        # integrated exactly, the rest converges at second order
        bg = synthetic_background()
        x = np.array([7.0, 5.0])
        y = np.array([3.0, 4.0])
        s, t = 0.2, 1.0
        v = (x - y) / (t - s)

        def integrand_sigma(sig):
            tp = t - sig**2
            gamma1 = y[0] + (tp - s) / (t - s) * (x[0] - y[0])
            return 2.0 * sig**2 * (np.cos(2 * np.pi * gamma1 / 10.0) + v @ v)

        ref, _ = quad(integrand_sigma, 0.0, math.sqrt(t - s), epsabs=1e-13, epsrel=1e-13)
        errs = []
        for nodes in (8, 16, 32):
            curve = SpaceTimeCurve.straight(x, t, y, s, nodes=nodes)
            errs.append(abs(l_length(curve, bg) - ref))
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
        assert all(o > 1.7 for o in orders), orders

    def test_node_outside_core_rejected(self):
        g = GridSpec(2, 32, 10.0)
        bg = BackgroundTrajectory.flat(g, 0.0, 1.0)
        x = np.array([9.9, 5.0])  # within L/8 of the cell boundary
        curve = SpaceTimeCurve.straight(x, 0.9, x, 0.1, nodes=16)
        with pytest.raises(ValueError, match="cell boundary"):
            l_length(curve, bg)

    def test_gradient_matches_directional_derivative(self):
        bg = synthetic_background(curved=True)
        x = np.array([7.0, 5.0])
        y = np.array([3.0, 4.0])
        s, t = 0.2, 1.0
        curve = SpaceTimeCurve.diffusion_profile(x, t, y, s, nodes=24)
        grads = _l_length_gradient(curve, bg, *bg.gradient_fields())
        rng = np.random.default_rng(5)
        for _ in range(3):
            d = rng.standard_normal(grads.shape)
            d /= np.linalg.norm(d)
            eps = 1e-6
            plus = curve.positions.copy()
            plus[1:-1] += eps * d
            minus = curve.positions.copy()
            minus[1:-1] -= eps * d
            fd = (
                l_length(SpaceTimeCurve(x=x, t=t, y=y, s=s, positions=plus), bg)
                - l_length(SpaceTimeCurve(x=x, t=t, y=y, s=s, positions=minus), bg)
            ) / (2 * eps)
            assert abs(fd - float(np.sum(grads * d))) < 5e-3 * max(abs(fd), 1e-12)


class TestReducedDistance:
    def setup_method(self):
        self.grid = GridSpec(2, 64, 10.0)
        self.bg = BackgroundTrajectory.flat(self.grid, 0.5, 1.5)

    def test_coincident_zero(self):
        x = np.array([5.0, 5.0])
        assert reduced_distance(x, 1.4, x, 0.6, self.bg, mode="optimize", nodes=64, max_iters=20) < 1e-10

    def test_flat_static_closed_forms(self):
        x = np.array([5.0, 5.0])
        y = np.array([6.2, 4.4])
        s, t = 0.6, 1.4
        z2 = float(np.sum((x - y) ** 2))
        l_straight = reduced_distance(x, t, y, s, self.bg, mode="straight_line", nodes=64)
        assert abs(l_straight - z2 / (3 * (t - s))) < 1e-10
        l_opt = reduced_distance(x, t, y, s, self.bg, mode="optimize", nodes=768, max_iters=80)
        assert abs(l_opt / (z2 / (4 * (t - s))) - 1.0) < 0.02

    def test_optimize_never_exceeds_straight(self):
        rng = np.random.default_rng(3)
        s, t = 0.6, 1.4
        for _ in range(5):
            x = np.array([5.0, 5.0]) + rng.uniform(-1, 1, size=2)
            y = np.array([5.0, 5.0]) + rng.uniform(-1, 1, size=2)
            ls = reduced_distance(x, t, y, s, self.bg, mode="straight_line")
            lo = reduced_distance(x, t, y, s, self.bg, mode="optimize", nodes=128, max_iters=40)
            assert lo <= ls + 1e-12

    def test_batch_straight_matches_closed_form(self):
        x = np.array([5.0, 5.0])
        ys = np.array([[6.2, 4.4], [6.0, 5.0], [4.0, 4.0]])
        s, t = 0.6, 1.4
        vals = _straight_l_batch(x, t, ys, s, self.bg, nodes=64)
        exact = np.sum((x[None, :] - ys) ** 2, axis=1) / (3 * (t - s))
        assert np.max(np.abs(vals - exact)) < 1e-10

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            reduced_distance(np.zeros(2), 1.0, np.zeros(2), 0.0, self.bg, mode="annealing")


class TestHarnackConstants:
    def test_relations_hold_by_construction(self):
        hc = HarnackConstants.from_run(c2=0.3, h0_lp=0.1, lam=0.5, t0=0.4, eps_run=0.01, n=2)
        assert np.isclose(hc.c3, 2 * 0.3 * 0.1 / (0.5 * 0.4**0.5))
        assert np.isclose(hc.c4, math.exp(-hc.c3 / 4))
        assert np.isclose(hc.c5, math.exp(hc.c3) * (1 + 2 * 0.01) / 3)

    def test_inconsistent_constants_rejected(self):
        with pytest.raises(ValueError, match="c4"):
            HarnackConstants(c2=0.1, c3=0.1, c4=0.5, c5=1.0, eps_factor=1.0)

    def test_flat_run_constants(self):
        g = GridSpec(2, 32, 8.0)
        bg = BackgroundTrajectory.flat(g, 0.5, 1.5)
        c2, _, _ = measure_c2(bg, h0_lp=1.0)
        assert c2 == 0.0
        hc = HarnackConstants.from_run(c2=c2, h0_lp=1.0, lam=1.0, t0=0.5, eps_run=0.0, n=2)
        assert hc.c4 == 1.0
        assert np.isclose(hc.c5, 1.0 / 3.0)


class TestKernelBounds:
    def test_flat_background_no_violations(self):
        g = GridSpec(2, 64, 12.0)
        bg = BackgroundTrajectory.flat(g, 0.0, 1.2)
        hc = HarnackConstants.from_run(c2=0.0, h0_lp=1.0, lam=1.0, t0=0.5, eps_run=0.0, n=2)
        y = np.array([6.0, 6.0])
        rng = np.random.default_rng(11)
        probes = []
        for _ in range(12):
            tau = rng.uniform(0.35, 0.9)
            ang = rng.uniform(0, 2 * np.pi)
            rad = np.sqrt(rng.uniform(1.0, 9.0) * tau)
            probes.append(
                {"y": y, "s": 0.1, "t": 0.1 + tau,
                 "x": y + rad * np.array([np.cos(ang), np.sin(ang)])}
            )
        rows, violations = kernel_lower_bound_check(bg, probes, hc)
        live = [r for r in rows if not r.skipped]
        assert violations == 0
        assert len(live) == 12
        assert all(r.margin > 0 for r in live)

    def test_invalid_probes_skipped_with_notice(self):
        g = GridSpec(2, 64, 12.0)
        bg = BackgroundTrajectory.flat(g, 0.0, 1.2)
        hc = HarnackConstants.from_run(c2=0.0, h0_lp=1.0, lam=1.0, t0=0.5, eps_run=0.0, n=2)
        y = np.array([6.0, 6.0])
        probes = [
            {"y": y, "s": 0.1, "t": 0.1 + 1e-4, "x": y},  # tau below grid scale
            {"y": y, "s": 0.1, "t": 0.5, "x": y + np.array([5.0, 0.0])},  # too far
        ]
        rows, violations = kernel_lower_bound_check(bg, probes, hc)
        assert violations == 0
        assert all(r.skipped for r in rows)
        assert any("grid resolution" in r.notice for r in rows)
        assert any("diffusion" in r.notice for r in rows)

    def test_flat_impulse_matches_heat_kernel(self):
        g = GridSpec(2, 64, 12.0)
        bg = BackgroundTrajectory.flat(g, 0.0, 1.0)
        y = np.array([6.0, 6.0])
        blob = gaussian_blob(g, y, 4 * g.spacing)
        out = evolve_heat_on_background(bg, blob, 0.0, [0.5])
        from deturck.grid import apply_heat_values

        exact = apply_heat_values(blob, g, 0.5)
        assert np.max(np.abs(out[0.5] - exact)) < 1e-10 * np.max(exact)


class TestBorderlineAndRigidity:
    def _flat_traj(self, n=3, res=16):
        g = GridSpec(n, res, 8.0)
        traj = Trajectory(g, [], [])
        for m in range(12):
            traj.append(0.05 * m, SymTensorField.zero(g))
        return traj

    def test_borderline_needs_three_dimensions(self):
        traj = self._flat_traj(n=2, res=16)
        with pytest.raises(ValueError, match="n >= 3"):
            borderline_l1_check(traj, [0.1], p=2.0, h0_lp=1.0)

    def test_borderline_wrong_p_rejected(self):
        traj = self._flat_traj()
        with pytest.raises(ValueError, match="n/\\(n-2\\)"):
            borderline_l1_check(traj, [0.1], p=2.0, h0_lp=1.0)

    def test_borderline_flat_below_bound(self):
        traj = self._flat_traj()
        out = borderline_l1_check(traj, [0.1, 0.3], p=3.0, h0_lp=0.5)
        for rec in out["records"]:
            assert rec["l1_R"] < 1e-10
        assert out["nonincreasing"]

    def test_rigidity_flat_verdict(self):
        g = GridSpec(2, 16, 8.0)
        bg = BackgroundTrajectory.flat(g, 0.2, 1.0, lam=1.0)
        traj = Trajectory(g, [], [])
        for m in range(12):
            traj.append(0.05 * m, SymTensorField.zero(g))
        out = rigidity_probe(bg, traj, p=1.0)
        assert out["verdict"] == "flat"
        assert out["crossing_time"] is None
