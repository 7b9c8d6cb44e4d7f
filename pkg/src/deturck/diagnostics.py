"""Monitored quantities and inequality checks for flow runs.

Covers the integral norms and their expected behavior: Lp norms and sup-norm
decay fits, the local windowed masses A(t, R) with their comparison-function
(Gronwall) bound, the per-step local integral estimates, the space-time
gradient bound, the sup-norm interpolation inequality with its explicit
constant, the parabolic window norm combining sup-in-time with scale-invariant
local gradient integrals, and the large-radius flux integral measuring the
deviation from the flat metric.

Windowed integrals over all centers at once are evaluated as FFT correlations
with the cutoff profile, so suprema over centers cover the full lattice at
O(N log N) cost.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryCache, curvature_invariants, metric_of_perturbation, q0 as geo_q0, q1 as geo_q1, rdt_rhs
from .grid import (
    DerivativeBackend,
    GridSpec,
    ScalarField,
    SPECTRAL,
    SymTensorField,
    _irfftn,
    _rfftn,
    gradient_values,
    interpolate_periodic,
    sym_component_index,
    sym_index_pairs,
    sym_weights,
    tensor_abs,
)

# ---------------------------------------------------------------------------
# Elementary norms


def lp_norm(field_obj, p: float) -> float:
    """(integral |f|^p dx)^{1/p} with |.| the pointwise tensor norm."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    grid = field_obj.grid
    return float(np.sum(tensor_abs(field_obj) ** p) * grid.cell_volume) ** (1.0 / p)


def sup_norm(field_obj) -> float:
    return float(np.max(tensor_abs(field_obj)))


def grad_l2_integral(h: SymTensorField, backend: DerivativeBackend = SPECTRAL) -> float:
    """integral |grad h|^2 dx with the full-matrix tensor norm."""
    grid = h.grid
    grad = gradient_values(h.values, grid, backend)
    w = sym_weights(grid.n).reshape((1, -1) + (1,) * grid.n)
    return float(np.sum(w * grad**2) * grid.cell_volume)


def grad_abs_values(h: SymTensorField, backend: DerivativeBackend = SPECTRAL) -> np.ndarray:
    """Pointwise |grad h| field."""
    grid = h.grid
    grad = gradient_values(h.values, grid, backend)
    w = sym_weights(grid.n).reshape((1, -1) + (1,) * grid.n)
    return np.sqrt(np.sum(w * grad**2, axis=(0, 1)))


# ---------------------------------------------------------------------------
# Cutoff profiles


def smoothstep(u: np.ndarray) -> np.ndarray:
    """C^2 quintic ramp: 0 for u <= 0, 1 for u >= 1."""
    v = np.clip(u, 0.0, 1.0)
    return v**3 * (10.0 - 15.0 * v + 6.0 * v**2)


def cutoff_profile(grid: GridSpec, R: float, center=None) -> np.ndarray:
    """eta identically 1 on the R-ball, supported in the 2R-ball.

    eta = s(2 - r/R)^2 with s the quintic smoothstep, so sqrt(eta) = s is C^2
    and |grad sqrt(eta)| stays bounded.
    """
    if center is None:
        center = grid.center()
    r = grid.radius_from(center)
    return smoothstep(2.0 - r / R) ** 2


def annulus_indicator(grid: GridSpec, R: float, center=None) -> np.ndarray:
    if center is None:
        center = grid.center()
    r = grid.radius_from(center)
    return ((r > R) & (r <= 2.0 * R)).astype(float)


@dataclass(frozen=True)
class CutoffFamily:
    """Rescaled cutoffs eta_{R,x} on a sublattice of centers."""

    grid: GridSpec
    R: float
    stride: int = 0  # 0: derive resolution // 8

    def __post_init__(self):
        if not 0 < 2.0 * self.R < self.grid.box_length / 2.0:
            raise ValueError(
                f"cutoff radius {self.R} too large: need 2R < box_length/2 = "
                f"{self.grid.box_length / 2}"
            )

    def centers(self) -> np.ndarray:
        stride = self.stride or max(1, self.grid.resolution // 8)
        axis = self.grid.axis_coords()[::stride]
        mesh = np.meshgrid(*([axis] * self.grid.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def eta(self, center) -> np.ndarray:
        return cutoff_profile(self.grid, self.R, center)


# ---------------------------------------------------------------------------
# Fits and comparison-function checks


def decay_fit(times, values, t_window=None):
    """Least-squares slope of log(values) against log(t) inside the window.

    Returns (exponent, r_squared).  Requires at least 10 samples spanning at
    least one decade of t, and strictly positive values.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if t_window is not None:
        lo, hi = t_window
        mask = (times >= lo) & (times <= hi)
        times, values = times[mask], values[mask]
    mask = times > 0
    times, values = times[mask], values[mask]
    if times.size < 10:
        raise ValueError(f"decay fit needs >= 10 samples, got {times.size}")
    if times.max() / times.min() < 10.0 - 1e-9:
        raise ValueError(
            f"decay fit window spans {times.max() / times.min():.2f}x, need a decade"
        )
    if np.any(values <= 0):
        raise ValueError("decay fit requires positive values")
    x = np.log(times)
    y = np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def gronwall_check(times, u, n_fn, f, rel_tol: float = 1e-9):
    """Verify u(t) <= n(t) exp(integral_0^t f ds) on a shared time grid.

    Returns (holds, max_relative_violation); the integral is trapezoidal.
    """
    times = np.asarray(times, dtype=float)
    u = np.asarray(u, dtype=float)
    n_fn = np.asarray(n_fn, dtype=float)
    f = np.asarray(f, dtype=float)
    if not (times.shape == u.shape == n_fn.shape == f.shape):
        raise ValueError("gronwall check needs series on a common time grid")
    if np.any(n_fn <= 0) or np.any(np.diff(n_fn) < -1e-12 * np.max(n_fn)):
        raise ValueError("comparison function must be positive and nondecreasing")
    if np.any(u < 0) or np.any(f < 0):
        raise ValueError("u and f must be nonnegative")
    integral = np.concatenate(
        [[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(times))]
    )
    bound = n_fn * np.exp(integral)
    violation = float(np.max((u - bound) / bound))
    return violation <= rel_tol, violation


# ---------------------------------------------------------------------------
# Local windowed masses


def _correlate_with_profile(u: np.ndarray, profile: np.ndarray, grid: GridSpec) -> np.ndarray:
    """(profile * u)(x) over all centers x at once; profile is radial/even."""
    spec = _rfftn(u, grid.n) * _rfftn(profile, grid.n)
    return _irfftn(spec, grid.shape, grid.n) * grid.cell_volume


def local_mass(h: SymTensorField, p: float, R: float, centers=None) -> float:
    """A(t, R): the largest windowed mass integral eta_{R,x} |h|^p over centers.

    With centers=None the supremum runs over every grid point (evaluated as an
    FFT correlation); an explicit center list is integrated directly.
    """
    grid = h.grid
    if not 2.0 * R < grid.box_length / 2.0:
        raise ValueError(
            f"cutoff radius {R} too large for the box: need 2R < box_length/2"
        )
    u = tensor_abs(h) ** p
    if centers is None:
        profile = cutoff_profile(grid, R, center=np.zeros(grid.n))
        return float(np.max(_correlate_with_profile(u, profile, grid)))
    best = 0.0
    for c in np.atleast_2d(np.asarray(centers, dtype=float)):
        best = max(best, float(np.sum(cutoff_profile(grid, R, c) * u) * grid.cell_volume))
    return best


# ---------------------------------------------------------------------------
# Per-step local integral estimates along a trajectory


@dataclass
class BarrierReport:
    """Two-sided data for the local integral estimates along one run."""

    times: np.ndarray          # interior slice times where d/dt is available
    dmass_dt: np.ndarray       # d/dt integral eta |h|^p
    annulus: np.ndarray        # integral over the 2R\R annulus of |h|^p
    eta_grad2: np.ndarray      # integral eta |grad h|^2
    fitted_c1: float | None    # smallest C with d/dt <= C (1+p)/R^2 * annulus (p >= 2)
    fitted_c2: float | None    # smallest C with d/dt <= C/R^2 annulus + C eta|grad h|^2 (p <= 2)
    fitted_c3: float           # smallest C in the p = 2 energy estimate
    energy_residual: float     # worst relative defect of the p = 2 energy identity
    eps_observed: float        # sup |h| along the run (the smallness parameter)


def _energy_rhs(h: SymTensorField, eta: np.ndarray, backend: DerivativeBackend) -> float:
    """Exact p = 2 energy balance: integral of
    -<grad(eta h), grad h> + eta <h, Q0> - <grad(eta h), Q1>."""
    grid = h.grid
    cache = GeometryCache(h, backend)
    w = sym_weights(grid.n).reshape((-1,) + (1,) * grid.n)
    grad_h = gradient_values(h.values, grid, backend)
    eta_h = SymTensorField(grid, eta * h.values)
    grad_eta_h = gradient_values(eta_h.values, grid, backend)
    term1 = -np.sum(w[None] * grad_eta_h * grad_h)
    q0_vals = geo_q0(cache).values
    term2 = np.sum(eta * w * h.values * q0_vals)
    q1_vals = geo_q1(cache)
    term3 = -np.sum(w[None] * grad_eta_h * q1_vals)
    return float((term1 + term2 + term3) * grid.cell_volume)


def barrier_monitor(
    traj,
    p: float,
    R: float,
    backend: DerivativeBackend = SPECTRAL,
    center=None,
) -> BarrierReport:
    """Evaluate the local mass estimates stepwise along a stored trajectory.

    Time derivatives are centered differences on the stored slices, so the
    slices must be reasonably dense.  Reports the smallest constants that make
    each inequality hold over the whole run, plus the worst relative defect of
    the p = 2 energy identity (which should sit at quadrature error).
    """
    grid = traj.grid
    if not 2.0 * R < grid.box_length / 2.0:
        raise ValueError(f"cutoff radius {R} too large for the box")
    if center is None:
        center = grid.center()
    eta = cutoff_profile(grid, R, center)
    ann = annulus_indicator(grid, R, center)
    times = traj.times_array()
    vol = grid.cell_volume

    mass_p = []
    mass_2 = []
    ann_p = []
    ann_2 = []
    grad2 = []
    energy_rhs = []
    eps_obs = 0.0
    for h in traj.fields:
        habs = tensor_abs(h)
        eps_obs = max(eps_obs, float(habs.max()))
        mass_p.append(float(np.sum(eta * habs**p) * vol))
        mass_2.append(float(np.sum(eta * habs**2) * vol))
        ann_p.append(float(np.sum(ann * habs**p) * vol))
        ann_2.append(float(np.sum(ann * habs**2) * vol))
        gvals = grad_abs_values(h, backend)
        grad2.append(float(np.sum(eta * gvals**2) * vol))
        energy_rhs.append(_energy_rhs(h, eta, backend))

    mass_p = np.asarray(mass_p)
    mass_2 = np.asarray(mass_2)
    d_mass_p = (mass_p[2:] - mass_p[:-2]) / (times[2:] - times[:-2])
    d_mass_2 = (mass_2[2:] - mass_2[:-2]) / (times[2:] - times[:-2])
    inner = slice(1, -1)
    ann_p_i = np.asarray(ann_p)[inner]
    ann_2_i = np.asarray(ann_2)[inner]
    grad2_i = np.asarray(grad2)[inner]
    rhs_i = np.asarray(energy_rhs)[inner]

    fitted_c1 = None
    if p >= 2:
        pos = d_mass_p > 0
        fitted_c1 = 0.0
        if np.any(pos):
            fitted_c1 = float(
                np.max(d_mass_p[pos] * R**2 / ((1.0 + p) * np.maximum(ann_p_i[pos], 1e-300)))
            )
    fitted_c2 = None
    if p <= 2:
        pos = d_mass_p > 0
        fitted_c2 = 0.0
        if np.any(pos):
            denom = ann_p_i[pos] / R**2 + grad2_i[pos]
            fitted_c2 = float(np.max(d_mass_p[pos] / np.maximum(denom, 1e-300)))

    # p = 2 differential estimate: (1/2) d/dt <= (-1/2 + C eps) G + C/R^2 ann
    lhs = 0.5 * d_mass_2 + 0.5 * grad2_i
    denom = eps_obs * grad2_i + ann_2_i / R**2
    fitted_c3 = float(np.max(np.maximum(lhs, 0.0) / np.maximum(denom, 1e-300)))

    scale = max(np.max(np.abs(rhs_i)), np.max(grad2_i), 1e-300)
    energy_residual = float(np.max(np.abs(0.5 * d_mass_2 - rhs_i)) / scale)

    return BarrierReport(
        times=times[inner],
        dmass_dt=d_mass_p,
        annulus=ann_p_i,
        eta_grad2=grad2_i,
        fitted_c1=fitted_c1,
        fitted_c2=fitted_c2,
        fitted_c3=fitted_c3,
        energy_residual=energy_residual,
        eps_observed=eps_obs,
    )


def spacetime_grad_l2(traj, backend: DerivativeBackend = SPECTRAL) -> float:
    """Trapezoidal time integral of integral |grad h|^2 dx along the run."""
    times = traj.times_array()
    vals = np.asarray([grad_l2_integral(h, backend) for h in traj.fields])
    return float(np.trapezoid(vals, times))


# ---------------------------------------------------------------------------
# Interpolation inequality


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def interpolation_constant(n: int, p: float) -> float:
    """Explicit constant ((p+1)...(p+n) / (omega_n n!))^{1/(n+p)}."""
    num = 1.0
    for k in range(1, n + 1):
        num *= p + k
    return (num / (unit_ball_volume(n) * math.factorial(n))) ** (1.0 / (n + p))


def interpolation_check(
    f: ScalarField,
    p: float,
    backend: DerivativeBackend = SPECTRAL,
    support_tol: float = 1e-8,
) -> dict:
    """Check sup|f| <= C(n,p) ||f||_p^{p/(n+p)} ||grad f||_inf^{n/(n+p)}.

    The inequality is a whole-space statement, so fields whose support reaches
    the box boundary are rejected.
    """
    grid = f.grid
    sup = float(np.max(np.abs(f.values)))
    if sup > 0:
        r = grid.radius_from(grid.center())
        shell = r >= grid.box_length / 2.0 - 2.0 * grid.spacing
        if float(np.max(np.abs(f.values)[shell])) > support_tol * sup:
            raise ValueError("field support touches the box boundary")
    grad = gradient_values(f.values, grid, backend)
    grad_sup = float(np.max(np.sqrt(np.sum(grad**2, axis=0))))
    p_norm = float(np.sum(np.abs(f.values) ** p) * grid.cell_volume) ** (1.0 / p)
    c = interpolation_constant(grid.n, p)
    rhs = c * p_norm ** (p / (grid.n + p)) * grad_sup ** (grid.n / (grid.n + p))
    return {
        "lhs": sup,
        "rhs": rhs,
        "constant_used": c,
        "holds": sup <= rhs * (1.0 + 1e-12) or sup == 0.0,
    }


# ---------------------------------------------------------------------------
# Parabolic window norm


def xt_norm(
    traj,
    radii,
    backend: DerivativeBackend = SPECTRAL,
    center_stride: int = 0,
) -> dict:
    """Discretized window norm: sup-in-time of |h| plus, over sampled (x, R),
    R^{-n/2} ||grad h||_{L^2(B_R(x) x (0,R^2))}
    + R^{2/(n+4)} ||grad h||_{L^{n+4}(B_R(x) x (R^2/2, R^2))}.

    Radii with fewer than two stored slices in (R^2/2, R^2] are skipped and
    reported; raises if no radius is usable.
    """
    grid = traj.grid
    n = grid.n
    times = traj.times_array()
    if times[0] != 0.0:
        raise ValueError("window norm expects a trajectory starting at t = 0")
    sup_term = max(float(np.max(tensor_abs(h))) for h in traj.fields)

    grad_sq = [grad_abs_values(h, backend) ** 2 for h in traj.fields]
    power = n + 4
    grad_pow = [gs ** (power / 2.0) for gs in grad_sq]

    q = power  # exponent of the second term
    skipped = []
    best = 0.0
    per_radius = {}
    for R in radii:
        if not 0 < R <= grid.box_length / 4.0:
            skipped.append((R, "radius outside the box core"))
            continue
        t_hi = R**2
        mask_l2 = times <= t_hi + 1e-12
        mask_lq = (times >= 0.5 * t_hi - 1e-12) & mask_l2
        if np.sum(mask_lq) < 2 or np.sum(mask_l2) < 2:
            skipped.append((R, "insufficient time slices in the window"))
            continue
        ball = (grid.radius_from(np.zeros(n)) <= R).astype(float)

        # space integrals over all centers by correlation, then trapezoid in t
        l2_slices = np.stack(
            [_correlate_with_profile(gs, ball, grid) for gs, m in zip(grad_sq, mask_l2) if m]
        )
        t_l2 = times[mask_l2]
        l2_field = np.trapezoid(l2_slices, t_l2, axis=0)
        lq_slices = np.stack(
            [_correlate_with_profile(gp, ball, grid) for gp, m in zip(grad_pow, mask_lq) if m]
        )
        t_lq = times[mask_lq]
        lq_field = np.trapezoid(lq_slices, t_lq, axis=0)

        stride = center_stride or max(1, grid.resolution // 8)
        sub = (slice(None, None, stride),) * n
        term = R ** (-n / 2.0) * np.sqrt(np.maximum(l2_field, 0.0)) + R ** (
            2.0 / (n + 4)
        ) * np.maximum(lq_field, 0.0) ** (1.0 / q)
        val = float(np.max(term[sub]))
        per_radius[R] = val
        best = max(best, val)
    if not per_radius:
        raise ValueError(f"no usable radius for the window norm; skipped: {skipped}")
    return {
        "value": sup_term + best,
        "sup_term": sup_term,
        "per_radius": per_radius,
        "skipped": skipped,
    }


# ---------------------------------------------------------------------------
# Flux integral at large radii


def adm_mass(
    h: SymTensorField,
    radii,
    backend: DerivativeBackend = SPECTRAL,
    n_theta: int = 32,
    n_phi: int = 64,
) -> np.ndarray:
    """Surface integral of (d_j g_ij - d_i g_jj) over coordinate spheres.

    Gauss-Legendre x uniform angular quadrature in 3d, uniform angles in 2d;
    the flux vector is interpolated multilinearly to the sphere points.
    """
    grid = h.grid
    n = grid.n
    if n not in (2, 3):
        raise ValueError("the flux integral is implemented for n in {2, 3}")
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    r_max = grid.box_length / 2.0 - 4.0 * grid.spacing
    for r in radii:
        if r > r_max:
            raise ValueError(
                f"radius {r} within 4 spacings of the box boundary (max {r_max:.4g})"
            )
        if r <= 0:
            raise ValueError("radii must be positive")

    grad = gradient_values(h.values, grid, backend)  # (a, comp, *grid)
    trace_idx = [c for c, (i, j) in enumerate(sym_index_pairs(n)) if i == j]
    flux = np.zeros((n,) + grid.shape)
    for i in range(n):
        acc = np.zeros(grid.shape)
        for j in range(n):
            acc += grad[j, sym_component_index(n, i, j)]
        for c in trace_idx:
            acc -= grad[i, c]
        flux[i] = acc

    center = grid.center()
    out = np.zeros(radii.shape)
    for k, r in enumerate(radii):
        if n == 2:
            phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
            normals = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
            weights = np.full(n_phi, 2.0 * np.pi / n_phi) * r  # dA = r dphi
        else:
            mu, w_mu = np.polynomial.legendre.leggauss(n_theta)
            phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
            mu_g, phi_g = np.meshgrid(mu, phi, indexing="ij")
            sin_t = np.sqrt(1.0 - mu_g**2)
            normals = np.stack(
                [sin_t * np.cos(phi_g), sin_t * np.sin(phi_g), mu_g], axis=-1
            ).reshape(-1, 3)
            weights = (
                np.repeat(w_mu, n_phi) * (2.0 * np.pi / n_phi) * r**2
            )  # dA = r^2 dmu dphi
        points = center[None, :] + r * normals
        vals = interpolate_periodic(flux, grid, points)  # (n, npts)
        integrand = np.sum(vals * normals.T, axis=0)
        out[k] = float(np.sum(weights * integrand))
    return out


# ---------------------------------------------------------------------------
# Derivative decay exponents


def derivative_decay_check(
    traj,
    p: float,
    t_window=None,
    backend: DerivativeBackend = SPECTRAL,
) -> dict:
    """Fit decay exponents of sup|grad h|, sup|grad^2 h| and sup|dh/dt|.

    The time derivative comes from the flow right-hand side, never from
    differencing stored slices.  Expected exponents are
    -n/(2p) - |alpha|/2 - k.  Series without usable (positive) data are
    reported as None.
    """
    from .geometry import _hessian_flat

    grid = traj.grid
    times = traj.times_array()
    sup_grad = []
    sup_hess = []
    sup_dt = []
    for h in traj.fields:
        sup_grad.append(float(np.max(grad_abs_values(h, backend))))
        hess = _hessian_flat(h, backend)
        sup_hess.append(float(np.max(np.sqrt(np.sum(hess**2, axis=(1, 2, 3, 4))))))
        cache = GeometryCache(h, backend)
        sup_dt.append(float(np.max(tensor_abs(rdt_rhs(cache)))))

    out = {}
    for key, series in (
        ("grad", sup_grad),
        ("grad2", sup_hess),
        ("dt", sup_dt),
    ):
        arr = np.asarray(series)
        if np.all(arr < 1e-300) or np.ptp(arr) == 0.0:
            out[key] = None
            continue
        try:
            exponent, r2 = decay_fit(times, arr, t_window)
        except ValueError:
            out[key] = None
            continue
        out[key] = {"exponent": exponent, "r2": r2}
    out["expected"] = {
        "grad": -grid.n / (2.0 * p) - 0.5,
        "grad2": -grid.n / (2.0 * p) - 1.0,
        "dt": -grid.n / (2.0 * p) - 1.0,
    }
    return out


# ---------------------------------------------------------------------------
# Online per-run series with the CSV contract


@dataclass
class DiagnosticsSeries:
    """Time-indexed record of the per-step monitored quantities.

    Columns follow the fixed CSV schema
    t,sup_h,l1_h,l2_h,lp_h,min_R,max_R,l1_R,grad_l2_cum,A_R1,...
    with one A column per configured cutoff radius.
    """

    p: float = 1.0
    local_mass_radii: tuple = ()
    local_mass_p: float = 2.0
    curvature: bool = False
    backend: DerivativeBackend = SPECTRAL
    rows: list = field(default_factory=list)
    _grad_cum: float = 0.0
    _last: tuple = None  # (t, grad_l2 integrand)

    def record(self, state, cache=None) -> None:
        h = state.h
        if cache is None:
            cache = GeometryCache(h, self.backend)
        habs = tensor_abs(h)
        vol = h.grid.cell_volume
        row = {
            "t": float(state.t),
            "sup_h": float(np.max(habs)),
            "l1_h": float(np.sum(habs) * vol),
            "l2_h": float(np.sqrt(np.sum(habs**2) * vol)),
            "lp_h": float(np.sum(habs**self.p) * vol) ** (1.0 / self.p),
        }
        integrand = grad_l2_integral(h, self.backend)
        if self._last is not None:
            t0, g0 = self._last
            self._grad_cum += 0.5 * (g0 + integrand) * (state.t - t0)
        self._last = (float(state.t), integrand)
        row["grad_l2_cum"] = self._grad_cum

        if self.curvature:
            R_field, _, _ = curvature_invariants(
                metric_of_perturbation(h), self.backend
            )
            row["min_R"] = float(np.min(R_field.values))
            row["max_R"] = float(np.max(R_field.values))
            row["l1_R"] = float(np.sum(np.abs(R_field.values)) * vol)
        else:
            row["min_R"] = row["max_R"] = row["l1_R"] = None

        for idx, radius in enumerate(self.local_mass_radii, start=1):
            row[f"A_R{idx}"] = local_mass(h, self.local_mass_p, radius)
        self.rows.append(row)

    def columns(self) -> list:
        cols = ["t", "sup_h", "l1_h", "l2_h", "lp_h", "min_R", "max_R", "l1_R", "grad_l2_cum"]
        cols += [f"A_R{i}" for i in range(1, len(self.local_mass_radii) + 1)]
        return cols

    def series(self, name) -> np.ndarray:
        return np.asarray([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow(
                    ["" if row[c] is None else repr(float(row[c])) for c in cols]
                )
