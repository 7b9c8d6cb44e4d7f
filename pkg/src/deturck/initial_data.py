"""Initial perturbation generators and the run PRNG.

Randomized generators draw from xoshiro256** (seeded through splitmix64), a
fixed, documented 64-bit generator, so that a config file plus seed pins the
produced fields bit-for-bit across runs and across reimplementations of this
repository version.  Draw order is part of the contract: components in
storage order, Fourier modes lexicographic, amplitude before phase.
"""

from __future__ import annotations

import itertools

import numpy as np

from .geometry import metric_of_perturbation, scalar_curvature
from .grid import (
    DerivativeBackend,
    GridSpec,
    SPECTRAL,
    SymTensorField,
    sym_index_pairs,
    tensor_abs,
)

SUP_REFUSAL = 0.45  # generators refuse fields at or above this sup norm

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** 1.0; state expanded from the seed with splitmix64."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        self.s = []
        for _ in range(4):
            state, word = _splitmix64(state)
            self.s.append(word)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * 2.0**-53
        return lo + (hi - lo) * u


def smooth_cutoff(r: np.ndarray, r_on: float, r_off: float) -> np.ndarray:
    """C^2 radial cutoff: 1 for r <= r_on, 0 for r >= r_off."""
    u = np.clip((r_off - r) / (r_off - r_on), 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def _diag_pattern(grid: GridSpec, profile: np.ndarray, pattern: str) -> np.ndarray:
    vals = np.zeros((grid.sym_components,) + grid.shape)
    for c, (i, j) in enumerate(sym_index_pairs(grid.n)):
        if pattern == "diag" and i == j:
            vals[c] = profile
        elif pattern == "first" and (i, j) == (0, 0):
            vals[c] = profile
        elif pattern == "offdiag" and (i, j) == (0, 1):
            vals[c] = profile
    return vals


def generate_zero(grid: GridSpec) -> SymTensorField:
    return SymTensorField.zero(grid)


def generate_gaussian_bump(
    grid: GridSpec, amplitude: float, width: float, pattern: str = "diag"
) -> SymTensorField:
    if pattern not in ("diag", "first", "offdiag"):
        raise ValueError(f"unknown component pattern {pattern!r}")
    r = grid.radius_from(grid.center())
    profile = amplitude * np.exp(-(r**2) / (2.0 * width**2))
    return SymTensorField(grid, _diag_pattern(grid, profile, pattern))


def generate_conformal2d(grid: GridSpec, phi_amplitude: float, width: float) -> SymTensorField:
    """h = (e^{2 phi} - 1) delta with a Gaussian conformal exponent (n = 2)."""
    if grid.n != 2:
        raise ValueError("the conformal bump generator is two-dimensional")
    r = grid.radius_from(grid.center())
    phi = phi_amplitude * np.exp(-(r**2) / (2.0 * width**2))
    return SymTensorField(grid, _diag_pattern(grid, np.exp(2 * phi) - 1.0, "diag"))


def generate_regularized_schwarzschild(
    grid: GridSpec, mass: float, core: float, truncate: bool = True
) -> SymTensorField:
    """Conformally flat data g = u^{4/(n-2)} delta, u = 1 + m (r^2 + a^2)^{-1/2}.

    u is superharmonic for n = 3, so the closed-form scalar curvature is
    nonnegative everywhere.  On the periodic box the 1/r tail must be cut off
    (C^2, starting at box_length/3); the cutoff injects a small negative
    curvature ring in the transition annulus, which is reported rather than
    hidden: no exactly nonneg-curvature compactly supported data exists.
    """
    if grid.n < 3:
        raise ValueError("the conformal mass generator needs n >= 3")
    if mass <= 0 or core <= 0:
        raise ValueError("mass and core radius must be positive")
    r = grid.radius_from(grid.center())
    u_minus_1 = mass / np.sqrt(r**2 + core**2)
    if truncate:
        u_minus_1 = u_minus_1 * smooth_cutoff(r, grid.box_length / 3.0, 0.46 * grid.box_length)
    u = 1.0 + u_minus_1
    power = 4.0 / (grid.n - 2.0)
    return SymTensorField(grid, _diag_pattern(grid, u**power - 1.0, "diag"))


def generate_random_bandlimited(
    grid: GridSpec, amplitude: float, kmax: int, seed: int
) -> SymTensorField:
    """Random cosine sum over all modes with |k|_inf <= kmax, rescaled so the
    sup of the tensor norm equals `amplitude` exactly."""
    if kmax < 1:
        raise ValueError("cutoff wavenumber must be >= 1")
    prng = Xoshiro256StarStar(seed)
    x = grid.coords()
    modes = []
    rng_range = range(-kmax, kmax + 1)
    for k in itertools.product(rng_range, repeat=grid.n):
        if all(c == 0 for c in k):
            continue
        first = next(c for c in k if c != 0)
        if first > 0:
            modes.append(k)
    vals = np.zeros((grid.sym_components,) + grid.shape)
    for c in range(grid.sym_components):
        acc = np.zeros(grid.shape)
        for k in modes:
            amp = prng.uniform(0.5, 1.0)
            phase = prng.uniform(0.0, 2.0 * np.pi)
            arg = np.zeros(grid.shape)
            for axis, kc in enumerate(k):
                if kc:
                    arg = arg + (2.0 * np.pi * kc / grid.box_length) * x[axis]
            acc += amp * np.cos(arg + phase)
        vals[c] = acc
    field = SymTensorField(grid, vals)
    sup = float(np.max(tensor_abs(field)))
    if sup == 0.0:
        return field
    return SymTensorField(grid, vals * (amplitude / sup))


def generate(kind: str, grid: GridSpec, params: dict, p_list=(1.0, 2.0),
             backend: DerivativeBackend = SPECTRAL, curvature: bool = True):
    """Build initial data and its provenance record.

    The record carries the generated sup norm, the configured Lp norms and
    the grid minimum of the initial scalar curvature; generators refuse
    fields with sup at or above 0.45.
    """
    if kind == "zero":
        h = generate_zero(grid)
    elif kind == "gaussian_bump":
        h = generate_gaussian_bump(
            grid, params["amplitude"], params["width"], params.get("pattern", "diag")
        )
    elif kind == "conformal2d":
        h = generate_conformal2d(grid, params["phi_amplitude"], params["width"])
    elif kind == "regularized_schwarzschild":
        h = generate_regularized_schwarzschild(
            grid, params["mass"], params["core"], params.get("truncate", True)
        )
    elif kind == "random_bandlimited":
        if "seed" not in params or params["seed"] is None:
            raise ValueError("randomized initial data requires a seed")
        h = generate_random_bandlimited(
            grid, params["amplitude"], int(params.get("kmax", 3)), int(params["seed"])
        )
    else:
        raise ValueError(f"unknown initial data kind {kind!r}")

    sup = float(np.max(tensor_abs(h)))
    if sup >= SUP_REFUSAL:
        knob = {
            "gaussian_bump": "amplitude",
            "conformal2d": "phi_amplitude",
            "regularized_schwarzschild": "mass",
            "random_bandlimited": "amplitude",
        }.get(kind, "amplitude")
        raise ValueError(
            f"generated sup|h0| = {sup:.4f} >= {SUP_REFUSAL}; shrink init.{knob}"
        )

    from .diagnostics import lp_norm

    record = {
        "kind": kind,
        "sup_h0": sup,
        "lp_h0": {p: lp_norm(h, p) for p in p_list},
    }
    if curvature and sup > 0:
        R0 = scalar_curvature(metric_of_perturbation(h), backend)
        record["min_R0"] = float(np.min(R0.values))
        record["max_R0"] = float(np.max(R0.values))
    elif sup == 0:
        record["min_R0"] = 0.0
        record["max_R0"] = 0.0
    return h, record
