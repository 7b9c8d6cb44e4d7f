"""Discrete scalar, vector and symmetric 2-tensor fields on a periodic box.

The box [0, L)^n replaces R^n at desk scale.  All fields live on a uniform
grid with a power-of-two number of points per axis so that derivatives can be
taken either spectrally (Fourier multipliers ik, exact for band-limited data)
or with 4th-order centered differences with periodic wraparound.

Array layout convention used throughout the package: grid axes are always the
*last* n axes of a values array; any component axes come first.  A symmetric
2-tensor stores only its upper triangle, components ordered lexicographically
in (i, j) with i <= j.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

_FFT_WORKERS = int(os.environ.get("DETURCK_FFT_WORKERS", "2"))


def _rfftn(values, n):
    return _fft.rfftn(values, axes=tuple(range(-n, 0)), workers=_FFT_WORKERS)


def _irfftn(spectrum, shape, n):
    return _fft.irfftn(spectrum, s=shape, axes=tuple(range(-n, 0)), workers=_FFT_WORKERS)


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid: n axes, `resolution` points each, side length L."""

    n: int
    resolution: int
    box_length: float

    def __post_init__(self):
        if not 2 <= self.n <= 4:
            raise ValueError(f"dimension n must be in [2, 4], got {self.n}")
        r = self.resolution
        if r < 8 or (r & (r - 1)) != 0:
            raise ValueError(f"resolution must be a power of two >= 8, got {r}")
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")

    @property
    def spacing(self) -> float:
        return self.box_length / self.resolution

    @property
    def shape(self) -> tuple:
        return (self.resolution,) * self.n

    @property
    def npoints(self) -> int:
        return self.resolution**self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.n

    @property
    def sym_components(self) -> int:
        return self.n * (self.n + 1) // 2

    def axis_coords(self) -> np.ndarray:
        """1d coordinates [0, L) along one axis."""
        return np.arange(self.resolution) * self.spacing

    def coords(self) -> list:
        """Meshgrid coordinate arrays (ij indexing), each of shape `self.shape`."""
        x = self.axis_coords()
        return list(np.meshgrid(*([x] * self.n), indexing="ij"))

    def center(self) -> np.ndarray:
        return np.full(self.n, self.box_length / 2.0)

    def min_image(self, delta) -> np.ndarray:
        """Wrap coordinate differences into [-L/2, L/2)."""
        L = self.box_length
        return (np.asarray(delta) + L / 2.0) % L - L / 2.0

    def radius_from(self, center) -> np.ndarray:
        """Minimal-image distance of each grid point from `center`."""
        d2 = np.zeros(self.shape)
        x = self.axis_coords()
        for a in range(self.n):
            da = self.min_image(x - center[a])
            sh = [1] * self.n
            sh[a] = self.resolution
            d2 = d2 + da.reshape(sh) ** 2
        return np.sqrt(d2)

    # Spectral machinery.  Wavenumbers follow the fft layout; the last axis is
    # the half-spectrum of a real transform.
    def wavenumbers_rfft(self) -> list:
        ks = []
        for a in range(self.n):
            if a == self.n - 1:
                k = 2.0 * np.pi * np.fft.rfftfreq(self.resolution, d=self.spacing)
            else:
                k = 2.0 * np.pi * np.fft.fftfreq(self.resolution, d=self.spacing)
            sh = [1] * self.n
            sh[a] = k.size
            ks.append(k.reshape(sh))
        return ks

    def k_squared_rfft(self) -> np.ndarray:
        k2 = 0.0
        for k in self.wavenumbers_rfft():
            k2 = k2 + k**2
        return k2

    def gradient_multipliers(self) -> list:
        """ik per axis with the Nyquist mode zeroed (odd derivative of an even
        real mode has no consistent sign on the grid)."""
        nyq = np.pi / self.spacing
        out = []
        for k in self.wavenumbers_rfft():
            kk = k.copy()
            kk[np.isclose(np.abs(kk), nyq)] = 0.0
            out.append(1j * kk)
        return out

    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask in rfft layout: keep |k index| <= resolution // 3."""
        cut = self.resolution // 3
        keep = np.ones((1,) * self.n, dtype=bool)
        for a in range(self.n):
            if a == self.n - 1:
                idx = np.arange(self.resolution // 2 + 1)
            else:
                idx = np.abs(np.fft.fftfreq(self.resolution, d=1.0 / self.resolution)).astype(int)
            m = idx <= cut
            sh = [1] * self.n
            sh[a] = m.size
            keep = keep & m.reshape(sh)
        return keep


@dataclass(frozen=True)
class DerivativeBackend:
    """How spatial derivatives are taken: 'spectral' or 'central4'.

    `dealias` only matters for the spectral backend; it requests 2/3-rule
    truncation of nonlinear products formed by consumers of this backend.
    """

    kind: str = "spectral"
    dealias: bool = True

    def __post_init__(self):
        if self.kind not in ("spectral", "central4"):
            raise ValueError(f"unknown backend kind {self.kind!r}")


SPECTRAL = DerivativeBackend("spectral", dealias=True)
CENTRAL4 = DerivativeBackend("central4", dealias=False)


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(np.asarray(values)))[0]
        raise ValueError(f"non-finite entry in {what} at index {tuple(int(i) for i in bad)}")


def sym_index_pairs(n: int) -> list:
    """Lexicographic (i, j), i <= j, defining the component order of storage."""
    return [(i, j) for i in range(n) for j in range(i, n)]


def sym_component_index(n: int, i: int, j: int) -> int:
    if i > j:
        i, j = j, i
    return i * n - i * (i - 1) // 2 + (j - i)


def sym_weights(n: int) -> np.ndarray:
    """Multiplicity of each stored component in a full-matrix contraction."""
    return np.array([1.0 if i == j else 2.0 for (i, j) in sym_index_pairs(n)])


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {v.shape} != grid shape {self.grid.shape}")
        _check_finite(v, "ScalarField")
        object.__setattr__(self, "values", v)

    def abs_values(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass(frozen=True)
class VectorField:
    grid: GridSpec
    values: np.ndarray  # shape (n, *grid.shape)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,) + self.grid.shape:
            raise ValueError(f"vector field shape {v.shape} incompatible with grid")
        _check_finite(v, "VectorField")
        object.__setattr__(self, "values", v)

    def abs_values(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=0))


@dataclass(frozen=True)
class SymTensorField:
    """Symmetric 2-tensor field; only the upper triangle is stored."""

    grid: GridSpec
    values: np.ndarray  # shape (n(n+1)/2, *grid.shape)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.sym_components,) + self.grid.shape:
            raise ValueError(f"sym tensor shape {v.shape} incompatible with grid")
        _check_finite(v, "SymTensorField")
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls, grid: GridSpec) -> "SymTensorField":
        return cls(grid, np.zeros((grid.sym_components,) + grid.shape))

    def component(self, i: int, j: int) -> np.ndarray:
        return self.values[sym_component_index(self.grid.n, i, j)]

    def to_full(self) -> np.ndarray:
        """Expand to shape (*grid.shape, n, n); h_ij == h_ji exactly."""
        n = self.grid.n
        out = np.empty(self.grid.shape + (n, n))
        for c, (i, j) in enumerate(sym_index_pairs(n)):
            out[..., i, j] = self.values[c]
            if i != j:
                out[..., j, i] = self.values[c]
        return out

    @classmethod
    def from_full(cls, grid: GridSpec, full: np.ndarray) -> "SymTensorField":
        comps = [full[..., i, j] for (i, j) in sym_index_pairs(grid.n)]
        return cls(grid, np.stack(comps, axis=0))

    def abs_values(self) -> np.ndarray:
        w = sym_weights(self.grid.n).reshape((-1,) + (1,) * self.grid.n)
        return np.sqrt(np.sum(w * self.values**2, axis=0))


def tensor_abs(field) -> np.ndarray:
    """Pointwise Euclidean norm of a field (full-matrix sum for tensors)."""
    return field.abs_values()


def pointwise_norm(h: SymTensorField, delta: float = 0.0) -> ScalarField:
    """Regularized norm sqrt(<h, h> + delta); off-diagonals counted twice."""
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    w = sym_weights(h.grid.n).reshape((-1,) + (1,) * h.grid.n)
    return ScalarField(h.grid, np.sqrt(np.sum(w * h.values**2, axis=0) + delta))


def _wrap_like(field, grid, values):
    if isinstance(field, ScalarField):
        return ScalarField(grid, values)
    if isinstance(field, VectorField):
        return VectorField(grid, values)
    return SymTensorField(grid, values)


# ---------------------------------------------------------------------------
# Derivatives


def gradient_values(values: np.ndarray, grid: GridSpec, backend: DerivativeBackend) -> np.ndarray:
    """d/dx_a applied componentwise; returns shape (n,) + values.shape."""
    _check_finite(values, "gradient input")
    n = grid.n
    if backend.kind == "spectral":
        spec = _rfftn(values, n)
        out = np.empty((n,) + values.shape)
        for a, ik in enumerate(grid.gradient_multipliers()):
            out[a] = _irfftn(ik * spec, grid.shape, n)
        return out
    h = grid.spacing
    out = np.empty((n,) + values.shape)
    for a in range(n):
        ax = values.ndim - n + a
        out[a] = (
            8.0 * (np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax))
            - (np.roll(values, -2, axis=ax) - np.roll(values, 2, axis=ax))
        ) / (12.0 * h)
    return out


def gradient(field, backend: DerivativeBackend = SPECTRAL) -> np.ndarray:
    """Componentwise partial derivatives of a field, derivative axis first."""
    return gradient_values(field.values, field.grid, backend)


def laplacian_values(values: np.ndarray, grid: GridSpec, backend: DerivativeBackend) -> np.ndarray:
    _check_finite(values, "laplacian input")
    n = grid.n
    if backend.kind == "spectral":
        spec = _rfftn(values, n)
        return _irfftn(-grid.k_squared_rfft() * spec, grid.shape, n)
    h = grid.spacing
    out = np.zeros_like(values, dtype=float)
    for a in range(n):
        ax = values.ndim - n + a
        out += (
            -(np.roll(values, -2, axis=ax) + np.roll(values, 2, axis=ax))
            + 16.0 * (np.roll(values, -1, axis=ax) + np.roll(values, 1, axis=ax))
            - 30.0 * values
        ) / (12.0 * h**2)
    return out


def laplacian(field, backend: DerivativeBackend = SPECTRAL):
    """Trace of the second derivative, componentwise; same field type back."""
    return _wrap_like(field, field.grid, laplacian_values(field.values, field.grid, backend))


def divergence_values(values: np.ndarray, grid: GridSpec, backend: DerivativeBackend) -> np.ndarray:
    """Contract the leading derivative axis: sum_a d_a values[a]."""
    _check_finite(values, "divergence input")
    n = grid.n
    if backend.kind == "spectral":
        spec = _rfftn(values, n)
        acc = None
        for a, ik in enumerate(grid.gradient_multipliers()):
            term = ik * spec[a]
            acc = term if acc is None else acc + term
        return _irfftn(acc, grid.shape, n)
    h = grid.spacing
    out = np.zeros(values.shape[1:], dtype=float)
    for a in range(n):
        ax = values.ndim - 1 - n + a
        v = values[a]
        out += (
            8.0 * (np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax))
            - (np.roll(v, -2, axis=ax) - np.roll(v, 2, axis=ax))
        ) / (12.0 * h)
    return out


def dealias_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Zero all modes above the 2/3 cutoff (used on nonlinear products)."""
    spec = _rfftn(values, grid.n)
    spec *= grid.dealias_mask()
    return _irfftn(spec, grid.shape, grid.n)


def heat_multiplier(grid: GridSpec, tau: float) -> np.ndarray:
    """Fourier symbol of exp(tau * Laplacian); the periodized Gaussian kernel."""
    return np.exp(-grid.k_squared_rfft() * tau)


def apply_heat_values(values: np.ndarray, grid: GridSpec, tau: float) -> np.ndarray:
    spec = _rfftn(values, grid.n)
    return _irfftn(heat_multiplier(grid, tau) * spec, grid.shape, grid.n)


# ---------------------------------------------------------------------------
# Periodic multilinear interpolation (used by the diffeomorphism pullback,
# sphere sampling and space-time curve evaluation).


def interpolate_periodic(values: np.ndarray, grid: GridSpec, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of `values` (grid axes last) at physical
    `points` of shape (..., n).  Returns shape components + points-batch."""
    n = grid.n
    pts = np.asarray(points, dtype=float)
    batch_shape = pts.shape[:-1]
    pts = pts.reshape(-1, n)
    frac = pts / grid.spacing
    base = np.floor(frac).astype(np.int64)
    w = frac - base
    res = grid.resolution

    comp_shape = values.shape[: values.ndim - n]
    flatvals = values.reshape(comp_shape + (-1,))
    strides = np.array([res ** (n - 1 - a) for a in range(n)], dtype=np.int64)

    out = np.zeros(comp_shape + (pts.shape[0],))
    for corner in range(2**n):
        offs = np.array([(corner >> a) & 1 for a in range(n)], dtype=np.int64)
        idx = (base + offs) % res
        flat_idx = idx @ strides
        weight = np.ones(pts.shape[0])
        for a in range(n):
            weight = weight * (w[:, a] if offs[a] else (1.0 - w[:, a]))
        out += flatvals[..., flat_idx] * weight
    return out.reshape(comp_shape + batch_shape)
