import itertools

import numpy as np
import pytest

from deturck.grid import GridSpec, SymTensorField


def _half_space_modes(n, kcut):
    """Integer modes with |k_a| <= kcut, one representative per +/-k pair."""
    modes = []
    for k in itertools.product(range(-kcut, kcut + 1), repeat=n):
        if all(c == 0 for c in k):
            continue
        first = next(c for c in k if c != 0)
        if first > 0:
            modes.append(k)
    return modes


def random_bandlimited_scalar(grid, kcut, rng, amplitude=1.0):
    """Real random band-limited field built as a cosine sum.

    The same rng state yields the same *function* at every resolution, so
    fields are directly comparable across refinement levels.
    """
    x = grid.coords()
    out = np.zeros(grid.shape)
    for k in _half_space_modes(grid.n, kcut):
        a = rng.uniform(-1.0, 1.0)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        phase = np.zeros(grid.shape)
        for axis, kc in enumerate(k):
            phase += 2.0 * np.pi * kc * x[axis] / grid.box_length
        out += a * np.cos(phase + phi)
    sup = np.max(np.abs(out))
    return out * (amplitude / sup if sup > 0 else 1.0)


def random_bandlimited_sym(grid, kcut, rng, amplitude=1.0):
    comps = [
        random_bandlimited_scalar(grid, kcut, rng, amplitude)
        for _ in range(grid.sym_components)
    ]
    return SymTensorField(grid, np.stack(comps))


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
