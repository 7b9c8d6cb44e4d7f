"""Pointwise tensor algebra of the perturbation flow.

Everything here works on the perturbation h = g - g_eucl of the flat metric,
or on a full metric g where noted.  The flow right-hand side is

    dh/dt = Lap h + Q0[h] + div_a Q1[h]^a

with Q0 the quadratic-gradient nonlinearity (including the inverse-metric
divergence term) and Q1^a_ij = ((g_eucl + h)^{ab} - delta^{ab}) d_b h_ij.
Curvature uses the exact Christoffel-symbol formulas rather than schematic
contractions, so sign-sensitive diagnostics are trustworthy.

Internal layout: grids are flattened to a leading axis of length N and tensor
indices trail, e.g. the metric is (N, n, n) and the gradient of h is
(N, a, i, j).  Contractions are staged through two shared products

    DU[b, i, j] = G^{ab} d_a h_ij      (derivative index raised)
    DM[c, q, a] = G^{qp} d_c h_pa      (first tensor index raised)

so each nonlinearity term reduces to one batched matrix product with a
composite contracted index.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .grid import (
    DerivativeBackend,
    GridSpec,
    ScalarField,
    SPECTRAL,
    SymTensorField,
    VectorField,
    divergence_values,
    gradient_values,
    laplacian_values,
    sym_index_pairs,
)

MIN_PIVOT = 1e-6  # smallest admissible Cholesky pivot of g = delta + h


def _to_flat_full(h: SymTensorField) -> np.ndarray:
    """(ncomp, *grid) -> (N, n, n) full symmetric matrices."""
    n = h.grid.n
    N = h.grid.npoints
    ncomp = h.grid.sym_components
    moved = np.moveaxis(h.values.reshape(ncomp, N), -1, 0)  # (N, comp)
    out = np.empty((N, n, n))
    I, J = _pair_indices(n)
    out[:, I, J] = moved
    out[:, J, I] = moved
    return out


def _sym_from_flat(grid: GridSpec, flat: np.ndarray) -> SymTensorField:
    I, J = _pair_indices(grid.n)
    comps = np.moveaxis(flat[:, I, J], 0, -1)  # (ncomp, N)
    return SymTensorField(grid, comps.reshape((grid.sym_components,) + grid.shape))


def _pair_indices(n: int):
    pairs = sym_index_pairs(n)
    return [i for i, _ in pairs], [j for _, j in pairs]


def _grad_flat(h: SymTensorField, backend: DerivativeBackend) -> np.ndarray:
    """d_a h_ij as (N, a, i, j)."""
    n = h.grid.n
    N = h.grid.npoints
    ncomp = h.grid.sym_components
    grad = gradient_values(h.values, h.grid, backend)  # (a, ncomp, *grid)
    moved = np.moveaxis(grad.reshape(n, ncomp, N), -1, 0)  # (N, a, comp)
    out = np.empty((N, n, n, n))
    I, J = _pair_indices(n)
    out[:, :, I, J] = moved
    out[:, :, J, I] = moved
    return out


def _hessian_flat(h: SymTensorField, backend: DerivativeBackend) -> np.ndarray:
    """d_c d_a h_ij as (N, c, a, i, j)."""
    grid = h.grid
    n = grid.n
    N = grid.npoints
    ncomp = grid.sym_components
    grad = gradient_values(h.values, grid, backend)  # (a, ncomp, *grid)
    out = np.empty((N, n, n, n, n))
    I, J = _pair_indices(n)
    for a in range(n):
        hess_a = gradient_values(grad[a], grid, backend)  # (c, ncomp, *grid)
        moved = np.moveaxis(hess_a.reshape(n, ncomp, N), -1, 0)  # (N, c, comp)
        out[:, :, a, I, J] = moved
        out[:, :, a, J, I] = moved
    return out


def _invert_metric_flat(M: np.ndarray, grid: GridSpec):
    """Pointwise inverse of (N, n, n) SPD matrices with a pivot guard."""
    try:
        chol = np.linalg.cholesky(M)
        min_pivot = float(np.min(chol[:, range(grid.n), range(grid.n)]) ** 2)
    except np.linalg.LinAlgError:
        min_pivot = -np.inf
    if not min_pivot > MIN_PIVOT:
        eigs = np.linalg.eigvalsh(M)
        worst = int(np.argmin(eigs[:, 0]))
        loc = tuple(int(i) for i in np.unravel_index(worst, grid.shape))
        raise ValueError(
            "metric not positive definite within the pivot guard "
            f"(smallest eigenvalue {eigs[worst, 0]:.3e} at grid point {loc})"
        )
    return np.linalg.inv(M)


def inverse_metric(h: SymTensorField) -> SymTensorField:
    """(g_eucl + h)^{-1}, rejecting non-positive-definite points."""
    grid = h.grid
    M = _to_flat_full(h)
    M[:, range(grid.n), range(grid.n)] += 1.0
    return _sym_from_flat(grid, _invert_metric_flat(M, grid))


class GeometryCache:
    """Derived quantities of one perturbation snapshot, built once and shared.

    Heavy pieces (inverse metric, gradient, staged products, hessian) are
    computed lazily and memoized; the cache must be treated as immutable.
    """

    def __init__(self, h: SymTensorField, backend: DerivativeBackend = SPECTRAL, h_spectrum=None):
        self.h = h
        self.backend = backend
        self.grid = h.grid
        self._h_spectrum = h_spectrum  # optional cached rfft of h.values

    # -- flattened building blocks -------------------------------------
    @cached_property
    def metric_flat(self) -> np.ndarray:
        M = _to_flat_full(self.h)
        M[:, range(self.grid.n), range(self.grid.n)] += 1.0
        return M

    @cached_property
    def inv_flat(self) -> np.ndarray:
        return _invert_metric_flat(self.metric_flat, self.grid)

    @cached_property
    def grad_flat(self) -> np.ndarray:
        grid = self.grid
        if self._h_spectrum is not None and self.backend.kind == "spectral":
            from .grid import _irfftn

            n = grid.n
            ncomp = grid.sym_components
            N = grid.npoints
            grad = np.empty((n, ncomp) + grid.shape)
            for a, ik in enumerate(grid.gradient_multipliers()):
                grad[a] = _irfftn(ik * self._h_spectrum, grid.shape, n)
            moved = np.moveaxis(grad.reshape(n, ncomp, N), -1, 0)
            out = np.empty((N, n, n, n))
            I, J = _pair_indices(n)
            out[:, :, I, J] = moved
            out[:, :, J, I] = moved
            return out
        return _grad_flat(self.h, self.backend)

    @cached_property
    def hess_flat(self) -> np.ndarray:
        return _hessian_flat(self.h, self.backend)

    # -- staged contractions shared by the nonlinearities ----------------
    @cached_property
    def du(self) -> np.ndarray:
        """DU[b, i, j] = G^{ab} d_a h_ij."""
        n = self.grid.n
        N = self.grid.npoints
        D = self.grad_flat
        return np.matmul(self.inv_flat, D.reshape(N, n, n * n)).reshape(N, n, n, n)

    @cached_property
    def dm(self) -> np.ndarray:
        """DM[c, q, a] = G^{qp} d_c h_pa."""
        return np.matmul(self.inv_flat[:, None], self.grad_flat)

    @cached_property
    def inv_metric(self) -> SymTensorField:
        return _sym_from_flat(self.grid, self.inv_flat)

    @cached_property
    def grad_h(self) -> np.ndarray:
        """d_a h in packed layout (n, ncomp, *grid)."""
        return gradient_values(self.h.values, self.grid, self.backend)

    def residual_identity(self) -> float:
        """sup |(g_eucl + h) g_inv - id|, a consistency check of the inverse."""
        n = self.grid.n
        res = np.matmul(self.metric_flat, self.inv_flat)
        res[:, range(n), range(n)] -= 1.0
        return float(np.max(np.abs(res)))


def q0_flat(cache: GeometryCache) -> np.ndarray:
    """Quadratic-gradient nonlinearity as (N, n, n)."""
    n = cache.grid.n
    N = cache.grid.npoints
    D = cache.grad_flat
    DU = cache.du
    DM = cache.dm

    # A1_ij = G^{ab} G^{pq} d_i h_pa d_j h_qb = DM[i,q,a] DM[j,a,q]
    X1 = DM.reshape(N, n, n * n)
    W1 = np.ascontiguousarray(DM.transpose(0, 1, 3, 2)).reshape(N, n, n * n)
    A1 = np.matmul(X1, W1.transpose(0, 2, 1))

    # A2_ij = G^{ab} G^{pq} d_a h_jp d_q h_ib = DU[b,j,p] DU[p,i,b]
    X2 = np.ascontiguousarray(DU.transpose(0, 2, 1, 3)).reshape(N, n, n * n)
    Y2 = np.ascontiguousarray(DU.transpose(0, 3, 1, 2)).reshape(N, n * n, n)
    A2 = np.matmul(X2, Y2)

    # A3_ij = G^{ab} G^{pq} d_a h_jp d_b h_iq = DU[b,j,p] DM[b,p,i]
    Y3 = DM.reshape(N, n * n, n)
    A3 = np.matmul(X2, Y3)

    # A4_ij = G^{ab} G^{pq} d_j h_pa d_b h_iq = DM[j,b,p] DM[b,p,i]
    A4 = np.matmul(X1, Y3)

    bracket = A1 + 2.0 * A2 - 2.0 * A3 - 2.0 * A4 - 2.0 * A4.transpose(0, 2, 1)

    # - d_a G^{ab} d_b h_ij = + (G dh G)^b d_b h_ij
    s = np.einsum("xppq->xq", DU)
    w = np.matmul(s[:, None, :], cache.inv_flat)  # (N, 1, n)
    last = np.matmul(w, D.reshape(N, n, n * n)).reshape(N, n, n)

    return 0.5 * bracket + last


def q0(cache: GeometryCache) -> SymTensorField:
    """Quadratic-gradient part of the flow right-hand side."""
    out = q0_flat(cache)
    out = 0.5 * (out + out.transpose(0, 2, 1))  # kill roundoff asymmetry
    return _sym_from_flat(cache.grid, out)


def q1_flat(cache: GeometryCache) -> np.ndarray:
    """Divergence-form nonlinearity Q1^a_ij as (N, a, i, j)."""
    return cache.du - cache.grad_flat


def q1(cache: GeometryCache) -> np.ndarray:
    """Q1 in packed layout (n, ncomp, *grid); the flow uses its divergence."""
    grid = cache.grid
    flat = q1_flat(cache)
    I, J = _pair_indices(grid.n)
    packed = np.moveaxis(flat[:, :, I, J], 0, -1)  # (n, ncomp, N)
    return packed.reshape((grid.n, grid.sym_components) + grid.shape).copy()


def bianchi_vector(cache: GeometryCache) -> VectorField:
    """Gauge vector field X^i = G^{ij} G^{pq} (-d_p h_qj + (1/2) d_j h_pq)."""
    grid = cache.grid
    s1 = np.einsum("xqqj->xj", cache.du)
    s2 = np.einsum("xjqq->xj", cache.dm)
    rhs = -s1 + 0.5 * s2
    X = np.matmul(cache.inv_flat, rhs[..., None])[..., 0]  # (N, n)
    return VectorField(grid, X.T.reshape((grid.n,) + grid.shape))


def nonlinearity_values(cache: GeometryCache) -> np.ndarray:
    """Q0[h] + div_a Q1[h]^a in packed layout (ncomp, *grid)."""
    grid = cache.grid
    q0_vals = q0(cache).values
    div_q1 = divergence_values(q1(cache), grid, cache.backend)
    return q0_vals + div_q1


def nonlinearity_spectrum(cache: GeometryCache, dealias_mask=None) -> np.ndarray:
    """rfft of Q0 + div Q1, assembled in spectral space (spectral backend).

    The divergence is taken as ik_a applied to the transform of Q1^a, so the
    whole explicit forcing comes back as one spectrum ready for an
    exponential-integrator step.
    """
    from .grid import _rfftn

    grid = cache.grid
    spec = _rfftn(q0(cache).values, grid.n)
    q1_vals = q1(cache)
    ik = grid.gradient_multipliers()
    for a in range(grid.n):
        spec += ik[a] * _rfftn(q1_vals[a], grid.n)
    if dealias_mask is not None:
        spec *= dealias_mask
    return spec


def rdt_rhs(cache: GeometryCache, verify: bool = False, verify_tol: float = 1e-8) -> SymTensorField:
    """Full flow right-hand side Lap h + Q0 + div Q1.

    With verify=True the equivalent quasilinear form
    g^{ab} d_a d_b h_ij + (quadratic bracket) is evaluated independently and
    the two must agree in sup norm to verify_tol relative.
    """
    grid = cache.grid
    lap = laplacian_values(cache.h.values, grid, cache.backend)
    rhs_vals = lap + nonlinearity_values(cache)
    rhs = SymTensorField(grid, rhs_vals)
    if verify:
        shi = shi_rhs(cache)
        scale = max(float(np.max(np.abs(shi.values))), 1e-300)
        diff = float(np.max(np.abs(rhs.values - shi.values))) / scale
        if diff > verify_tol:
            raise AssertionError(
                f"divergence-form and quasilinear right-hand sides disagree: {diff:.3e}"
            )
    return rhs


def shi_rhs(cache: GeometryCache) -> SymTensorField:
    """Quasilinear form of the right-hand side: g^{ab} d_a d_b h + bracket."""
    n = cache.grid.n
    N = cache.grid.npoints
    H2 = cache.hess_flat  # (N, c, a, i, j)
    G = cache.inv_flat
    principal = np.matmul(
        G.reshape(N, 1, n * n), H2.reshape(N, n * n, n * n)
    ).reshape(N, n, n)

    D = cache.grad_flat
    DU = cache.du
    DM = cache.dm
    X1 = DM.reshape(N, n, n * n)
    W1 = np.ascontiguousarray(DM.transpose(0, 1, 3, 2)).reshape(N, n, n * n)
    A1 = np.matmul(X1, W1.transpose(0, 2, 1))
    X2 = np.ascontiguousarray(DU.transpose(0, 2, 1, 3)).reshape(N, n, n * n)
    Y2 = np.ascontiguousarray(DU.transpose(0, 3, 1, 2)).reshape(N, n * n, n)
    A2 = np.matmul(X2, Y2)
    Y3 = DM.reshape(N, n * n, n)
    A3 = np.matmul(X2, Y3)
    A4 = np.matmul(X1, Y3)
    bracket = A1 + 2.0 * A2 - 2.0 * A3 - 2.0 * A4 - 2.0 * A4.transpose(0, 2, 1)

    out = principal + 0.5 * bracket
    out = 0.5 * (out + out.transpose(0, 2, 1))
    return _sym_from_flat(cache.grid, out)


# ---------------------------------------------------------------------------
# Curvature of a full metric


class _CurvatureWork:
    """Christoffel symbols and Ricci tensor of a full metric g (flattened)."""

    def __init__(self, g: SymTensorField, backend: DerivativeBackend):
        grid = g.grid
        n = grid.n
        N = grid.npoints
        self.grid = grid
        self.G_full = _to_flat_full(g)
        self.G_inv = _invert_metric_flat(self.G_full, grid)
        self.D = _grad_flat(g, backend)  # derivatives of g == derivatives of g - const
        self.H2 = _hessian_flat(g, backend)
        self.n = n
        self.N = N
        self.du = np.matmul(self.G_inv, self.D.reshape(N, n, n * n)).reshape(N, n, n, n)
        self.dm = np.matmul(self.G_inv[:, None], self.D)

    @cached_property
    def christoffel(self) -> np.ndarray:
        """Gamma^k_ij as (N, k, i, j)."""
        # gamma[k,i,j] = (DM[i,k,j] + DM[j,k,i] - DU[k,i,j]) / 2
        DM = self.dm
        a1 = DM.transpose(0, 2, 1, 3)  # [k, i, j] = DM[i, k, j]
        a2 = DM.transpose(0, 2, 3, 1)  # [k, i, j] = DM[j, k, i]
        return 0.5 * (a1 + a2 - self.du)

    @cached_property
    def ricci_flat(self) -> np.ndarray:
        n, N = self.n, self.N
        G = self.G_inv
        D = self.D
        H2 = self.H2
        DM = self.dm

        # gdg[c, k, l] = (G dg_c G)^{kl} = -d_c G^{kl}
        gdg = np.matmul(DM, G[:, None])
        gdg_tr = np.einsum("xkkl->xl", gdg)

        # S[l, i, j] = d_i g_lj + d_j g_li - d_l g_ij
        S = D.transpose(0, 2, 1, 3) + D.transpose(0, 2, 3, 1) - D

        # d_k Gamma^k_ij
        term_a = -0.5 * np.matmul(gdg_tr[:, None, :], S.reshape(N, n, n * n)).reshape(N, n, n)
        H2p = np.ascontiguousarray(H2.transpose(0, 1, 4, 2, 3))  # [k, l, i, j]
        piece1 = np.matmul(G.reshape(N, 1, n * n), H2p.reshape(N, n * n, n * n)).reshape(N, n, n)
        piece3 = np.matmul(G.reshape(N, 1, n * n), H2.reshape(N, n * n, n * n)).reshape(N, n, n)
        p1 = term_a + 0.5 * (piece1 + piece1.transpose(0, 2, 1) - piece3)

        # d_i Gamma^k_kj  (the gradient of d_j log sqrt(det g))
        pieceA = np.matmul(gdg.reshape(N, n, n * n), D.reshape(N, n, n * n).transpose(0, 2, 1))
        pieceB = np.matmul(H2.reshape(N, n * n, n * n), G.reshape(N, n * n, 1)).reshape(N, n, n)
        p2 = 0.5 * (-pieceA + pieceB)

        gamma = self.christoffel
        s2 = np.einsum("xjqq->xj", DM)
        g2a = 0.5 * np.matmul(s2[:, None, :], gamma.reshape(N, n, n * n)).reshape(N, n, n)
        # Gamma^k_im Gamma^m_kj: both factors come from the same transposed
        # view, reshaped as X[i,(k,m)] = gamma[k,i,m] and Y[(k,m),j] = gamma[m,k,j]
        gt = np.ascontiguousarray(gamma.transpose(0, 2, 1, 3))
        g2b = np.matmul(gt.reshape(N, n, n * n), gt.reshape(N, n * n, n))

        ric = p1 - p2 + g2a - g2b
        return 0.5 * (ric + ric.transpose(0, 2, 1))

    @cached_property
    def scalar_flat(self) -> np.ndarray:
        return np.einsum("xij,xij->x", self.G_inv, self.ricci_flat)

    @cached_property
    def ricci_norm_flat(self) -> np.ndarray:
        """|Ric|_g with indices raised by g."""
        M = np.matmul(self.G_inv, self.ricci_flat)
        return np.sqrt(np.maximum(np.einsum("xij,xji->x", M, M), 0.0))

    @cached_property
    def riemann_norm_flat(self) -> np.ndarray:
        """|Rm|_g, exact for n <= 3 where the Weyl tensor vanishes."""
        if self.n == 2:
            return np.abs(self.scalar_flat)
        if self.n == 3:
            val = 4.0 * self.ricci_norm_flat**2 - self.scalar_flat**2
            return np.sqrt(np.maximum(val, 0.0))
        raise ValueError("the full curvature-tensor norm is only computed for n <= 3")


def ricci(g: SymTensorField, backend: DerivativeBackend = SPECTRAL) -> SymTensorField:
    """Ricci tensor of a full metric g by the Christoffel-symbol formula."""
    work = _CurvatureWork(g, backend)
    return _sym_from_flat(g.grid, work.ricci_flat)


def scalar_curvature(g: SymTensorField, backend: DerivativeBackend = SPECTRAL) -> ScalarField:
    work = _CurvatureWork(g, backend)
    return ScalarField(g.grid, work.scalar_flat.reshape(g.grid.shape))


def curvature_invariants(g: SymTensorField, backend: DerivativeBackend = SPECTRAL):
    """(R, |Ric|_g, |Rm|_g) scalar fields of a full metric, computed together."""
    work = _CurvatureWork(g, backend)
    shape = g.grid.shape
    return (
        ScalarField(g.grid, work.scalar_flat.reshape(shape)),
        ScalarField(g.grid, work.ricci_norm_flat.reshape(shape)),
        ScalarField(g.grid, work.riemann_norm_flat.reshape(shape)),
    )


def metric_of_perturbation(h: SymTensorField) -> SymTensorField:
    """g = g_eucl + h as a full metric field."""
    vals = h.values.copy()
    n = h.grid.n
    for c, (i, j) in enumerate(sym_index_pairs(n)):
        if i == j:
            vals[c] = vals[c] + 1.0
    return SymTensorField(h.grid, vals)


def perturbation_of_metric(g: SymTensorField) -> SymTensorField:
    vals = g.values.copy()
    n = g.grid.n
    for c, (i, j) in enumerate(sym_index_pairs(n)):
        if i == j:
            vals[c] = vals[c] - 1.0
    return SymTensorField(g.grid, vals)
