"""Compatibility checking and reconstruction of immersions from (g, S).

For a Euclidean target the fundamental forms must satisfy the Gauss and
Codazzi identities (with II = g S):

    R_ijkl(g) = II_ik II_jl - II_il II_jk
    grad_i II_jk = grad_j II_ik

Both residuals are evaluated with the same grid stencils used everywhere else,
so they converge at second order for smooth compatible data.  Reconstruction
integrates the moving-frame system

    d_i f = E_i,   d_i E_j = Gamma^k_ij E_k + II_ij n,   d_i n = -E_j S^j_i

with classical fourth-order Runge-Kutta steps: first along the grid's first
axis through the anchor, then along the second axis per column.  The discrete
integration path is fixed (path independence holds only in the continuum).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import (AsymmetricShape, DegenerateCovariance, GridMismatch,
                     IncompatibleForms, NonSPDAnchor)
from .fields import (CompatibilityReport, DiscreteImmersion, Grid, ShapeField,
                     axis_derivative, axis_second_derivative, quadrature_weights)
from .geometry import (MetricChart, chart, christoffel, christoffel_from_values,
                       riemann_from_values)

COMPAT_SAFETY = 10.0


def _metric_node_values(g, grid: Grid) -> np.ndarray:
    if isinstance(g, MetricChart):
        return g.eval(grid.nodes())
    gv = np.asarray(g, dtype=float)
    d = grid.dim
    if gv.shape != grid.counts + (d, d):
        raise ValueError("tabulated metric has wrong shape for this grid")
    return gv


def _grid_partials(values, grid: Grid) -> np.ndarray:
    """Stack of axis derivatives with the derivative index leading the tensor axes."""
    der = [axis_derivative(values, i, grid.spacing[i]) for i in range(grid.dim)]
    return np.stack(der, axis=grid.dim)


def _grid_second_partials(values, grid: Grid) -> np.ndarray:
    """Second partials d_k d_l with two leading derivative indices.

    Same-axis entries use direct second-derivative stencils; mixed entries
    nest first-derivative stencils along distinct axes (which commute and
    keep second-order accuracy up to the boundary).
    """
    d = grid.dim
    h = grid.spacing
    cache = {}
    rows = []
    for k in range(d):
        cols = []
        for l in range(d):
            key = (min(k, l), max(k, l))
            if key not in cache:
                if k == l:
                    cache[key] = axis_second_derivative(values, k, h[k])
                else:
                    inner = axis_derivative(values, max(k, l), h[max(k, l)])
                    cache[key] = axis_derivative(inner, min(k, l), h[min(k, l)])
            cols.append(cache[key])
        rows.append(np.stack(cols, axis=d))
    return np.stack(rows, axis=d)


def _christoffel_partials(gv, dG, d2G) -> np.ndarray:
    """Partials d_k Gamma^a_bc assembled from metric derivatives.

    Avoids differencing the Christoffel field itself, whose error
    coefficients jump between boundary and interior stencils.
    """
    Ginv = np.linalg.inv(gv)
    dGinv = -np.einsum("...am,...kmn,...nd->...kad", Ginv, dG, Ginv)
    T = np.swapaxes(dG, -3, -2) + np.moveaxis(dG, -3, -1) - dG
    dT = np.swapaxes(d2G, -3, -2) + np.moveaxis(d2G, -3, -1) - d2G
    return 0.5 * (np.einsum("...kad,...dbc->...kabc", dGinv, T)
                  + np.einsum("...ad,...kdbc->...kabc", Ginv, dT))


def gauss_codazzi_residual(g, S: ShapeField, grid: Grid) -> CompatibilityReport:
    """Node-wise residuals of the Gauss and Codazzi identities for (g, S).

    ``g`` may be a metric chart (sampled at the nodes) or a node array of
    metric matrices.  The pass tolerance is 10 h^2 scaled by the local
    curvature magnitude, so discretized-but-compatible inputs pass while
    genuinely incompatible ones fail.
    """
    d = grid.dim
    gv = _metric_node_values(g, grid)
    Sv = S.values
    II = gv @ Sv
    h = max(grid.spacing)
    # same h^2 scaling as the compatibility gate: forms extracted from a
    # discrete immersion carry O(h^2) asymmetry that must pass
    asym = np.max(np.abs(II - np.swapaxes(II, -1, -2)))
    if asym > COMPAT_SAFETY * h * h * (1.0 + np.max(np.abs(II))):
        raise AsymmetricShape(f"g*S asymmetry {asym:.3e} exceeds tolerance")
    II = 0.5 * (II + np.swapaxes(II, -1, -2))
    if d == 1:
        zeros = np.zeros(grid.counts)
        tol = np.full(grid.counts, COMPAT_SAFETY * h * h)
        return CompatibilityReport(zeros, zeros.copy(), tol, True)

    dG = _grid_partials(gv, grid)
    Gam = christoffel_from_values(gv, dG)
    dGam = _christoffel_partials(gv, dG, _grid_second_partials(gv, grid))
    R = riemann_from_values(gv, Gam, dGam)
    gauss_tensor = R - (np.einsum("...ik,...jl->...ijkl", II, II)
                        - np.einsum("...il,...jk->...ijkl", II, II))
    gauss_res = np.max(np.abs(gauss_tensor), axis=(-4, -3, -2, -1))

    # grad_i II_jk = d_i II_jk - Gam^m_ij II_mk - Gam^m_ik II_jm
    dII = _grid_partials(II, grid)
    covII = (dII
             - np.einsum("...mij,...mk->...ijk", Gam, II)
             - np.einsum("...mik,...jm->...ijk", Gam, II))
    cod_tensor = covII - np.swapaxes(covII, -3, -2)
    codazzi_res = np.max(np.abs(cod_tensor), axis=(-3, -2, -1))

    local_scale = 1.0 + np.max(np.abs(R), axis=(-4, -3, -2, -1)) \
        + np.max(np.abs(II), axis=(-2, -1)) ** 2
    tol = COMPAT_SAFETY * h * h * local_scale
    passed = bool(np.all(gauss_res <= tol) and np.all(codazzi_res <= tol))
    return CompatibilityReport(gauss_res, codazzi_res, tol, passed)


# ---------------------------------------------------------------------------
# frame integration


def _midpoint_values(arr, axis: int) -> np.ndarray:
    """Cubic 4-point interpolation of node values at interval midpoints.

    Exact for cubic polynomials; one-sided at the first and last interval.
    """
    a = np.moveaxis(np.asarray(arr, dtype=float), axis, 0)
    n = a.shape[0]
    mid = np.empty((n - 1,) + a.shape[1:])
    if n >= 4:
        mid[1:-1] = (-a[:-3] + 9.0 * a[1:-2] + 9.0 * a[2:-1] - a[3:]) / 16.0
        c = np.array([0.3125, 0.9375, -0.3125, 0.0625])
        mid[0] = np.tensordot(c, a[:4], axes=(0, 0))
        mid[-1] = np.tensordot(c[::-1], a[-4:], axes=(0, 0))
    else:
        mid[:] = 0.5 * (a[:-1] + a[1:])
    return np.moveaxis(mid, 0, axis)


def _default_anchor_frame(g: MetricChart, anchor_point) -> tuple:
    """Transposed Cholesky factor of g(anchor) in the last-coordinate-zero plane."""
    ga = g.eval(anchor_point)
    try:
        L = np.linalg.cholesky(ga)
    except np.linalg.LinAlgError as exc:
        raise NonSPDAnchor("metric at the anchor is not positive definite") from exc
    d = g.dim
    E0 = np.zeros((d + 1, d))
    E0[:d, :] = L.T
    n0 = np.zeros(d + 1)
    n0[d] = 1.0
    return E0, n0


def _validate_frame(g: MetricChart, anchor_point, E0, n0):
    ga = g.eval(anchor_point)
    if np.max(np.abs(E0.T @ E0 - ga)) > 1e-8 * (1.0 + np.max(np.abs(ga))):
        raise NonSPDAnchor("anchor frame does not reproduce g(anchor)")
    if abs(n0 @ n0 - 1.0) > 1e-8 or np.max(np.abs(E0.T @ n0)) > 1e-8:
        raise NonSPDAnchor("anchor normal must be unit and orthogonal to the frame")
    if np.linalg.det(np.column_stack([E0, n0])) <= 0:
        raise NonSPDAnchor("anchor frame must be positively oriented")


def _frame_rhs(g: MetricChart, X, Sx, F, E, N, axis: int):
    """Batched right-hand side of the moving-frame system along one axis."""
    Gam = christoffel(g, X).components
    gx = g.eval(X)
    II = gx @ Sx
    dF = E[..., :, axis]
    dE = (np.einsum("...kj,...ck->...cj", Gam[..., :, axis, :], E)
          + N[..., :, None] * II[..., axis, None, :])
    dN = -np.einsum("...ck,...k->...c", E, Sx[..., :, axis])
    return dF, dE, dN


def _rk4_march(g, axis, point_of, Snode, Smid, h, start, stop, F, E, N, out):
    """March the frame system from index ``start`` to ``stop`` along one axis.

    ``point_of(j)`` gives the batched coordinates at marching index j;
    ``Snode[j]``/``Smid[j]`` index the shape operator at nodes / midpoints
    (midpoint j sits between nodes j and j+1).  States are written into
    ``out`` (a list of per-index slots).
    """
    step = 1 if stop > start else -1
    j = start
    while j != stop:
        jn = j + step
        mid = j if step > 0 else jn
        hh = h * step
        Xa, Xm, Xb = point_of(j), point_of(j + 0.5 * step), point_of(jn)
        Sa, Sm, Sb = Snode[j], Smid[mid], Snode[jn]

        k1 = _frame_rhs(g, Xa, Sa, F, E, N, axis)
        F1, E1, N1 = F + 0.5 * hh * k1[0], E + 0.5 * hh * k1[1], N + 0.5 * hh * k1[2]
        k2 = _frame_rhs(g, Xm, Sm, F1, E1, N1, axis)
        F2, E2, N2 = F + 0.5 * hh * k2[0], E + 0.5 * hh * k2[1], N + 0.5 * hh * k2[2]
        k3 = _frame_rhs(g, Xm, Sm, F2, E2, N2, axis)
        F3, E3, N3 = F + hh * k3[0], E + hh * k3[1], N + hh * k3[2]
        k4 = _frame_rhs(g, Xb, Sb, F3, E3, N3, axis)

        F = F + hh / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        E = E + hh / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        N = N + hh / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        out[jn] = (F, E, N)
        j = jn


def integrate_frame(g: MetricChart, S: ShapeField, grid: Grid,
                    anchor_index: Optional[tuple] = None,
                    frame: Optional[tuple] = None,
                    return_frame: bool = False):
    """Reconstruct the Euclidean-target immersion carrying (g, S).

    The anchor frame defaults to the transposed Cholesky factor of g(anchor)
    embedded in the last-coordinate plane with the normal on the last axis;
    pass ``frame=(E0, n0)`` for a custom admissible frame.  With
    ``return_frame`` the integrated tangent frame and normal node arrays are
    returned alongside the immersion.
    """
    report = gauss_codazzi_residual(g, S, grid)
    if not report.passed:
        raise IncompatibleForms(
            f"Gauss residual {report.max_gauss:.3e}, "
            f"Codazzi residual {report.max_codazzi:.3e} exceed tolerance")
    d = grid.dim
    if anchor_index is None:
        anchor_index = (0,) * d
    anchor_index = tuple(int(i) for i in anchor_index)
    axes = grid.axes()
    anchor_point = np.array([axes[a][anchor_index[a]] for a in range(d)])
    if frame is None:
        E0, n0 = _default_anchor_frame(g, anchor_point)
    else:
        E0 = np.asarray(frame[0], dtype=float)
        n0 = np.asarray(frame[1], dtype=float)
        _validate_frame(g, anchor_point, E0, n0)

    Sv = S.values
    h = grid.spacing

    if d == 1:
        n0_count = grid.counts[0]
        i0 = anchor_index[0]
        slots = [None] * n0_count
        slots[i0] = (np.zeros((1, 2)), E0[None, ...], n0[None, ...])
        Smid = _midpoint_values(Sv, 0)

        def point_of(t):
            return np.array([[axes[0][0] + t * h[0]]])

        F, E, N = slots[i0]
        _rk4_march(g, 0, point_of, Sv, Smid, h[0], i0, n0_count - 1, F, E, N, slots)
        F, E, N = slots[i0]
        _rk4_march(g, 0, point_of, Sv, Smid, h[0], i0, 0, F, E, N, slots)
        values = np.stack([slots[i][0][0] for i in range(n0_count)])
        out = DiscreteImmersion(grid, values, chart("euclidean", 2))
        if return_frame:
            Earr = np.stack([slots[i][1][0] for i in range(n0_count)])
            Narr = np.stack([slots[i][2][0] for i in range(n0_count)])
            return out, Earr, Narr
        return out

    n1, n2 = grid.counts
    i0, j0 = anchor_index

    # first sweep: along axis 0 on the anchor row
    row_slots = [None] * n1
    row_slots[i0] = (np.zeros((1, 3)), E0[None, ...], n0[None, ...])
    Srow = Sv[:, j0]
    Smid_row = _midpoint_values(Srow, 0)

    def row_point(t):
        return np.array([[axes[0][0] + t * h[0], axes[1][j0]]])

    F, E, N = row_slots[i0]
    if i0 < n1 - 1:
        _rk4_march(g, 0, row_point, Srow, Smid_row, h[0], i0, n1 - 1, F, E, N, row_slots)
    if i0 > 0:
        _rk4_march(g, 0, row_point, Srow, Smid_row, h[0], i0, 0, F, E, N, row_slots)

    # second sweep: along axis 1, all columns in a single batch
    F0 = np.concatenate([row_slots[i][0] for i in range(n1)], axis=0)
    E0b = np.concatenate([row_slots[i][1] for i in range(n1)], axis=0)
    N0 = np.concatenate([row_slots[i][2] for i in range(n1)], axis=0)
    col_slots = [None] * n2
    col_slots[j0] = (F0, E0b, N0)
    Snode = np.moveaxis(Sv, 1, 0)                # (n2, n1, d, d)
    Smid_col = np.moveaxis(_midpoint_values(Sv, 1), 1, 0)

    def col_point(t):
        y = axes[1][0] + t * h[1]
        return np.stack([axes[0], np.full(n1, y)], axis=-1)

    if j0 < n2 - 1:
        _rk4_march(g, 1, col_point, Snode, Smid_col, h[1], j0, n2 - 1, F0, E0b, N0, col_slots)
    if j0 > 0:
        _rk4_march(g, 1, col_point, Snode, Smid_col, h[1], j0, 0, F0, E0b, N0, col_slots)

    values = np.stack([col_slots[j][0] for j in range(n2)], axis=1)
    out = DiscreteImmersion(grid, values, chart("euclidean", 3))
    if return_frame:
        Earr = np.stack([col_slots[j][1] for j in range(n2)], axis=1)
        Narr = np.stack([col_slots[j][2] for j in range(n2)], axis=1)
        return out, Earr, Narr
    return out


# ---------------------------------------------------------------------------
# rigid alignment


def align_rigid(f: DiscreteImmersion, f0: DiscreteImmersion):
    """Optimal rotation and translation matching f0 to f (weighted Procrustes).

    Minimizes the quadrature-weighted squared L2 distance over proper
    rotations via the SVD of the cross-covariance.  Returns (R, b, aligned f0)
    with aligned values R f0 + b.
    """
    if not f.grid.same_as(f0.grid):
        raise GridMismatch("alignment requires a common grid")
    w = quadrature_weights(f.grid).reshape(-1)
    A = f.values.reshape(-1, f.values.shape[-1])
    B = f0.values.reshape(-1, f0.values.shape[-1])
    wsum = float(np.sum(w))
    mu = (w @ A) / wsum
    mu0 = (w @ B) / wsum
    C = (w[:, None] * (A - mu)).T @ (B - mu0)
    U, s, Vt = np.linalg.svd(C)
    if s[-2] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateCovariance("cross-covariance is rank deficient")
    sign = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    D = np.ones(len(s))
    D[-1] = sign
    R = (U * D) @ Vt
    b = mu - R @ mu0
    aligned = DiscreteImmersion(f0.grid, f0.values @ R.T + b, f0.target)
    return R, b, aligned


def alignment_residual(f: DiscreteImmersion, aligned: DiscreteImmersion) -> float:
    """Weighted L2 residual of an alignment."""
    w = quadrature_weights(f.grid)
    diff = np.sum((f.values - aligned.values) ** 2, axis=-1)
    return float(np.sqrt(np.sum(w * diff)))


# ---------------------------------------------------------------------------
# mesh export


def save_obj(path, f: DiscreteImmersion) -> None:
    """Wavefront OBJ export: row-major vertices, quad cells split in triangles."""
    if f.grid.dim != 2:
        raise ValueError("OBJ export supports surfaces only")
    n1, n2 = f.grid.counts
    verts = f.values.reshape(-1, 3)
    lines = []
    for v in verts:
        lines.append("v " + " ".join(format(c, ".17g") for c in v))

    def vid(i, j):
        return i * n2 + j + 1

    for i in range(n1 - 1):
        for j in range(n2 - 1):
            a, b = vid(i, j), vid(i + 1, j)
            c, dd = vid(i + 1, j + 1), vid(i, j + 1)
            lines.append(f"f {a} {b} {c}")
            lines.append(f"f {a} {c} {dd}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
