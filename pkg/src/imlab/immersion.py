"""Unit normals, pullback metrics, and shape operators of discrete immersions.

The oriented unit normal is computed pointwise: the Jacobian columns are moved
to the target-orthonormal frame by the metric square root, the Euclidean
generalized cross product of the columns is normalized, and the result is
mapped back.  The cross product uses the closed forms for d = 1 (rotation by
90 degrees) and d = 2 (cofactor expansion); both make the frame
(df(e_1), ..., df(e_d), n) positively oriented by construction.
"""

from __future__ import annotations

import numpy as np

from .errors import RankDeficient
from .fields import (DirectorField, DiscreteImmersion, JacobianField,
                     NormalField, ShapeField, jacobian_array)
from .geometry import RANK_RTOL, christoffel, sqrt_and_inv_sqrt


def _cross_columns(B):
    """Euclidean normal direction to the column span, oriented positively.

    B has shape (..., d+1, d) with d in {1, 2}.  det([B | result]) > 0 holds
    automatically for these closed forms.
    """
    d = B.shape[-1]
    if d == 1:
        b = B[..., 0]
        return np.stack([-b[..., 1], b[..., 0]], axis=-1)
    if d == 2:
        return np.cross(B[..., 0], B[..., 1])
    raise ValueError("generalized cross product implemented for d in {1, 2}")


def _frame_and_rank_check(B):
    s = np.linalg.svd(B, compute_uv=False)
    bad = s[..., -1] <= RANK_RTOL * np.maximum(s[..., 0], 1e-300)
    if np.any(bad):
        idx = tuple(np.argwhere(bad)[0])
        raise RankDeficient(f"differential is rank deficient at node {idx}")


def unit_normal(f: DiscreteImmersion) -> NormalField:
    """Oriented h-unit normal field of a full-rank discrete immersion."""
    J = jacobian_array(f.values, f.grid)
    H = f.target.eval(f.values)
    Hs, Hsi = sqrt_and_inv_sqrt(H)
    B = Hs @ J
    _frame_and_rank_check(B)
    c = _cross_columns(B)
    c = c / np.linalg.norm(c, axis=-1, keepdims=True)
    n = np.einsum("...ab,...b->...a", Hsi, c)
    return NormalField(f.grid, n)


def pullback_metric(f: DiscreteImmersion) -> np.ndarray:
    """First fundamental form (f*h)_ij at the nodes, shape (*counts, d, d)."""
    J = jacobian_array(f.values, f.grid)
    H = f.target.eval(f.values)
    G = np.einsum("...ai,...ab,...bj->...ij", J, H, J)
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def covariant_normal_derivative(f: DiscreteImmersion, n: NormalField) -> JacobianField:
    """Pullback-connection derivative of the normal:
    (grad n)_i^a = d_i n^a + Gamma^a_bc(f) d_i f^b n^c.
    """
    J = jacobian_array(f.values, f.grid)
    Dn = jacobian_array(n.values, f.grid)
    if not f.target.is_constant:
        Gam = christoffel(f.target, f.values).components
        Dn = Dn + np.einsum("...abc,...bi,...c->...ai", Gam, J, n.values)
    return JacobianField(f.grid, Dn)


def shape_operator(f: DiscreteImmersion) -> ShapeField:
    """Shape operator extracted from grad n = -df o S by least squares.

    Normal equations with the pullback Gram matrix: the discrete grad n is
    never exactly tangential, so S is the minimizer of |grad n + df S|_h.
    """
    n = unit_normal(f)
    W = covariant_normal_derivative(f, n).values
    J = jacobian_array(f.values, f.grid)
    H = f.target.eval(f.values)
    G = np.einsum("...ai,...ab,...bj->...ij", J, H, J)
    rhs = np.einsum("...ai,...ab,...bj->...ij", J, H, W)
    S = -np.linalg.solve(G, rhs)
    return ShapeField(f.grid, S)


def normal_director(f: DiscreteImmersion) -> DirectorField:
    """Director field with foot f and vector the oriented unit normal of f."""
    n = unit_normal(f)
    return DirectorField(f.grid, f.values, n.values, f.target)
