"""Unit normals, pullback metrics, covariant derivatives, shape operators."""

import numpy as np
import pytest

from helpers import convergence_orders, random_rotation
from imlab.errors import RankDeficient
from imlab.fields import DiscreteImmersion, Grid, jacobian_array, lp_norm
from imlab.geometry import MetricChart, chart
from imlab.immersion import (covariant_normal_derivative, pullback_metric,
                             shape_operator, unit_normal)
from imlab.presets import get_preset

E3 = chart("euclidean", 3)


def _plane(grid, slope=0.0):
    x = grid.nodes()
    z = slope * x[..., 0]
    vals = np.stack([x[..., 0], x[..., 1], z], axis=-1)
    return DiscreteImmersion(grid, vals, E3)


def _grid(n=17, box=((0.0, 1.0), (0.0, 1.0))):
    return Grid((n, n), tuple(hi - lo for lo, hi in box), tuple(lo for lo, _ in box))


class TestUnitNormal:
    def test_flat_plane_orientation(self):
        n = unit_normal(_plane(_grid()))
        assert np.allclose(n.values, [0.0, 0.0, 1.0], atol=1e-14)

    def test_tilted_graph(self):
        n = unit_normal(_plane(_grid(), slope=1.0))
        expect = np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0)
        assert np.allclose(n.values, expect, atol=1e-12)

    def test_scaled_target_metric(self):
        h4 = MetricChart(dim=3, domain=[[-np.inf, np.inf]] * 3,
                         constant=4.0 * np.eye(3))
        grid = _grid()
        x = grid.nodes()
        f = DiscreteImmersion(grid, np.concatenate(
            [x, np.zeros(grid.counts + (1,))], axis=-1), h4)
        n = unit_normal(f)
        assert np.allclose(n.values, [0.0, 0.0, 0.5], atol=1e-13)

    def test_normalization_orthogonality_orientation(self):
        pre = get_preset("sphere-cap")
        grid = pre.grid((17, 17))
        f = pre.reference_immersion(grid)
        n = unit_normal(f)
        H = f.target.eval(f.values)
        norms = np.einsum("...ab,...a,...b->...", H, n.values, n.values)
        assert np.max(np.abs(norms - 1.0)) < 1e-10
        J = jacobian_array(f.values, grid)
        ip = np.einsum("...ab,...ai,...b->...i", H, J, n.values)
        colnorm = np.sqrt(np.einsum("...ab,...ai,...bi->...i", H, J, J))
        assert np.max(np.abs(ip) / colnorm) < 1e-8
        frame = np.concatenate([J, n.values[..., None]], axis=-1)
        assert np.all(np.linalg.det(frame) > 0)

    def test_rank_deficient_raises(self):
        grid = _grid(5)
        x = grid.nodes()
        vals = np.stack([x[..., 0], 0.0 * x[..., 1], 0.0 * x[..., 0]], axis=-1)
        with pytest.raises(RankDeficient):
            unit_normal(DiscreteImmersion(grid, vals, E3))

    def test_curved_target_normal(self):
        # curve in the round-sphere chart: h-unit, h-orthogonal, oriented
        from imlab.geometry import chart, sqrt_and_inv_sqrt
        grid = Grid((33,), (1.0,))
        t = grid.nodes()[..., 0]
        vals = np.stack([0.8 + 0.3 * np.sin(2 * t), t], axis=-1)
        f = DiscreteImmersion(grid, vals, chart("sphere"))
        n = unit_normal(f)
        H = f.target.eval(f.values)
        norms = np.einsum("...ab,...a,...b->...", H, n.values, n.values)
        assert np.max(np.abs(norms - 1.0)) < 1e-10
        J = jacobian_array(f.values, grid)
        ip = np.einsum("...ab,...a,...b->...", H, J[..., 0], n.values)
        assert np.max(np.abs(ip)) < 1e-8 * np.max(np.abs(J))
        Hs, _ = sqrt_and_inv_sqrt(H)
        frame = np.concatenate([Hs @ J, (Hs @ n.values[..., None])], axis=-1)
        assert np.all(np.linalg.det(frame) > 0)


class TestPullbackMetric:
    def test_identity_chart(self):
        pb = pullback_metric(_plane(_grid()))
        assert np.allclose(pb, np.eye(2), atol=1e-13)

    def test_scaling(self):
        grid = _grid()
        lam = 1.7
        f = DiscreteImmersion(grid, lam * _plane(grid).values, E3)
        assert np.allclose(pullback_metric(f), lam ** 2 * np.eye(2), atol=1e-12)

    def test_sphere_first_fundamental_form(self):
        pre = get_preset("sphere-cap")
        grid = pre.grid((33, 33))
        f = pre.reference_immersion(grid)
        th = grid.nodes()[..., 0]
        expect = np.zeros(grid.counts + (2, 2))
        expect[..., 0, 0] = 1.0
        expect[..., 1, 1] = np.sin(th) ** 2
        assert np.max(np.abs(pullback_metric(f) - expect)) < 1e-3

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(9)
        grid = _grid(9)
        f = _plane(grid, slope=0.4)
        R = random_rotation(rng, 3)
        b = rng.normal(size=3)
        moved = DiscreteImmersion(grid, f.values @ R.T + b, E3)
        assert np.max(np.abs(pullback_metric(moved) - pullback_metric(f))) < 1e-12


class TestCovariantNormalDerivative:
    def test_flat_plane_zero(self):
        f = _plane(_grid())
        W = covariant_normal_derivative(f, unit_normal(f))
        assert np.max(np.abs(W.values)) < 1e-13

    def test_unit_sphere_inward_normal(self):
        pre = get_preset("sphere-cap")
        grid = pre.grid((33, 33))
        f = pre.reference_immersion(grid)
        n = unit_normal(f)
        # oriented normal of this parametrization is inward: n = -f (FD accuracy)
        assert np.max(np.abs(n.values + f.values)) < 1e-4
        W = covariant_normal_derivative(f, n)
        J = jacobian_array(f.values, grid)
        assert np.max(np.abs(W.values + J)) < 1e-3

    def test_cylinder_weingarten(self):
        pre = get_preset("cylinder")
        grid = pre.grid((33, 33))
        f = pre.reference_immersion(grid)
        W = covariant_normal_derivative(f, unit_normal(f))
        J = jacobian_array(f.values, grid)
        r = 1.0
        assert np.max(np.abs(W.values[..., 0] + J[..., 0] / r)) < 1e-3
        assert np.max(np.abs(W.values[..., 1])) < 1e-10


class TestShapeOperator:
    def test_flat_plane_zero(self):
        S = shape_operator(_plane(_grid()))
        assert np.max(np.abs(S.values)) < 1e-12

    def test_unit_sphere_identity(self):
        pre = get_preset("sphere-cap")
        grid = pre.grid((33, 33))
        S = shape_operator(pre.reference_immersion(grid))
        assert np.max(np.abs(S.values - np.eye(2))) < 1e-3

    def test_cylinder_principal_curvatures(self):
        pre = get_preset("cylinder")
        grid = pre.grid((33, 33))
        S = shape_operator(pre.reference_immersion(grid))
        eig = np.linalg.eigvals(S.values)
        eig = np.sort(eig.real, axis=-1)
        assert np.max(np.abs(eig[..., 0])) < 1e-3
        assert np.max(np.abs(eig[..., 1] - 1.0)) < 1e-3

    def test_second_form_symmetry_order(self):
        pre = get_preset("sphere-cap")
        errs = []
        for n in (17, 33, 65):
            grid = pre.grid((n, n))
            f = pre.reference_immersion(grid)
            S = shape_operator(f)
            II = pullback_metric(f) @ S.values
            errs.append(np.max(np.abs(II - np.swapaxes(II, -1, -2))))
        assert errs[-1] < 1e-4
        assert np.all(convergence_orders(errs) >= 1.5)

    def test_weingarten_consistency_order(self):
        pre = get_preset("sphere-cap")
        errs = []
        for n in (17, 33, 65):
            grid = pre.grid((n, n))
            f = pre.reference_immersion(grid)
            n_field = unit_normal(f)
            W = covariant_normal_derivative(f, n_field)
            S = shape_operator(f)
            resid = W.values + jacobian_array(f.values, grid) @ S.values
            rnorm = np.sqrt(np.sum(resid ** 2, axis=(-2, -1)))
            errs.append(lp_norm(rnorm, 2.0, pre.g, grid))
        assert np.all(convergence_orders(errs) >= 1.9)
