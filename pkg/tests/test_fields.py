"""Grids, stencils, quadrature, Sobolev distances, serialization."""

import numpy as np
import pytest

from helpers import convergence_orders
from imlab.errors import BadExponent, GridMismatch
from imlab.fields import (DiscreteImmersion, Grid, axis_derivative,
                          axis_derivative_adjoint, axis_second_derivative,
                          fd_jacobian, integrate_density, jacobian_array,
                          load_binary, load_node_csv, lp_norm, quadrature_weights,
                          save_binary, save_node_csv, w1p_distance)
from imlab.geometry import chart


class TestGrid:
    def test_spacing_and_nodes(self):
        g = Grid((5, 9), (2.0, 1.0), (1.0, -0.5))
        assert g.spacing == (0.5, 0.125)
        nodes = g.nodes()
        assert nodes.shape == (5, 9, 2)
        assert nodes[0, 0, 0] == 1.0 and nodes[-1, -1, 1] == 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            Grid((3, 5), (1.0, 1.0))
        with pytest.raises(ValueError):
            Grid((5, 5), (0.0, 1.0))
        with pytest.raises(ValueError):
            Grid((5, 5, 5), (1.0, 1.0, 1.0))


class TestStencils:
    def test_exact_on_affine(self):
        g = Grid((7, 5), (1.2, 0.8))
        x = g.nodes()
        A = np.array([[1.0, 2.0], [-0.5, 3.0], [0.25, -1.0]])
        f = x @ A.T + np.array([3.0, -1.0, 0.5])
        J = jacobian_array(f, g)
        assert np.max(np.abs(J - A)) < 1e-12

    def test_exact_on_quadratic(self):
        g = Grid((9,), (1.0,))
        x = g.nodes()[..., 0]
        f = np.stack([x ** 2, 0 * x, 0 * x], axis=-1)
        J = jacobian_array(f, g)
        assert np.max(np.abs(J[..., 0, 0] - 2 * x)) < 1e-13

    def test_convergence_order_on_sine(self):
        errs = []
        for n in (17, 33, 65):
            g = Grid((n,), (1.0,))
            x = g.nodes()[..., 0]
            J = jacobian_array(np.sin(x)[..., None], g)
            errs.append(np.max(np.abs(J[..., 0, 0] - np.cos(x))))
        assert np.all(convergence_orders(errs) >= 1.9)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        g = Grid((6, 7), (1.0, 2.0))
        u = rng.normal(size=g.counts + (3,))
        v = rng.normal(size=g.counts + (3,))
        for a, b in ((2.0, 0.5), (1.7, -0.3)):
            J = jacobian_array(a * u + b * v, g)
            K = a * jacobian_array(u, g) + b * jacobian_array(v, g)
            assert np.max(np.abs(J - K)) < 1e-13

    def test_adjoint_identity(self):
        rng = np.random.default_rng(1)
        for axis, shape in ((0, (9, 5)), (1, (5, 8)), (0, (11,))):
            u = rng.normal(size=shape)
            v = rng.normal(size=shape)
            h = 0.37
            lhs = np.sum(axis_derivative(u, axis, h) * v)
            rhs = np.sum(u * axis_derivative_adjoint(v, axis, h))
            assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))

    def test_second_derivative_exact_on_cubics(self):
        g = Grid((9,), (2.0,))
        x = g.nodes()[..., 0]
        f = x ** 3 - 2 * x ** 2 + x
        d2 = axis_second_derivative(f, 0, g.spacing[0])
        assert np.max(np.abs(d2 - (6 * x - 4))) < 1e-11

    def test_fd_jacobian_wrapper(self):
        g = Grid((5, 5), (1.0, 1.0))
        f = DiscreteImmersion(g, np.concatenate([g.nodes(), np.zeros((5, 5, 1))],
                                                axis=-1), chart("euclidean", 3))
        J = fd_jacobian(f)
        assert J.values.shape == (5, 5, 3, 2)


class TestQuadrature:
    def test_weights_sum_to_volume(self):
        g = Grid((9, 17), (2.0, 3.0))
        assert np.sum(quadrature_weights(g)) == pytest.approx(6.0, abs=1e-13)

    def test_constant_exactness(self):
        g = Grid((9, 9), (1.0, 1.0), (0.6, 0.0))
        sphere = chart("sphere")
        for p in (1.0, 2.0, 3.5):
            vol = integrate_density(np.ones(g.counts), g, sphere)
            got = lp_norm(np.full(g.counts, 2.5), p, sphere, g)
            assert abs(got - 2.5 * vol ** (1.0 / p)) < 1e-12 * max(1.0, vol)

    def test_sine_l2_norm(self):
        g = Grid((64, 64), (1.0, 1.0))
        f = np.sin(np.pi * g.nodes()[..., 0])
        got = lp_norm(f, 2.0, chart("euclidean", 2), g)
        assert abs(got - 1.0 / np.sqrt(2.0)) < 1e-3

    def test_refinement_order(self):
        # non-periodic integrand so the trapezoidal error is genuinely O(h^2)
        errs = []
        exact = np.sqrt((np.e ** 2 - 1.0) / 2.0)
        for n in (9, 17, 33):
            g = Grid((n,), (1.0,))
            f = np.exp(g.nodes()[..., 0])
            errs.append(abs(lp_norm(f, 2.0, None, g) - exact))
        assert np.all(convergence_orders(errs) >= 1.9)

    def test_bad_exponent(self):
        g = Grid((5,), (1.0,))
        with pytest.raises(BadExponent):
            lp_norm(np.ones(5), 0.5, None, g)


class TestSobolevDistance:
    def _pair(self, n=33):
        g = Grid((n,), (1.0,))
        e2 = chart("euclidean", 2)
        base = np.stack([g.nodes()[..., 0], np.zeros(n)], axis=-1)
        return g, e2, DiscreteImmersion(g, base, e2)

    def test_zero_and_constant_shift(self):
        g, e2, f0 = self._pair()
        assert w1p_distance(f0, f0, 2.0) == 0.0
        c = np.array([0.3, -0.4])
        f = DiscreteImmersion(g, f0.values + c, e2)
        for p in (1.5, 2.0, 3.0):
            assert w1p_distance(f, f0, p) == pytest.approx(0.5, rel=1e-12)

    def test_wrinkle_against_fine_grid_oracle(self):
        n, k, eps = 20001, 3, 0.05
        g = Grid((n,), (1.0,))
        e2 = chart("euclidean", 2)
        t = g.nodes()[..., 0]
        f0 = DiscreteImmersion(g, np.stack([t, np.zeros(n)], axis=-1), e2)
        f = DiscreteImmersion(g, f0.values + eps * np.stack(
            [np.zeros(n), np.sin(2 * np.pi * k * t)], axis=-1), e2)
        exact = np.sqrt(eps ** 2 / 2 + eps ** 2 * (2 * np.pi * k) ** 2 / 2)
        assert abs(w1p_distance(f, f0, 2.0) - exact) < 1e-6

    def test_grid_mismatch(self):
        _, e2, f0 = self._pair(33)
        _, _, f1 = self._pair(17)
        with pytest.raises(GridMismatch):
            w1p_distance(f0, f1, 2.0)


class TestSerialization:
    def test_csv_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        g = Grid((5, 7), (1.0, 2.0))
        vals = rng.normal(size=g.counts + (3,))
        path = tmp_path / "field.csv"
        save_node_csv(path, g, vals)
        back = load_node_csv(path)
        assert np.array_equal(back.reshape(vals.shape), vals)

    def test_binary_roundtrip_and_magic(self, tmp_path):
        rng = np.random.default_rng(4)
        vals = rng.normal(size=(4, 6, 3))
        path = tmp_path / "field.bin"
        save_binary(path, vals)
        assert open(path, "rb").read(8) == b"IMLAB001"
        assert np.array_equal(load_binary(path), vals)
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_binary(bad)
