"""Parameter-domain grids, discrete maps and tensor fields, derivatives, norms.

Node arrays are laid out row-major with the grid axes leading, e.g. a map into
R^3 on an n1 x n2 grid has shape (n1, n2, 3).  Derivatives use second-order
central stencils at interior nodes and second-order one-sided stencils at the
boundary, so they are exact on quadratics.  Quadrature is tensor-product
trapezoidal, collocated with the derivative nodes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BadExponent, GridMismatch, UnsupportedTarget
from .geometry import MetricChart, spd_sqrt_det, sqrt_and_inv_sqrt

BINARY_MAGIC = b"IMLAB001"


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid on an axis-aligned box.

    spacing = extent / (count - 1) per axis; at least 4 nodes per axis so the
    one-sided boundary stencils have room.
    """

    counts: tuple
    extents: tuple
    origin: tuple = None

    def __post_init__(self):
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        extents = tuple(float(e) for e in np.atleast_1d(self.extents))
        origin = self.origin
        if origin is None:
            origin = (0.0,) * len(counts)
        origin = tuple(float(o) for o in np.atleast_1d(origin))
        if not (1 <= len(counts) <= 2):
            raise ValueError("grid dimension must be 1 or 2")
        if len(extents) != len(counts) or len(origin) != len(counts):
            raise ValueError("counts, extents and origin must have equal length")
        if any(c < 4 for c in counts):
            raise ValueError("need at least 4 nodes per axis")
        if any(e <= 0 for e in extents):
            raise ValueError("extents must be positive")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> tuple:
        return tuple(e / (c - 1) for e, c in zip(self.extents, self.counts))

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.counts))

    def axes(self):
        return [o + np.arange(c) * h
                for o, c, h in zip(self.origin, self.counts, self.spacing)]

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (*counts, dim)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def same_as(self, other) -> bool:
        return (self.counts == other.counts and self.extents == other.extents
                and self.origin == other.origin)


def _check_in_domain(values, target: MetricChart, what: str):
    lo = target.domain[:, 0] - 1e-12
    hi = target.domain[:, 1] + 1e-12
    if np.any(values < lo) or np.any(values > hi):
        raise ValueError(f"{what} values leave the target chart domain")


@dataclass(frozen=True)
class DiscreteImmersion:
    """Node samples of a map into a (d+1)-dimensional target chart."""

    grid: Grid
    values: np.ndarray
    target: MetricChart

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = self.grid.counts + (self.grid.dim + 1,)
        if v.shape != expected:
            raise ValueError(f"immersion values have shape {v.shape}, expected {expected}")
        if self.target.dim != self.grid.dim + 1:
            raise ValueError("target chart dimension must be grid dim + 1")
        _check_in_domain(v, self.target, "immersion")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class DirectorField:
    """Footpoint map plus a tangent vector at each footpoint (coordinates of TN)."""

    grid: Grid
    foot: np.ndarray
    vec: np.ndarray
    target: MetricChart

    def __post_init__(self):
        f = np.asarray(self.foot, dtype=float)
        v = np.asarray(self.vec, dtype=float)
        expected = self.grid.counts + (self.grid.dim + 1,)
        if f.shape != expected or v.shape != expected:
            raise ValueError("director foot/vec have wrong shape")
        if not np.all(np.isfinite(v)):
            raise ValueError("director vectors must be finite")
        _check_in_domain(f, self.target, "director foot")
        object.__setattr__(self, "foot", f)
        object.__setattr__(self, "vec", v)


@dataclass(frozen=True)
class NormalField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass(frozen=True)
class JacobianField:
    """Node array of (d+1) x d matrices d_i f^alpha."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = self.grid.counts + (self.grid.dim + 1, self.grid.dim)
        if v.shape != expected:
            raise ValueError(f"jacobian values have shape {v.shape}, expected {expected}")
        if not np.all(np.isfinite(v)):
            raise ValueError("jacobian entries must be finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ShapeField:
    """Node array of (1,1)-tensors S^j_i, values[..., j, i]."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        d = self.grid.dim
        expected = self.grid.counts + (d, d)
        if v.shape != expected:
            raise ValueError(f"shape-field values have shape {v.shape}, expected {expected}")
        object.__setattr__(self, "values", v)

    def sup_norm(self, g: Optional[MetricChart] = None) -> float:
        """Max over nodes of the operator norm (g-weighted when g is given)."""
        S = self.values
        if g is not None and not g.is_constant:
            gv = g.eval(self.grid.nodes())
            gs, gsi = sqrt_and_inv_sqrt(gv)
            S = gs @ S @ gsi
        elif g is not None and g.is_constant:
            gs, gsi = sqrt_and_inv_sqrt(g.constant)
            S = gs @ S @ gsi
        s = np.linalg.svd(S, compute_uv=False)
        return float(np.max(s[..., 0]))

    def symmetry_defect(self, g: MetricChart) -> float:
        """Max asymmetry of the second fundamental form II = g S."""
        gv = g.eval(self.grid.nodes())
        II = gv @ self.values
        return float(np.max(np.abs(II - np.swapaxes(II, -1, -2))))


@dataclass(frozen=True)
class CompatibilityReport:
    gauss_residual: np.ndarray
    codazzi_residual: np.ndarray
    tolerance: np.ndarray
    passed: bool

    @property
    def max_gauss(self) -> float:
        return float(np.max(self.gauss_residual))

    @property
    def max_codazzi(self) -> float:
        return float(np.max(self.codazzi_residual))


# ---------------------------------------------------------------------------
# finite-difference stencils


def axis_derivative(values, axis: int, spacing: float) -> np.ndarray:
    """d/dx_axis of a node array: central interior, one-sided O(h^2) boundary.

    The boundary stencils use five points so their leading error term equals
    the interior one (+ h^2 f'''/6).  A uniform error coefficient keeps the
    error field of derived quantities smooth up to the boundary, which is what
    lets nested derivatives (curvature of pullback data, normal derivatives)
    converge at second order in the max norm.  Four-node axes fall back to the
    classical three-point stencil.
    """
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * spacing)
    if v.shape[0] >= 5:
        out[0] = (-5.0 * v[0] + 11.0 * v[1] - 10.0 * v[2] + 5.0 * v[3]
                  - v[4]) / (2.0 * spacing)
        out[-1] = (5.0 * v[-1] - 11.0 * v[-2] + 10.0 * v[-3] - 5.0 * v[-4]
                   + v[-5]) / (2.0 * spacing)
    else:
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * spacing)
        out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * spacing)
    return np.moveaxis(out, 0, axis)


def axis_second_derivative(values, axis: int, spacing: float) -> np.ndarray:
    """d^2/dx_axis^2: central interior, 4-point one-sided O(h^2) boundary.

    Direct second-derivative stencils avoid the order loss of nesting
    one-sided first-derivative stencils at the boundary.
    """
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    out = np.empty_like(v)
    h2 = spacing * spacing
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return np.moveaxis(out, 0, axis)


def axis_derivative_adjoint(bar, axis: int, spacing: float) -> np.ndarray:
    """Adjoint of :func:`axis_derivative` under the unweighted node dot product."""
    b = np.moveaxis(np.asarray(bar, dtype=float), axis, 0)
    out = np.zeros_like(b)
    out[:-2] -= b[1:-1]
    out[2:] += b[1:-1]
    if b.shape[0] >= 5:
        for k, c in enumerate((-5.0, 11.0, -10.0, 5.0, -1.0)):
            out[k] += c * b[0]
            out[-1 - k] += -c * b[-1]
    else:
        out[0] += -3.0 * b[0]
        out[1] += 4.0 * b[0]
        out[2] += -b[0]
        out[-1] += 3.0 * b[-1]
        out[-2] += -4.0 * b[-1]
        out[-3] += b[-1]
    out /= (2.0 * spacing)
    return np.moveaxis(out, 0, axis)


def jacobian_array(values, grid: Grid) -> np.ndarray:
    """Raw Jacobian d_i f^alpha of a node array, shape (*counts, comps, dim)."""
    values = np.asarray(values, dtype=float)
    cols = [axis_derivative(values, i, grid.spacing[i]) for i in range(grid.dim)]
    return np.stack(cols, axis=-1)


def jacobian_adjoint(bar, grid: Grid) -> np.ndarray:
    """Adjoint of :func:`jacobian_array`: scatter (*counts, comps, dim) back."""
    bar = np.asarray(bar, dtype=float)
    out = np.zeros(bar.shape[:-1])
    for i in range(grid.dim):
        out += axis_derivative_adjoint(bar[..., i], i, grid.spacing[i])
    return out


def fd_jacobian(f, grid: Optional[Grid] = None) -> JacobianField:
    """Jacobian field of a discrete map (immersion, normal field, or raw array)."""
    if grid is None:
        grid = f.grid
        values = f.values
    else:
        values = f
    return JacobianField(grid, jacobian_array(values, grid))


# ---------------------------------------------------------------------------
# quadrature and norms


def quadrature_weights(grid: Grid) -> np.ndarray:
    """Tensor-product trapezoidal node weights."""
    w = np.ones(grid.counts)
    for i, (c, h) in enumerate(zip(grid.counts, grid.spacing)):
        line = np.full(c, h)
        line[0] = line[-1] = h / 2.0
        shape = [1] * grid.dim
        shape[i] = c
        w = w * line.reshape(shape)
    return w


def volume_density(grid: Grid, g: Optional[MetricChart]) -> np.ndarray:
    """sqrt(det g) at the nodes (1 when no metric is given)."""
    if g is None:
        return np.ones(grid.counts)
    if g.dim != grid.dim:
        raise ValueError("volume metric dimension must match the grid")
    return spd_sqrt_det(g.eval(grid.nodes()))


def integrate_density(density, grid: Grid, g: Optional[MetricChart] = None) -> float:
    """Quadrature of a node scalar field against the Riemannian volume.

    Summation order is fixed (row-major numpy reduction) so results are
    reproducible bit-for-bit.
    """
    density = np.asarray(density, dtype=float)
    if density.shape != grid.counts:
        raise ValueError("density shape does not match the grid")
    return float(np.sum(quadrature_weights(grid) * density * volume_density(grid, g)))


def lp_norm(values, p: float, g: Optional[MetricChart], grid: Grid) -> float:
    """(integral of |values|^p dVol_g)^(1/p) with trapezoidal weights."""
    if p < 1:
        raise BadExponent("p must be >= 1")
    values = np.asarray(values, dtype=float)
    return integrate_density(np.abs(values) ** p, grid, g) ** (1.0 / p)


def w1p_distance(f: DiscreteImmersion, f0: DiscreteImmersion, p: float,
                 g: Optional[MetricChart] = None) -> float:
    """Sobolev W^{1,p} distance of two maps into a Euclidean target.

    (||f - f0||_p^p + ||Df - Df0||_p^p)^(1/p), with pointwise Euclidean /
    Frobenius norms and quadrature against dVol_g.
    """
    if p < 1:
        raise BadExponent("p must be >= 1")
    if not f.grid.same_as(f0.grid):
        raise GridMismatch("fields live on different grids")
    if not (f.target.is_constant and f0.target.is_constant):
        raise UnsupportedTarget("W^{1,p} distance needs a Euclidean target")
    diff = np.linalg.norm(f.values - f0.values, axis=-1)
    jdiff = jacobian_array(f.values, f.grid) - jacobian_array(f0.values, f0.grid)
    jnorm = np.sqrt(np.sum(jdiff ** 2, axis=(-2, -1)))
    term0 = lp_norm(diff, p, g, f.grid) ** p
    term1 = lp_norm(jnorm, p, g, f.grid) ** p
    return (term0 + term1) ** (1.0 / p)


# ---------------------------------------------------------------------------
# serialization: CSV (17 significant digits) and raw binary dumps


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_node_csv(path, grid: Grid, values, names: Optional[Sequence[str]] = None) -> None:
    """One row per node: index tuple, then components, 17 significant digits.

    Trailing (non-grid) axes of ``values`` are flattened into components.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[:grid.dim] != grid.counts:
        raise ValueError("values do not live on the given grid")
    flat = values.reshape(grid.num_nodes, -1)
    comp = flat.shape[1]
    if names is None:
        names = [f"c{k}" for k in range(comp)]
    if len(names) != comp:
        raise ValueError("wrong number of component names")
    header = ",".join([f"i{a}" for a in range(grid.dim)] + list(names))
    idx = np.stack(np.meshgrid(*[np.arange(c) for c in grid.counts],
                               indexing="ij"), axis=-1).reshape(grid.num_nodes, grid.dim)
    lines = [header]
    for ind, row in zip(idx, flat):
        lines.append(",".join([str(int(k)) for k in ind] + [_fmt(v) for v in row]))
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_node_csv(path) -> np.ndarray:
    """Inverse of :func:`save_node_csv`; component axis kept even when single."""
    with open(path, "r", encoding="utf-8") as fh:
        rows = fh.read().strip().split("\n")
    header = rows[0].split(",")
    n_idx = sum(1 for h in header if h.startswith("i") and h[1:].isdigit())
    data = [r.split(",") for r in rows[1:]]
    idx = np.array([[int(c) for c in r[:n_idx]] for r in data])
    vals = np.array([[float(c) for c in r[n_idx:]] for r in data])
    shape = tuple(idx.max(axis=0) + 1) + (vals.shape[1],)
    out = np.empty(shape)
    out[tuple(idx.T)] = vals
    return out


def save_binary(path, values) -> None:
    """Little-endian float64 dump, row-major, magic header + uint64 shape."""
    values = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", values.ndim))
        fh.write(struct.pack(f"<{values.ndim}Q", *values.shape))
        fh.write(values.tobytes())


def load_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != BINARY_MAGIC:
            raise ValueError("bad magic header in binary field dump")
        (ndim,) = struct.unpack("<Q", fh.read(8))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(shape).copy()
