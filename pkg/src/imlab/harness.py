"""Experiment drivers: invariant checks, stability sweeps, reconstruction runs.

Every driver consumes an :class:`ExperimentConfig`, writes its artifacts
(CSV with 17 significant digits, JSON with sorted keys, optional OBJ/SVG)
atomically into the output directory, and returns the report dictionary.
Identical (config, seed) pairs produce byte-identical outputs: all randomness
flows through the config seed and summation orders are fixed.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import energy as en
from .errors import AsymmetricShape, BadConfig
from .fields import (DirectorField, DiscreteImmersion, Grid, ShapeField,
                     jacobian_array, load_node_csv, save_binary, save_node_csv,
                     w1p_distance)
from .geometry import chart, christoffel, dist_rotations, dist_stiefel
from .immersion import normal_director, pullback_metric, shape_operator, unit_normal
from .optimize import (OptimizeConfig, energy_gradient, minimize, objective,
                       pack_state, unpack_like)
from .presets import PRESETS, get_preset
from .reconstruct import align_rigid, gauss_codazzi_residual, integrate_frame, save_obj

CONFIG_VERSION = 1
EXPERIMENTS = ("energy", "check", "reconstruct", "minimize",
               "stability-sweep", "ratio-study")
RATIO_GUARD = 1e-12


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    preset: str = "cylinder"
    grid: tuple = (33, 33)
    p: float = 2.0
    frequencies: tuple = (2, 4, 8)
    amplitudes: tuple = (0.1, 0.05, 0.02, 0.01)
    seed: int = 0
    out: str = "out"
    start: str = "immersion"          # minimize: immersion | director
    start_amplitude: float = 0.02
    director_scale: float = 2.0
    num_random: int = 5               # corpus size for the check suite
    s_override: Optional[tuple] = None  # constant S replacing the preset's in checks
    custom: Optional[dict] = None     # preset "custom": {"g": ..., "s": ..., "box": ...}
    optimizer: OptimizeConfig = field(default_factory=OptimizeConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise BadConfig(f"unknown experiment {self.experiment!r}")
        if self.preset == "custom":
            if not isinstance(self.custom, dict) or \
                    not {"g", "s", "box"} <= set(self.custom):
                raise BadConfig("preset 'custom' needs a custom dict with g, s, box")
        elif self.preset not in PRESETS:
            raise BadConfig(f"unknown preset {self.preset!r}")
        grid = tuple(int(c) for c in np.atleast_1d(self.grid))
        object.__setattr__(self, "grid", grid)
        if any(c < 4 for c in grid):
            raise BadConfig("grid needs at least 4 nodes per axis")
        if self.p < 1:
            raise BadConfig("p must be >= 1")
        amps = tuple(float(a) for a in self.amplitudes)
        object.__setattr__(self, "amplitudes", amps)
        if self.experiment in ("stability-sweep", "ratio-study"):
            if any(a < 0 for a in amps) or any(
                    a2 >= a1 for a1, a2 in zip(amps, amps[1:])):
                raise BadConfig("amplitudes must be nonnegative and strictly decreasing")
        freqs = tuple(float(q) for q in self.frequencies)
        object.__setattr__(self, "frequencies", freqs)
        if self.start not in ("immersion", "director"):
            raise BadConfig("start must be 'immersion' or 'director'")
        if self.s_override is not None:
            object.__setattr__(self, "s_override",
                               tuple(tuple(float(v) for v in row)
                                     for row in self.s_override))


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    if d.pop("imlab_config", None) != CONFIG_VERSION:
        raise BadConfig(f"config must declare \"imlab_config\": {CONFIG_VERSION}")
    opt = d.pop("optimizer", None)
    kwargs = {}
    for key in ("experiment", "preset", "grid", "p", "frequencies", "amplitudes",
                "seed", "out", "start", "start_amplitude", "director_scale",
                "num_random", "s_override", "custom"):
        if key in d:
            kwargs[key] = d.pop(key)
    if d:
        raise BadConfig(f"unknown config keys: {sorted(d)}")
    if opt is not None:
        kwargs["optimizer"] = OptimizeConfig(**opt)
    if "experiment" not in kwargs:
        raise BadConfig("config must name an experiment")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# atomic output helpers


def _atomic_write(path, data) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_json(path, obj) -> None:
    _atomic_write(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(path, header: List[str], rows: List[List]) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for c in row:
            cells.append(c if isinstance(c, str) else _fmt(c))
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_svg_loglog(path, xs, ys, xlabel, ylabel, title) -> None:
    """Minimal deterministic log-log polyline plot."""
    W, H, m = 480, 360, 55
    pts = [(x, y) for x, y in zip(xs, ys) if x > 0 and y > 0 and math.isfinite(y)]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'viewBox="0 0 {W} {H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W/2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>']
    if pts:
        lx = [math.log10(p[0]) for p in pts]
        ly = [math.log10(p[1]) for p in pts]
        x0, x1 = min(lx), max(lx)
        y0, y1 = min(ly), max(ly)
        x1 += 1e-9 + 0.05 * (x1 - x0)
        x0 -= 1e-9 + 0.05 * (x1 - x0)
        y1 += 1e-9 + 0.05 * (y1 - y0)
        y0 -= 1e-9 + 0.05 * (y1 - y0)

        def sx(v):
            return m + (v - x0) / (x1 - x0) * (W - 2 * m)

        def sy(v):
            return H - m - (v - y0) / (y1 - y0) * (H - 2 * m)

        poly = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(lx, ly))
        parts.append(f'<polyline points="{poly}" fill="none" stroke="black" stroke-width="1.5"/>')
        for a, b in zip(lx, ly):
            parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="black"/>')
        for a, b, (xv, yv) in zip(lx, ly, pts):
            parts.append(f'<text x="{sx(a):.2f}" y="{sy(b)-8:.2f}" font-size="9" '
                         f'text-anchor="middle">{yv:.3g}</text>')
    parts.append(f'<rect x="{m}" y="{m}" width="{W-2*m}" height="{H-2*m}" '
                 f'fill="none" stroke="gray"/>')
    parts.append(f'<text x="{W/2:.1f}" y="{H-12}" text-anchor="middle" '
                 f'font-size="11">{xlabel} (log)</text>')
    parts.append(f'<text x="16" y="{H/2:.1f}" font-size="11" text-anchor="middle" '
                 f'transform="rotate(-90 16 {H/2:.1f})">{ylabel} (log)</text>')
    parts.append("</svg>")
    _atomic_write(path, "\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# random smooth fields and corpora (all randomness through explicit seeds)


def unit_coordinates(grid: Grid):
    x = grid.nodes()
    o = np.asarray(grid.origin)
    e = np.asarray(grid.extents)
    return (x - o) / e


def random_smooth_field(grid: Grid, ncomp: int, rng, modes: int = 3) -> np.ndarray:
    """Superposition of a few low-frequency tensor modes, O(1) amplitude."""
    xh = unit_coordinates(grid)
    out = np.zeros(grid.counts + (ncomp,))
    for c in range(ncomp):
        acc = np.zeros(grid.counts)
        for _ in range(modes):
            k = rng.integers(1, 4, size=grid.dim)
            phase = rng.uniform(0.0, 2.0 * np.pi, size=grid.dim)
            amp = rng.normal()
            term = np.full(grid.counts, amp)
            for a in range(grid.dim):
                term = term * np.sin(np.pi * k[a] * xh[..., a] + phase[a])
            acc += term
        out[..., c] = acc / modes
    return out


def random_surface_immersion(grid: Grid, rng, amplitude: float = 0.05) -> DiscreteImmersion:
    """Random full-rank graph-like surface in Euclidean 3-space."""
    base = np.concatenate([grid.nodes(), np.zeros(grid.counts + (1,))], axis=-1)
    values = base + amplitude * random_smooth_field(grid, 3, rng)
    return DiscreteImmersion(grid, values, chart("euclidean", 3))


def random_curve_immersion(grid: Grid, target, rng) -> DiscreteImmersion:
    """Random full-rank curve staying inside a 2-dimensional target chart."""
    t = unit_coordinates(grid)[..., 0]
    lo, hi = target.domain[:, 0], target.domain[:, 1]
    mid0 = 0.5 * (max(lo[0], 0.3) + min(hi[0], 1.3))
    span0 = min(hi[0], 1.3) - max(lo[0], 0.3)
    s0 = random_smooth_field(grid, 1, rng)[..., 0]
    s0 = s0 / (np.max(np.abs(s0)) + 1e-12)
    s1 = random_smooth_field(grid, 1, rng)[..., 0]
    s1 = s1 / (np.max(np.abs(s1)) + 1e-12)
    comp0 = mid0 + 0.35 * span0 * s0
    comp1 = t + 0.05 * s1
    values = np.stack([comp0, comp1], axis=-1)
    return DiscreteImmersion(grid, values, target)


def random_director(grid: Grid, target, rng, foot_scale=1.0, vec_scale=1.0) -> DirectorField:
    if target.dim == grid.dim + 1 and target.is_constant:
        base = random_surface_immersion(grid, rng, amplitude=0.05 * foot_scale)
        foot = base.values
    else:
        foot = random_curve_immersion(grid, target, rng).values
    vec = vec_scale * random_smooth_field(grid, grid.dim + 1, rng)
    return DirectorField(grid, foot, vec, target)


def wrinkle_profile(grid: Grid, frequencies) -> np.ndarray:
    """Mixed sinusoidal bump, vanishing-free interior oscillation in [0,1]^d coords."""
    xh = unit_coordinates(grid)
    acc = np.zeros(grid.counts)
    for q in frequencies:
        term = np.ones(grid.counts)
        for a in range(grid.dim):
            term = term * np.sin(np.pi * q * xh[..., a])
        acc += term
    return acc / max(len(tuple(frequencies)), 1)


def wrinkled_immersion(f0: DiscreteImmersion, eps: float, frequencies) -> DiscreteImmersion:
    n0 = unit_normal(f0)
    w = wrinkle_profile(f0.grid, frequencies)
    values = f0.values + eps * w[..., None] * n0.values
    return DiscreteImmersion(f0.grid, values, f0.target)


# ---------------------------------------------------------------------------
# check suite


def _sasaki_direct(xi: DirectorField, g) -> np.ndarray:
    """Independent Sasaki-norm assembly through the double-tangent coordinates.

    Builds Dxi(e_i) = (x, v, d_i x, d_i v), applies the bundle projection and
    the connector map separately, and contracts with g^{ij} and h pairwise.
    """
    Jx = jacobian_array(xi.foot, xi.grid)
    Jv = jacobian_array(xi.vec, xi.grid)
    H = xi.target.eval(xi.foot)
    if xi.target.is_constant:
        Gam = np.zeros(xi.foot.shape[:-1] + (xi.target.dim,) * 3)
    else:
        Gam = christoffel(xi.target, xi.foot).components
    ginv, _ = en.parameter_factors(g, xi.grid)
    horiz = Jx
    vert = Jv + np.einsum("...abc,...bi,...c->...ai", Gam, Jx, xi.vec)
    acc = np.zeros(xi.grid.counts)
    d = xi.grid.dim
    for i in range(d):
        for j in range(d):
            pair = (np.einsum("...ab,...a,...b->...", H, horiz[..., i], horiz[..., j])
                    + np.einsum("...ab,...a,...b->...", H, vert[..., i], vert[..., j]))
            acc += ginv[..., i, j] * pair
    return acc


def _check_entry(name, violation, tol):
    return {"check": name, "max_violation": float(violation),
            "tolerance": float(tol), "pass": bool(violation <= tol)}


def run_check(cfg: ExperimentConfig):
    """Run the registered invariant suites; emit a JSON report."""
    os.makedirs(cfg.out, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    checks = []
    grid2 = Grid((cfg.grid[0], cfg.grid[-1]), (1.0, 1.0))
    grid1 = Grid((max(cfg.grid),), (1.0,))
    e3 = chart("euclidean", 3)

    # relaxation identity and node-wise distance identity on random surfaces
    relax_viol = 0.0
    dist_viol = 0.0
    for _ in range(cfg.num_random):
        f = random_surface_immersion(grid2, rng)
        Sf = ShapeField(grid2, 0.3 * _sym_field(grid2, rng))
        xi = normal_director(f)
        for p in (2.0, 3.0):
            rep = en.total_energy(f, get_preset("flat").g, Sf, p)
            rel = en.relaxed_total(xi, get_preset("flat").g, Sf, p)
            relax_viol = max(relax_viol,
                             abs(rep.total - rel.total) / (1.0 + rep.total))
        dist_viol = max(dist_viol, _distance_identity_violation(f, get_preset("flat").g))
    for name in ("sphere", "hyperbolic"):
        tchart = chart(name)
        for _ in range(cfg.num_random):
            fc = random_curve_immersion(grid1, tchart, rng)
            dist_viol = max(dist_viol,
                            _distance_identity_violation(fc, chart("euclidean", 1)))
    checks.append(_check_entry("relaxation_identity", relax_viol, 1e-10))
    checks.append(_check_entry("distance_identity", dist_viol, 1e-10))

    # Sasaki norm identity against the direct double-tangent assembly
    sas_viol = 0.0
    for name, pgrid in (("euclidean", grid2), ("sphere", grid1), ("polar", grid1)):
        tchart = chart(name, 3) if name == "euclidean" else chart(name)
        gparam = get_preset("flat").g if pgrid is grid2 else chart("euclidean", 1)
        for _ in range(cfg.num_random):
            xi = random_director(pgrid, tchart, rng)
            a = en.sasaki_norm_sq(xi, gparam)
            b = _sasaki_direct(xi, gparam)
            sas_viol = max(sas_viol, float(np.max(np.abs(a - b))
                                           / (1.0 + float(np.max(np.abs(b))))))
    checks.append(_check_entry("sasaki_identity", sas_viol, 1e-12))

    # pointwise derivative bound margin on amplified directors
    margin_min, applicable = _margin_sweep(cfg, rng, samples_needed=2000)
    checks.append({"check": "sasaki_bound_margin", "max_violation": float(max(0.0, -margin_min)),
                   "tolerance": 0.0, "pass": bool(margin_min >= 0.0),
                   "applicable_samples": int(applicable)})

    # Gauss-Codazzi on the presets (including the shape-symmetry gate)
    for name in ("flat", "cylinder", "sphere-cap"):
        preset = get_preset(name)
        pgrid = preset.grid(cfg.grid)
        S = preset.shape_field(pgrid)
        if cfg.s_override is not None:
            S = ShapeField(pgrid, np.broadcast_to(
                np.asarray(cfg.s_override, dtype=float),
                pgrid.counts + (2, 2)).copy())
        try:
            rep = gauss_codazzi_residual(preset.g, S, pgrid)
            entry = _check_entry(f"gauss_codazzi:{name}",
                                 max(rep.max_gauss, rep.max_codazzi),
                                 float(np.max(rep.tolerance)))
            entry["pass"] = bool(rep.passed)
        except AsymmetricShape as exc:
            entry = {"check": f"gauss_codazzi:{name}", "pass": False,
                     "status": f"AsymmetricShape: {exc}"}
        checks.append(entry)

    # incompatible preset must fail compatibility
    preset = get_preset("sphere-incompatible")
    pgrid = preset.grid(cfg.grid)
    rep = gauss_codazzi_residual(preset.g, preset.shape_field(pgrid), pgrid)
    checks.append({"check": "gauss_codazzi:sphere-incompatible-rejected",
                   "max_violation": 0.0 if not rep.passed else 1.0,
                   "tolerance": 0.0, "pass": bool(not rep.passed)})

    # analytic gradient versus central finite differences
    if cfg.p < 2:
        checks.append({"check": "gradient_fd", "status": "skipped: p<2", "pass": True})
    else:
        gv = _gradient_fd_violation(rng, p=float(cfg.p), coords=8)
        checks.append(_check_entry("gradient_fd", gv, 1e-5))

    # zero-energy presets
    ze_viol = 0.0
    for name in ("flat", "sphere-cap"):
        preset = get_preset(name)
        pgrid = preset.grid(cfg.grid)
        f0 = preset.reference_immersion(pgrid)
        rep = en.total_energy(f0, preset.g, preset.shape_field(pgrid), 2.0)
        h = max(pgrid.spacing)
        ze_viol = max(ze_viol, rep.total / (10.0 * h * h))
    checks.append(_check_entry("zero_energy_presets", ze_viol, 1.0))

    # SVD projection consistency
    proj_viol = 0.0
    from .geometry import project_stiefel
    for _ in range(cfg.num_random):
        Q = rng.normal(size=(3, 2))
        proj_viol = max(proj_viol,
                        abs(np.linalg.norm(Q - project_stiefel(Q)) - dist_stiefel(Q)))
    checks.append(_check_entry("stiefel_projection", proj_viol, 1e-12))

    passed = all(c.get("pass", False) for c in checks)
    report = {"imlab_config": CONFIG_VERSION, "experiment": "check",
              "grid": list(cfg.grid), "p": cfg.p, "seed": cfg.seed,
              "checks": checks, "passed": passed}
    write_json(os.path.join(cfg.out, "check_report.json"), report)
    return report, passed


def _sym_field(grid, rng):
    raw = random_smooth_field(grid, grid.dim * grid.dim, rng)
    M = raw.reshape(grid.counts + (grid.dim, grid.dim))
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _distance_identity_violation(f: DiscreteImmersion, g) -> float:
    xi = normal_director(f)
    B = en.director_frame(xi, g)
    J = jacobian_array(f.values, f.grid)
    _, Hs, _ = en.target_factors(f.target, f.values)
    _, gsi = en.parameter_factors(g, f.grid)
    Q = Hs @ J @ gsi
    return float(np.max(np.abs(dist_rotations(B) - dist_stiefel(Q))))


def _margin_sweep(cfg, rng, samples_needed: int):
    """Minimum margin and applicable-sample count across target charts."""
    margin_min = np.inf
    total_applicable = 0
    setups = [("euclidean3", chart("euclidean", 3),
               Grid((17, 17), (1.0, 1.0)), get_preset("flat").g),
              ("sphere", chart("sphere"), Grid((64,), (1.0,)), chart("euclidean", 1)),
              ("hyperbolic", chart("hyperbolic"), Grid((64,), (1.0,)),
               chart("euclidean", 1)),
              ("polar-param", chart("euclidean", 3), Grid((17, 17), (1.0, 1.0), (1.0, 0.0)),
               chart("polar"))]
    for _, tchart, pgrid, gparam in setups:
        applicable = 0
        draws = 0
        while applicable < samples_needed and draws < 200:
            draws += 1
            amp = 10.0 ** rng.uniform(0.7, 2.0)
            xi = random_director(pgrid, tchart, rng, vec_scale=amp)
            # amplify footpoint oscillation too (keeps feet in-domain for curves)
            Sv = rng.uniform(0.0, 2.0) * _sym_field(pgrid, rng)
            S = ShapeField(pgrid, Sv)
            m = en.sasaki_bound_margin(xi, gparam, S)
            mask = np.isfinite(m)
            applicable += int(np.sum(mask))
            if np.any(mask):
                margin_min = min(margin_min, float(np.min(m[mask])))
        total_applicable += applicable
    return margin_min, total_applicable


def _gradient_fd_violation(rng, p: float, coords: int, seeds: int = 3) -> float:
    """Max relative mismatch between analytic and central-FD gradients."""
    worst = 0.0
    flat = get_preset("flat")
    grid = Grid((9, 9), (1.0, 1.0))
    for _ in range(seeds):
        f = random_surface_immersion(grid, rng, amplitude=0.08)
        S = ShapeField(grid, 0.4 * _sym_field(grid, rng))
        worst = max(worst, _fd_vs_analytic(f, flat.g, S, p, rng, coords))
        xi = random_director(grid, chart("euclidean", 3), rng,
                             vec_scale=1.0)
        worst = max(worst, _fd_vs_analytic(xi, flat.g, S, p, rng, coords))
    return worst


def _fd_vs_analytic(state, g, S, p, rng, coords: int) -> float:
    x = pack_state(state)
    grad = energy_gradient(state, g, S, p)
    grad = grad.ravel() if isinstance(grad, np.ndarray) else np.concatenate(
        [grad[0].ravel(), grad[1].ravel()])
    gmax = float(np.max(np.abs(grad)))
    worst = 0.0
    idx = rng.choice(x.size, size=min(coords, x.size), replace=False)
    for i in idx:
        h = 1e-6 * max(1.0, abs(x[i]))
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        fp = objective(unpack_like(xp, state), g, S, p)[0]
        fm = objective(unpack_like(xm, state), g, S, p)[0]
        fd = (fp - fm) / (2.0 * h)
        denom = max(abs(fd), abs(grad[i]), 1e-6 * gmax, 1e-12)
        worst = max(worst, abs(grad[i] - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# energy / reconstruct / minimize drivers


def _custom_context(cfg: ExperimentConfig):
    """Problem built from the config: named or tabulated g, constant or tabulated S."""
    custom = cfg.custom
    box = tuple(tuple(float(v) for v in pair) for pair in custom["box"])
    counts = cfg.grid if len(cfg.grid) == 2 else cfg.grid * 2
    grid = Grid(counts, tuple(hi - lo for lo, hi in box), tuple(lo for lo, _ in box))
    gspec = custom["g"]
    if isinstance(gspec, str):
        g = chart(gspec) if gspec != "euclidean" else chart("euclidean", grid.dim)
    else:
        from .geometry import MetricChart
        table = load_node_csv(gspec["csv"]).reshape(grid.counts + (grid.dim, grid.dim))
        g = MetricChart.from_table(grid, table)
    sspec = custom["s"]
    if isinstance(sspec, dict):
        Sv = load_node_csv(sspec["csv"]).reshape(grid.counts + (grid.dim, grid.dim))
    else:
        Sv = np.broadcast_to(np.asarray(sspec, dtype=float),
                             grid.counts + (grid.dim, grid.dim)).copy()
    return g, grid, ShapeField(grid, Sv), None


def _problem_context(cfg: ExperimentConfig):
    """(g, grid, S, reference immersion or None) for the configured problem."""
    if cfg.preset == "custom":
        return _custom_context(cfg)
    preset = get_preset(cfg.preset)
    grid = preset.grid(cfg.grid)
    return preset.g, grid, preset.shape_field(grid), preset.reference_immersion(grid)


def _grid_meta(grid: Grid) -> dict:
    return {"counts": list(grid.counts), "extents": list(grid.extents),
            "origin": list(grid.origin)}


def run_energy(cfg: ExperimentConfig):
    """Evaluate the energy of the preset's reference immersion; export densities."""
    os.makedirs(cfg.out, exist_ok=True)
    g, grid, S, f0 = _problem_context(cfg)
    if f0 is None:
        f0 = integrate_frame(g, S, grid)
    rep = en.total_energy(f0, g, S, cfg.p)
    save_node_csv(os.path.join(cfg.out, "immersion.csv"), grid, f0.values)
    save_node_csv(os.path.join(cfg.out, "stretch_density.csv"), grid, rep.stretch_density)
    save_node_csv(os.path.join(cfg.out, "bend_density.csv"), grid, rep.bend_density)
    report = {"imlab_config": CONFIG_VERSION, "experiment": "energy",
              "preset": cfg.preset, "grid_meta": _grid_meta(grid), "p": cfg.p,
              "stretch": rep.stretch, "bend": rep.bend, "total": rep.total}
    write_json(os.path.join(cfg.out, "energy_report.json"), report)
    return report, True


def run_reconstruct(cfg: ExperimentConfig):
    """Reconstruct the immersion carrying the preset's forms; report errors."""
    os.makedirs(cfg.out, exist_ok=True)
    g, grid, S, ref = _problem_context(cfg)
    f = integrate_frame(g, S, grid)
    gv = g.eval(grid.nodes())
    pb_err = float(np.max(np.abs(pullback_metric(f) - gv)))
    so_err = float(np.max(np.abs(shape_operator(f).values - S.values)))
    report = {"imlab_config": CONFIG_VERSION, "experiment": "reconstruct",
              "preset": cfg.preset, "grid_meta": _grid_meta(grid),
              "pullback_max_error": pb_err, "shape_operator_max_error": so_err}
    if ref is not None:
        _, _, aligned = align_rigid(ref, f)
        report["aligned_max_distance"] = float(
            np.max(np.linalg.norm(ref.values - aligned.values, axis=-1)))
    save_node_csv(os.path.join(cfg.out, "reconstructed.csv"), grid, f.values)
    save_binary(os.path.join(cfg.out, "reconstructed.bin"), f.values)
    if grid.dim == 2:
        save_obj(os.path.join(cfg.out, "reconstructed.obj"), f)
    write_json(os.path.join(cfg.out, "reconstruct_report.json"), report)
    return report, True


def run_minimize(cfg: ExperimentConfig):
    """Descend the energy from a perturbed start; dump terminal state and trace."""
    os.makedirs(cfg.out, exist_ok=True)
    g, grid, S, f0 = _problem_context(cfg)
    rng = np.random.default_rng(cfg.seed)
    if f0 is None:
        rep = gauss_codazzi_residual(g, S, grid)
        if rep.passed:
            f0 = integrate_frame(g, S, grid)
        else:
            # incompatible forms have no reference: start from the flat chart graph
            f0 = DiscreteImmersion(grid, np.concatenate(
                [grid.nodes(), np.zeros(grid.counts + (1,))], axis=-1),
                chart("euclidean", 3))

    if cfg.start == "immersion":
        start = DiscreteImmersion(
            grid, f0.values + cfg.start_amplitude * random_smooth_field(grid, 3, rng),
            f0.target)
    else:
        base = normal_director(f0)
        start = DirectorField(grid, base.foot, cfg.director_scale * base.vec,
                              base.target)

    state, trace = minimize(start, g, S, cfg.p, cfg.optimizer)
    trace.to_csv(os.path.join(cfg.out, "trace.csv"))
    report = {"imlab_config": CONFIG_VERSION, "experiment": "minimize",
              "preset": cfg.preset, "grid_meta": _grid_meta(grid), "p": cfg.p,
              "seed": cfg.seed, "start": cfg.start,
              "iterations": int(trace.records[-1]["iter"]),
              "termination": trace.reason,
              "terminal_energy": float(trace.records[-1]["energy"]),
              "terminal_stretch": float(trace.records[-1]["stretch"]),
              "terminal_bend": float(trace.records[-1]["bend"])}
    gv = g.eval(grid.nodes())
    if isinstance(state, DiscreteImmersion):
        save_node_csv(os.path.join(cfg.out, "terminal.csv"), grid, state.values)
        save_binary(os.path.join(cfg.out, "terminal.bin"), state.values)
        report["pullback_max_error"] = float(np.max(np.abs(pullback_metric(state) - gv)))
        report["shape_operator_max_error"] = float(
            np.max(np.abs(shape_operator(state).values - S.values)))
    else:
        save_node_csv(os.path.join(cfg.out, "terminal_foot.csv"), grid, state.foot)
        save_node_csv(os.path.join(cfg.out, "terminal_vec.csv"), grid, state.vec)
        H = state.target.eval(state.foot)
        vnorm = np.sqrt(np.einsum("...ab,...a,...b->...", H, state.vec, state.vec))
        J = jacobian_array(state.foot, grid)
        tangency = np.einsum("...ab,...ai,...b->...i", H, J, state.vec)
        report["vec_norm_max_error"] = float(np.max(np.abs(vnorm - 1.0)))
        report["tangency_max_error"] = float(np.max(np.abs(tangency)))
    write_json(os.path.join(cfg.out, "minimize_report.json"), report)
    return report, True


# ---------------------------------------------------------------------------
# stability sweep and ratio study


@dataclass(frozen=True)
class SweepRecord:
    eps: float
    energy: float
    w1p_map: float
    w1p_normal: float
    ratio: Optional[float]
    flagged: bool


def run_stability_sweep(cfg: ExperimentConfig):
    """Wrinkle-family sweep: energies, aligned Sobolev distances, bound ratios."""
    os.makedirs(cfg.out, exist_ok=True)
    g, grid, S, _ = _problem_context(cfg)
    f0 = integrate_frame(g, S, grid)
    n0 = unit_normal(f0)
    records = []
    field_files = []
    for k, eps in enumerate(cfg.amplitudes):
        feps = wrinkled_immersion(f0, eps, cfg.frequencies)
        rep = en.total_energy(feps, g, S, cfg.p)
        R, b, f0_aligned = align_rigid(feps, f0)
        dist_map = w1p_distance(feps, f0_aligned, cfg.p, g)
        neps = unit_normal(feps)
        n_rot = DiscreteImmersion(grid, n0.values @ R.T, feps.target)
        n_eps_field = DiscreteImmersion(grid, neps.values, feps.target)
        dist_normal = w1p_distance(n_eps_field, n_rot, cfg.p, g)
        denom = rep.total ** (1.0 / cfg.p) if rep.total > 0 else 0.0
        # eps = 0 is degenerate by construction (0/0 in the continuum): the
        # energy sits at the discretization floor, so flag it explicitly
        flagged = denom < RATIO_GUARD or eps == 0.0
        ratio = None if flagged else (dist_map + dist_normal) / denom
        records.append(SweepRecord(eps, rep.total, dist_map, dist_normal,
                                   ratio, flagged))
        fname = f"field_{k:03d}.bin"
        save_binary(os.path.join(cfg.out, fname), feps.values)
        field_files.append(fname)

    rows = []
    for r in records:
        rows.append([r.eps, r.energy, r.w1p_map, r.w1p_normal,
                     "" if r.ratio is None else _fmt(r.ratio),
                     "1" if r.flagged else "0"])
    write_csv(os.path.join(cfg.out, "sweep.csv"),
              ["eps", "energy", "w1p_map", "w1p_normal", "ratio", "flagged"], rows)
    write_svg_loglog(os.path.join(cfg.out, "sweep_energy.svg"),
                     [r.eps for r in records], [r.energy for r in records],
                     "eps", "energy", f"{cfg.preset}: energy vs amplitude")
    write_svg_loglog(os.path.join(cfg.out, "sweep_ratio.svg"),
                     [r.eps for r in records],
                     [r.ratio if r.ratio is not None else float("nan") for r in records],
                     "eps", "ratio", f"{cfg.preset}: stability ratio vs amplitude")
    report = {"imlab_config": CONFIG_VERSION, "experiment": cfg.experiment,
              "preset": cfg.preset, "grid_meta": _grid_meta(grid), "p": cfg.p,
              "seed": cfg.seed, "frequencies": list(cfg.frequencies),
              "field_files": field_files,
              "records": [{"eps": r.eps, "energy": r.energy, "w1p_map": r.w1p_map,
                           "w1p_normal": r.w1p_normal, "ratio": r.ratio,
                           "flagged": r.flagged} for r in records]}
    write_json(os.path.join(cfg.out, "sweep.json"), report)
    return report, True


def run_ratio_study(cfg: ExperimentConfig):
    """Quantitative-bound probe: empirical ratio statistics over the sweep."""
    report, _ = run_stability_sweep(cfg)
    ratios = [r["ratio"] for r in report["records"] if r["ratio"] is not None]
    stats = {"imlab_config": CONFIG_VERSION, "experiment": "ratio-study",
             "preset": cfg.preset, "p": cfg.p,
             "num_ratios": len(ratios),
             "ratio_max": max(ratios) if ratios else None,
             "ratio_min": min(ratios) if ratios else None,
             "ratio_spread": (max(ratios) / min(ratios)) if ratios else None}
    write_json(os.path.join(cfg.out, "ratio_study.json"), stats)
    return stats, True


RUNNERS = {"energy": run_energy, "check": run_check, "reconstruct": run_reconstruct,
           "minimize": run_minimize, "stability-sweep": run_stability_sweep,
           "ratio-study": run_ratio_study}


def run_experiment(cfg: ExperimentConfig):
    return RUNNERS[cfg.experiment](cfg)
