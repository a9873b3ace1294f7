"""Analytic gradients of the discrete energies and a quasi-Newton minimizer.

Gradients are assembled by reverse accumulation through the finite-difference
stencils; the SVD-distance derivative uses d(dist^2)/dQ = 2 (Q - proj(Q)),
valid away from rank deficiency.  Gradients require p >= 2 (below that the
integrand is not C^1 at its zeros) and a constant-metric target chart, which
covers every minimization experiment shipped here; curved-target states stay
evaluate-only.  The smallest frame singular value is guarded at 1e-8: rather
than regularizing, gradient evaluation aborts, so descent runs cannot silently
smooth over degeneracies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .energy import relaxed_total, total_energy
from .errors import BadConfig, RankDeficient, UnsupportedExponent, UnsupportedTarget
from .fields import (DirectorField, DiscreteImmersion, jacobian_adjoint,
                     jacobian_array, quadrature_weights)
from .geometry import MetricChart, sqrt_and_inv_sqrt
from .immersion import _cross_columns

SIGMA_GUARD = 1e-8

State = Union[DiscreteImmersion, DirectorField]


@dataclass(frozen=True)
class OptimizeConfig:
    max_iters: int = 500
    grad_tol: float = 1e-8
    step_tol: float = 1e-14
    memory: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise BadConfig("max_iters must be >= 1")
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise BadConfig("tolerances must be positive")
        if self.memory < 1:
            raise BadConfig("memory must be >= 1")


@dataclass
class OptimizeTrace:
    """Per-iteration records and the reason the loop stopped."""

    records: List[dict] = field(default_factory=list)
    reason: str = ""

    def append(self, it, energy, stretch, bend, grad_norm, step):
        self.records.append({"iter": it, "energy": energy, "stretch": stretch,
                             "bend": bend, "grad_norm": grad_norm, "step": step})

    def energies(self):
        return np.array([r["energy"] for r in self.records])

    def to_csv(self, path):
        lines = ["iter,energy,stretch,bend,grad_norm,step"]
        for r in self.records:
            lines.append(",".join([str(r["iter"])] + [
                format(float(r[k]), ".17g")
                for k in ("energy", "stretch", "bend", "grad_norm", "step")]))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# state packing


def pack_state(state: State) -> np.ndarray:
    if isinstance(state, DiscreteImmersion):
        return state.values.ravel().copy()
    return np.concatenate([state.foot.ravel(), state.vec.ravel()])


def unpack_like(x: np.ndarray, template: State) -> State:
    if isinstance(template, DiscreteImmersion):
        return DiscreteImmersion(template.grid, x.reshape(template.values.shape),
                                 template.target)
    half = template.foot.size
    return DirectorField(template.grid,
                         x[:half].reshape(template.foot.shape),
                         x[half:].reshape(template.vec.shape),
                         template.target)


def objective(state: State, g: MetricChart, S, p: float):
    """(total, stretch, bend) of the energy the optimizer descends."""
    if isinstance(state, DiscreteImmersion):
        rep = total_energy(state, g, S, p)
    else:
        rep = relaxed_total(state, g, S, p)
    return rep.total, rep.stretch, rep.bend


# ---------------------------------------------------------------------------
# gradients


def _cross_adjoint(B, cbar):
    """Backpropagate through the oriented column cross product."""
    d = B.shape[-1]
    if d == 1:
        b1 = np.stack([cbar[..., 1], -cbar[..., 0]], axis=-1)
        return b1[..., None]
    b1 = np.cross(B[..., 1], cbar)
    b2 = np.cross(cbar, B[..., 0])
    return np.stack([b1, b2], axis=-1)


class _Evaluator:
    """Energy and gradient of one fixed (grid, g, S, p, target) problem.

    Precomputes everything independent of the unknowns; states whose smallest
    frame singular value sits below the gradient guard evaluate to +inf, so a
    line search never accepts a point where the gradient would be undefined.
    """

    def __init__(self, template: State, g: MetricChart, S, p: float):
        if p < 2:
            raise UnsupportedExponent("gradients require p >= 2")
        target = template.target
        if not target.is_constant:
            raise UnsupportedTarget("gradients support constant-metric targets only")
        self.template = template
        self.p = float(p)
        self.grid = template.grid
        self.Sv = S.values
        self.H = target.constant
        self.Hs, self.Hsi = sqrt_and_inv_sqrt(self.H)
        gv = g.eval(self.grid.nodes())
        _, self.gsi = sqrt_and_inv_sqrt(gv)
        self.ginv = self.gsi @ self.gsi
        w = np.linalg.eigvalsh(gv)
        self.wdet = quadrature_weights(self.grid) * np.sqrt(np.prod(w, axis=-1))
        self.is_immersion = isinstance(template, DiscreteImmersion)

    # -- immersion states ---------------------------------------------------

    def _immersion_forward(self, values):
        J = jacobian_array(values, self.grid)
        Q = self.Hs @ J @ self.gsi
        U, s, Vt = np.linalg.svd(Q, full_matrices=False)
        if np.min(s[..., -1]) < SIGMA_GUARD:
            raise RankDeficient("frame singular value below gradient guard")
        dist2 = np.sum((s - 1.0) ** 2, axis=-1)
        B = self.Hs @ J
        c = _cross_columns(B)
        nu = np.linalg.norm(c, axis=-1)
        nhat = c / nu[..., None]
        n = np.einsum("ab,...b->...a", self.Hsi, nhat)
        Dn = jacobian_array(n, self.grid)
        A = Dn + J @ self.Sv
        q2 = np.maximum(
            np.einsum("...ij,ab,...ai,...bj->...", self.ginv, self.H, A, A), 0.0)
        return J, Q, (U, s, Vt), dist2, B, nu, nhat, A, q2

    def _immersion_energy(self, values):
        J = jacobian_array(values, self.grid)
        Q = self.Hs @ J @ self.gsi
        s = np.linalg.svd(Q, compute_uv=False)
        if np.min(s[..., -1]) < SIGMA_GUARD:
            return np.inf, np.inf, np.inf
        dist2 = np.sum((s - 1.0) ** 2, axis=-1)
        B = self.Hs @ J
        c = _cross_columns(B)
        nu = np.linalg.norm(c, axis=-1)
        nhat = c / nu[..., None]
        n = np.einsum("ab,...b->...a", self.Hsi, nhat)
        A = jacobian_array(n, self.grid) + J @ self.Sv
        q2 = np.maximum(
            np.einsum("...ij,ab,...ai,...bj->...", self.ginv, self.H, A, A), 0.0)
        stretch = float(np.sum(self.wdet * dist2 ** (self.p / 2.0)))
        bend = float(np.sum(self.wdet * q2 ** (self.p / 2.0)))
        return stretch + bend, stretch, bend

    def _immersion_gradient(self, values):
        p = self.p
        J, Q, (U, s, Vt), dist2, B, nu, nhat, A, q2 = self._immersion_forward(values)
        coef = p * dist2 ** ((p - 2.0) / 2.0) if p != 2.0 else np.full_like(dist2, 2.0)
        Qbar = (self.wdet * coef)[..., None, None] * (Q - U @ Vt)
        Jbar = self.Hs.T @ Qbar @ np.swapaxes(self.gsi, -1, -2)

        q2coef = self.wdet * (p / 2.0) * (q2 ** ((p - 2.0) / 2.0) if p != 2.0 else 1.0)
        Abar = q2coef[..., None, None] * 2.0 * np.einsum(
            "ab,...bj,...ji->...ai", self.H, A, self.ginv)
        Jbar = Jbar + np.einsum("...ai,...ji->...aj", Abar, self.Sv)
        nbar = jacobian_adjoint(Abar, self.grid)
        nhat_bar = np.einsum("ab,...a->...b", self.Hsi, nbar)
        cbar = (nhat_bar - nhat * np.sum(nhat * nhat_bar, axis=-1, keepdims=True)) \
            / nu[..., None]
        Bbar = _cross_adjoint(B, cbar)
        Jbar = Jbar + self.Hs.T @ Bbar
        return jacobian_adjoint(Jbar, self.grid)

    # -- director states ----------------------------------------------------

    def _director_frame(self, foot, vec):
        Jx = jacobian_array(foot, self.grid)
        Jv = jacobian_array(vec, self.grid)
        B = self.Hs @ np.concatenate([Jx @ self.gsi, vec[..., None]], axis=-1)
        C = Jx @ self.Sv + Jv
        q2 = np.maximum(
            np.einsum("...ij,ab,...ai,...bj->...", self.ginv, self.H, C, C), 0.0)
        return Jx, B, C, q2

    def _director_energy(self, foot, vec):
        _, B, _, q2 = self._director_frame(foot, vec)
        U, s, Vt = np.linalg.svd(B)
        if np.min(s[..., -1]) < SIGMA_GUARD:
            return np.inf, np.inf, np.inf
        sign = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
        target = np.ones_like(s)
        target[..., -1] = np.where(sign < 0, -1.0, 1.0)
        dist2 = np.sum((s - target) ** 2, axis=-1)
        stretch = float(np.sum(self.wdet * dist2 ** (self.p / 2.0)))
        bend = float(np.sum(self.wdet * q2 ** (self.p / 2.0)))
        return stretch + bend, stretch, bend

    def _director_gradient(self, foot, vec):
        p = self.p
        d = self.grid.dim
        _, B, C, q2 = self._director_frame(foot, vec)
        U, s, Vt = np.linalg.svd(B)
        if np.min(s[..., -1]) < SIGMA_GUARD:
            raise RankDeficient("director frame singular value below gradient guard")
        sign = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
        target = np.ones_like(s)
        target[..., -1] = np.where(sign < 0, -1.0, 1.0)
        proj = np.einsum("...ik,...k,...kj->...ij", U, target, Vt)
        dist2 = np.sum((s - target) ** 2, axis=-1)

        coef = p * dist2 ** ((p - 2.0) / 2.0) if p != 2.0 else np.full_like(dist2, 2.0)
        Bbar = (self.wdet * coef)[..., None, None] * (B - proj)
        T = self.Hs.T @ Bbar
        Jxbar = T[..., :, :d] @ np.swapaxes(self.gsi, -1, -2)
        vbar = T[..., :, d]

        q2coef = self.wdet * (p / 2.0) * (q2 ** ((p - 2.0) / 2.0) if p != 2.0 else 1.0)
        Cbar = q2coef[..., None, None] * 2.0 * np.einsum(
            "ab,...bj,...ji->...ai", self.H, C, self.ginv)
        Jxbar = Jxbar + np.einsum("...ai,...ji->...aj", Cbar, self.Sv)
        grad_foot = jacobian_adjoint(Jxbar, self.grid)
        grad_vec = jacobian_adjoint(Cbar, self.grid) + vbar
        return grad_foot, grad_vec

    # -- flat-vector API ----------------------------------------------------

    def energy(self, x: np.ndarray):
        if self.is_immersion:
            return self._immersion_energy(x.reshape(self.template.values.shape))
        half = self.template.foot.size
        return self._director_energy(x[:half].reshape(self.template.foot.shape),
                                     x[half:].reshape(self.template.vec.shape))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        if self.is_immersion:
            return self._immersion_gradient(
                x.reshape(self.template.values.shape)).ravel()
        half = self.template.foot.size
        gf, gv = self._director_gradient(x[:half].reshape(self.template.foot.shape),
                                         x[half:].reshape(self.template.vec.shape))
        return np.concatenate([gf.ravel(), gv.ravel()])


def energy_gradient(state: State, g: MetricChart, S, p: float):
    """Exact gradient of the discrete (quadrature-level) energy.

    Immersion states return an array shaped like the node values; director
    states return the pair (grad_foot, grad_vec).
    """
    ev = _Evaluator(state, g, S, p)
    if isinstance(state, DiscreteImmersion):
        return ev._immersion_gradient(state.values)
    return ev._director_gradient(state.foot, state.vec)


# ---------------------------------------------------------------------------
# limited-memory quasi-Newton with Armijo backtracking


ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 60


def _two_loop(grad, pairs):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += s * (a - b)
    return q


def minimize(state0: State, g: MetricChart, S, p: float,
             cfg: Optional[OptimizeConfig] = None):
    """Descend the discrete energy from state0; returns (state, trace).

    Limited-memory quasi-Newton directions with Armijo backtracking
    (sufficient decrease 1e-4, factor 0.5).  Terminates on the gradient
    max-norm, the step max-norm, the iteration cap, or 60 failed backtracks
    (best state returned with reason "line_search_failed").
    """
    if cfg is None:
        cfg = OptimizeConfig()
    ev = _Evaluator(state0, g, S, p)
    x = pack_state(state0)
    total, stretch, bend = ev.energy(x)
    if not np.isfinite(total):
        raise BadConfig("energy not finite at the initial state")
    grad = ev.gradient(x)
    gnorm = float(np.max(np.abs(grad)))

    trace = OptimizeTrace()
    trace.append(0, total, stretch, bend, gnorm, 0.0)
    pairs = []

    for it in range(1, cfg.max_iters + 1):
        if gnorm <= cfg.grad_tol:
            trace.reason = "grad_tol"
            break
        direction = -_two_loop(grad, pairs)
        slope = float(direction @ grad)
        if slope >= 0.0:
            direction = -grad
            slope = float(direction @ grad)
        t = 1.0 if pairs else min(1.0, 1.0 / max(gnorm, 1e-12))
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            x_new = x + t * direction
            f_new = ev.energy(x_new)
            if f_new[0] <= total + ARMIJO_C1 * t * slope:
                accepted = True
                break
            t *= BACKTRACK
        if not accepted:
            trace.reason = "line_search_failed"
            break
        s_vec = x_new - x
        x = x_new
        total, stretch, bend = f_new
        grad_new = ev.gradient(x)
        y_vec = grad_new - grad
        grad = grad_new
        gnorm = float(np.max(np.abs(grad)))
        sy = float(s_vec @ y_vec)
        if sy > 1e-10 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            pairs.append((s_vec, y_vec, 1.0 / sy))
            if len(pairs) > cfg.memory:
                pairs.pop(0)
        trace.append(it, total, stretch, bend, gnorm, t)
        if float(np.max(np.abs(s_vec))) <= cfg.step_tol:
            trace.reason = "step_tol"
            break
    else:
        trace.reason = "max_iters"
    return unpack_like(x, state0), trace
