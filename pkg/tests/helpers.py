"""Shared test utilities: random rotations, convergence orders, symbolic oracles."""

import numpy as np
import sympy as sp


def random_rotation(rng, n):
    """Haar-ish random proper rotation via QR with sign fixing."""
    A = rng.normal(size=(n, n))
    Q, R = np.linalg.qr(A)
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def convergence_orders(errors):
    """log2 ratios of consecutive errors for spacing-halving refinements."""
    errors = np.asarray(errors, dtype=float)
    return np.log2(errors[:-1] / errors[1:])


# ---------------------------------------------------------------------------
# symbolic Levi-Civita oracle (independent of the numeric implementation)


def symbolic_christoffel(coords, gmat):
    """Gamma^a_bc as sympy expressions from a symbolic metric matrix."""
    n = len(coords)
    ginv = gmat.inv()
    Gam = [[[sp.simplify(sp.Rational(1, 2) * sum(
        ginv[a, d] * (sp.diff(gmat[d, b], coords[c])
                      + sp.diff(gmat[d, c], coords[b])
                      - sp.diff(gmat[b, c], coords[d]))
        for d in range(n))) for c in range(n)] for b in range(n)] for a in range(n)]
    return Gam


def symbolic_riemann_lowered(coords, gmat):
    """R_ijkl with the same index convention as the numeric implementation."""
    n = len(coords)
    Gam = symbolic_christoffel(coords, gmat)
    R_up = [[[[sp.simplify(
        sp.diff(Gam[m][l][j], coords[k]) - sp.diff(Gam[m][k][j], coords[l])
        + sum(Gam[m][k][q] * Gam[q][l][j] - Gam[m][l][q] * Gam[q][k][j]
              for q in range(n)))
        for l in range(n)] for k in range(n)] for j in range(n)] for m in range(n)]
    R_low = [[[[sp.simplify(sum(gmat[i, m] * R_up[m][j][k][l] for m in range(n)))
                for l in range(n)] for k in range(n)] for j in range(n)]
             for i in range(n)]
    return R_low


def lambdify_tensor(coords, tensor, shape):
    """Numeric evaluator for a nested list of sympy expressions."""
    flat = []

    def collect(t, depth):
        if depth == 0:
            flat.append(t)
            return
        for item in t:
            collect(item, depth - 1)

    collect(tensor, len(shape))
    fns = [sp.lambdify(coords, e, "numpy") for e in flat]

    def evaluate(point):
        vals = np.array([f(*point) for f in fns], dtype=float)
        return vals.reshape(shape)

    return evaluate
