"""Discrete Lipschitz calculus over a :class:`~rectatlas.space.Space`.

Scalar fields are full-length float arrays aligned with point indices;
entries outside the declared domain may be NaN.  The limsup in the local
Lipschitz constant is replaced by a max over a finite ball at an explicit
scale ``r``, so every quantity here is reproducible.
"""

from __future__ import annotations

import numpy as np

from .space import PointSet, Space, ball, point_set

__all__ = [
    "lipschitz_constant",
    "local_lip",
    "mcshane_extend",
    "mcshane_extend_vector",
    "restricted_lip_compare",
    "chain_rule_defect",
]


def _pair_quotients(space: Space, f: np.ndarray, E: PointSet) -> float:
    """Max of |f(x)-f(y)| / d(x,y) over distinct pairs of E (0 if none)."""
    best = 0.0
    for a, x in enumerate(E[:-1]):
        rest = E[a + 1:]
        if space.dist_table is not None:
            d = space.dist_table[x, rest]
        else:
            d = np.linalg.norm(space.coords[rest] - space.coords[x], axis=1)
        if np.any(d == 0):
            y = rest[np.nonzero(d == 0)[0][0]]
            raise ValueError(f"distinct points {int(x)}, {int(y)} at zero distance")
        best = max(best, float(np.max(np.abs(f[rest] - f[x]) / d)))
    return best


def lipschitz_constant(space: Space, f, E: PointSet | None = None) -> float:
    """Lipschitz constant of f restricted to E (whole space by default)."""
    f = np.asarray(f, dtype=float)
    E = np.arange(space.n_points) if E is None else point_set(E, space.n_points)
    if E.size == 0:
        raise ValueError("empty domain")
    if E.size == 1:
        return 0.0
    return _pair_quotients(space, f, E)


def local_lip(space: Space, f, x: int, r: float) -> float:
    """Local Lipschitz constant of f at x, probed over the ball B_r(x).

    Returns 0 when x is isolated at scale r.
    """
    f = np.asarray(f, dtype=float)
    x = space.check_index(x)
    d = space.dist_row(x)
    nbrs = np.nonzero((d < r) & (d > 0))[0]
    if nbrs.size == 0:
        return 0.0
    return float(np.max(np.abs(f[nbrs] - f[x]) / d[nbrs]))


def mcshane_extend(space: Space, f, E: PointSet) -> np.ndarray:
    """Inf-convolution extension of f from E to every point.

    fbar(x) = min over y in E of f(y) + L d(x, y), with L the Lipschitz
    constant of f on E.  The extension agrees with f on E and has the same
    Lipschitz constant; values on E are copied verbatim so the agreement is
    exact in floating point as well.
    """
    f = np.asarray(f, dtype=float)
    E = point_set(E, space.n_points)
    if E.size == 0:
        raise ValueError("cannot extend from an empty set")
    L = lipschitz_constant(space, f, E)
    out = np.empty(space.n_points, dtype=float)
    for x in range(space.n_points):
        if space.dist_table is not None:
            d = space.dist_table[x, E]
        else:
            d = np.linalg.norm(space.coords[E] - space.coords[x], axis=1)
        out[x] = np.min(f[E] + L * d)
    out[E] = f[E]
    return out


def mcshane_extend_vector(space: Space, F, E: PointSet) -> np.ndarray:
    """Componentwise extension of an R^n-valued field (factor sqrt(n) bound)."""
    F = np.asarray(F, dtype=float)
    return np.column_stack([mcshane_extend(space, F[:, j], E) for j in range(F.shape[1])])


def restricted_lip_compare(space: Space, f, E: PointSet, x: int, r: float):
    """Local Lipschitz constant of f|_E versus f, both probed at scale r.

    The restricted value never exceeds the full one; on density points of E
    the two agree in the limit, which the caller checks at finite scale.
    """
    f = np.asarray(f, dtype=float)
    E = point_set(E, space.n_points)
    x = space.check_index(x)
    if x not in E:
        raise ValueError(f"{x} is not in E")
    d = space.dist_row(x)
    in_ball = (d < r) & (d > 0)
    mask_E = np.zeros(space.n_points, dtype=bool)
    mask_E[E] = True
    nbrs_full = np.nonzero(in_ball)[0]
    nbrs_E = np.nonzero(in_ball & mask_E)[0]
    lip_full = float(np.max(np.abs(f[nbrs_full] - f[x]) / d[nbrs_full])) if nbrs_full.size else 0.0
    lip_E = float(np.max(np.abs(f[nbrs_E] - f[x]) / d[nbrs_E])) if nbrs_E.size else 0.0
    return lip_E, lip_full


def chain_rule_defect(space_X: Space, space_Y: Space, f, phi: np.ndarray,
                      E: PointSet, x: int, r: float) -> float:
    """Signed slack in lip(f o phi) <= Lip(phi) lip(f) o phi at x.

    ``phi`` maps indices of E (in X) to point indices of Y.  The composite's
    local constant is probed at scale r inside E; the right-hand side probes
    f at the image point at the matched scale r * Lip(phi).  Nonpositive
    output (up to scale-mismatch tolerance) is the expected behaviour.
    """
    f = np.asarray(f, dtype=float)
    E = point_set(E, space_X.n_points)
    phi = np.asarray(phi, dtype=np.int64)
    if phi.shape != E.shape:
        raise ValueError("phi must assign an image point to each point of E")
    pos = np.searchsorted(E, x)
    if pos >= E.size or E[pos] != x:
        raise ValueError(f"{x} is not in E")

    lip_phi = 0.0
    for a in range(E.size - 1):
        dx = np.array([space_X.dist(E[a], E[b]) for b in range(a + 1, E.size)])
        dy = np.array([space_Y.dist(phi[a], phi[b]) for b in range(a + 1, E.size)])
        if np.any(dx == 0):
            raise ValueError("zero distance between distinct domain points")
        lip_phi = max(lip_phi, float(np.max(dy / dx)))

    # local lip of f o phi within E at scale r
    dxs = np.array([space_X.dist(x, e) for e in E])
    sel = (dxs < r) & (dxs > 0)
    if np.any(sel):
        fvals = f[phi[sel]]
        lhs = float(np.max(np.abs(fvals - f[phi[pos]]) / dxs[sel]))
    else:
        lhs = 0.0
    if lip_phi == 0.0:
        return lhs
    rhs = lip_phi * local_lip(space_Y, f, int(phi[pos]), r * lip_phi)
    return lhs - rhs
