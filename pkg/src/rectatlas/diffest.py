"""Local linear least-squares estimation of map differentials.

Given paired samples (y_i, F(y_i)) of a map between chart images, the
differential at a base point is the least-squares minimizer A of
``sum ||F(y') - F(y) - A (y' - y)||^2`` over neighbors y' in a ball around
y.  Affine maps are recovered exactly; for smooth maps the error is O(h) in
the fit radius.  The batch driver shrinks the radius on points whose fit is
rank-deficient or has a large residual (which flags jumps of the underlying
map) and reports the points that stay unresolved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["RankDeficientFit", "estimate_differential", "batch_differentials",
           "BatchFitResult"]


class RankDeficientFit(ValueError):
    """Neighborhood does not determine a full-rank linear fit."""


def _solve_fit(dy: np.ndarray, df: np.ndarray, rank_tol: float = 1e-9):
    k = dy.shape[1]
    m1 = dy.T @ dy
    ev = np.linalg.eigvalsh(m1)
    if ev[0] <= rank_tol * max(ev[-1], 1e-300):
        raise RankDeficientFit("neighborhood is rank deficient")
    A = np.linalg.solve(m1, dy.T @ df).T
    resid = df - dy @ A.T
    scale = np.linalg.norm(dy, axis=1)
    ratio = float(np.max(np.linalg.norm(resid, axis=1) / np.maximum(scale, 1e-300)))
    return A, ratio


def estimate_differential(pts: np.ndarray, vals: np.ndarray, y: np.ndarray,
                          y_val: np.ndarray, h: float,
                          min_neighbors: int | None = None) -> np.ndarray:
    """Differential of the sampled map at ``y`` from neighbors within ``h``.

    ``pts``/``vals`` are the sample locations and their images; ``y`` itself
    need not be among them but its image ``y_val`` anchors the differences.
    Raises :class:`RankDeficientFit` when fewer than k+1 neighbors are in
    range or they do not span R^k.
    """
    pts = np.asarray(pts, dtype=float)
    vals = np.asarray(vals, dtype=float)
    y = np.asarray(y, dtype=float)
    k = pts.shape[1]
    need = (k + 1) if min_neighbors is None else min_neighbors
    d = np.linalg.norm(pts - y, axis=1)
    sel = (d < h) & (d > 0)
    if int(sel.sum()) < need:
        raise RankDeficientFit(
            f"{int(sel.sum())} neighbors within {h}, need at least {need}")
    A, _ = _solve_fit(pts[sel] - y, vals[sel] - np.asarray(y_val, dtype=float))
    return A


@dataclass
class BatchFitResult:
    matrices: np.ndarray        # (n, k', k); NaN rows where unresolved
    resolved: np.ndarray        # (n,) bool
    residuals: np.ndarray       # (n,) best residual ratio seen (inf if none)
    radii: np.ndarray           # (n,) radius at which the point resolved


def batch_differentials(pts: np.ndarray, vals: np.ndarray, h: float,
                        ladder: tuple[float, ...] = (1.0, 0.5, 0.25),
                        residual_gate: float = np.inf,
                        min_neighbors: int | None = None) -> BatchFitResult:
    """Per-point differentials over a whole sampled map.

    Every point is fit with neighbors inside ``h * ladder[0]``; points whose
    fit fails the rank check or exceeds ``residual_gate`` are retried at the
    smaller ladder radii.  Points that never pass stay unresolved and are the
    caller's exceptional set.
    """
    pts = np.asarray(pts, dtype=float)
    vals = np.asarray(vals, dtype=float)
    n, k = pts.shape
    kp = vals.shape[1]
    need = (k + 1) if min_neighbors is None else min_neighbors
    tree = cKDTree(pts)

    matrices = np.full((n, kp, k), np.nan)
    resolved = np.zeros(n, dtype=bool)
    residuals = np.full(n, np.inf)
    radii = np.full(n, np.nan)

    for frac in ladder:
        todo = np.nonzero(~resolved)[0]
        if todo.size == 0:
            break
        r = h * frac
        for i in todo:
            nbrs = tree.query_ball_point(pts[i], r)
            nbrs = [j for j in nbrs if j != i]
            if len(nbrs) < need:
                continue
            dy = pts[nbrs] - pts[i]
            df = vals[nbrs] - vals[i]
            try:
                A, ratio = _solve_fit(dy, df)
            except RankDeficientFit:
                continue
            residuals[i] = min(residuals[i], ratio)
            if ratio <= residual_gate:
                matrices[i] = A
                resolved[i] = True
                radii[i] = r

    # points in sampling voids: fall back to the nearest neighbors outright,
    # still gated by the residual so map discontinuities stay unresolved
    todo = np.nonzero(~resolved)[0]
    if todo.size and n > need:
        k_fb = min(max(need, k + 2), n - 1)
        for i in todo:
            d, nbrs = tree.query(pts[i], k=k_fb + 1)
            nbrs = [j for j in np.atleast_1d(nbrs) if j != i]
            dy = pts[nbrs] - pts[i]
            df = vals[nbrs] - vals[i]
            try:
                A, ratio = _solve_fit(dy, df)
            except RankDeficientFit:
                continue
            residuals[i] = min(residuals[i], ratio)
            if ratio <= residual_gate:
                matrices[i] = A
                resolved[i] = True
                radii[i] = float(np.max(np.linalg.norm(dy, axis=1)))
    return BatchFitResult(matrices=matrices, resolved=resolved,
                          residuals=residuals, radii=radii)
