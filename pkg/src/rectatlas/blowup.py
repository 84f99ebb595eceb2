"""Blow-up maps, quasi-isometry defects and rescaled-chart coverage.

The blow-up at a base point rescales chart coordinates by 1/r_n after
projecting the probe point into the chart domain with a deterministic
factor-2 projection.  Measuring how far the blow-up is from an isometry
onto a Euclidean ball, at a ladder of scales, certifies that the rescaled
space converges to its tangent plane at density points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .atlas import Atlas, Chart
from .space import PointSet, Space, ball, point_set

__all__ = [
    "BlowupConfig", "DefectRecord", "project_to_set", "blowup_map",
    "quasi_isometry_defect", "blowup_sweep", "rescaled_chart_coverage",
    "RescaledChartReport",
]


@dataclass(frozen=True)
class BlowupConfig:
    """Base point, scale ladder and window for a blow-up sweep."""

    x: int
    scales: tuple
    window: float                 # R
    tol: float                    # eps, with 0 < eps < R

    def __post_init__(self):
        scales = tuple(float(r) for r in self.scales)
        if not scales or any(b >= a for a, b in zip(scales, scales[1:])):
            raise ValueError("scales must be strictly decreasing")
        if any(r <= 0 for r in scales):
            raise ValueError("scales must be positive")
        if not 0 < self.tol < self.window:
            raise ValueError("need 0 < tol < window")
        object.__setattr__(self, "scales", scales)


@dataclass
class DefectRecord:
    n: int
    r_n: float
    distortion: float
    coverage_gap: float
    pairs_used: int
    grid_points: int
    ball_size: int
    uncovered: bool = False


def project_to_set(space: Space, U: PointSet, x: int) -> int:
    """First point of U (in stored enumeration) within twice dist(x, U).

    Returns x itself when x lies in U.  The deterministic enumeration-first
    tie policy stands in for the countable dense sequence defining the
    projection; the factor-2 bound holds exactly by construction.
    """
    U = np.asarray(U, dtype=np.int64)
    if U.size == 0:
        raise ValueError("cannot project to an empty set")
    x = space.check_index(x)
    pos = np.searchsorted(U, x)
    if pos < U.size and U[pos] == x:
        return int(x)
    d = space.dist_row(x)[U]
    dU = float(d.min())
    hit = np.nonzero(d <= 2 * dU)[0][0]
    return int(U[hit])


def blowup_map(space: Space, atlas_n: Atlas, x: int, y: int, r_n: float) -> np.ndarray:
    """Rescaled chart displacement (phi(P_U(y)) - phi(x)) / r_n.

    Returns the zero vector of the ambient fiber when x is not covered by
    any chart of the atlas.
    """
    ci = atlas_n.chart_containing(x)
    if ci is None:
        if space.dim_label is not None:
            return np.zeros(int(space.dim_label[x]))
        return np.zeros(1)
    chart = atlas_n.charts[ci]
    p = project_to_set(space, chart.domain, y)
    return (chart.coords(np.array([p]))[0] - chart.coords(np.array([x]))[0]) / r_n


def _grid_ball(k: int, radius: float, step: float, rng=None) -> np.ndarray:
    """Axis-aligned lattice filling B_radius(0); quasi-random for k >= 4."""
    if k >= 4:
        rng = np.random.default_rng(0) if rng is None else rng
        n = int((2 * radius / step) ** k)
        n = min(max(n, 64), 20000)
        pts = rng.uniform(-radius, radius, size=(n, k))
        return pts[np.linalg.norm(pts, axis=1) <= radius]
    axes = [np.arange(-radius, radius + step / 2, step) for _ in range(k)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return pts[np.linalg.norm(pts, axis=1) <= radius]


def quasi_isometry_defect(space: Space, atlas_n: Atlas, cfg: BlowupConfig,
                          n: int, pair_budget: int = 256,
                          grid_step: float = 0.25, seed: int = 0) -> DefectRecord:
    """Additive distortion and image density of the blow-up at one scale.

    distortion = max over pairs y0, y1 in B_{r_n R}(x) of
    | |Phi(x,y0) - Phi(x,y1)| - d(y0,y1)/r_n |;
    coverage_gap = max over a grid of B_{R - eps}(0) of the distance to the
    blown-up image of the ball.  Pairs are exhaustive up to ``pair_budget``
    ball points, sampled beyond that.
    """
    r_n = cfg.scales[n]
    R, eps = cfg.window, cfg.tol
    x = space.check_index(cfg.x)
    B = ball(space, x, r_n * R)
    ci = atlas_n.chart_containing(x)
    if B.size < 2:
        return DefectRecord(n=n, r_n=r_n, distortion=np.nan, coverage_gap=np.nan,
                            pairs_used=0, grid_points=0, ball_size=int(B.size),
                            uncovered=True)
    if ci is None:
        return DefectRecord(n=n, r_n=r_n, distortion=np.inf, coverage_gap=np.inf,
                            pairs_used=0, grid_points=0, ball_size=int(B.size),
                            uncovered=True)
    chart = atlas_n.charts[ci]
    proj = np.array([project_to_set(space, chart.domain, int(y)) for y in B])
    img = (chart.coords(proj) - chart.coords(np.array([x]))[0]) / r_n

    if B.size <= pair_budget:
        ii, jj = np.triu_indices(B.size, 1)
    else:
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, B.size, size=pair_budget * 64)
        jj = rng.integers(0, B.size, size=pair_budget * 64)
        keep = ii < jj
        ii, jj = ii[keep], jj[keep]
    if space.dist_table is not None:
        d = space.dist_table[B[ii], B[jj]]
    else:
        d = np.linalg.norm(space.coords[B[ii]] - space.coords[B[jj]], axis=1)
    rescaled = np.linalg.norm(img[ii] - img[jj], axis=1)
    distortion = float(np.max(np.abs(rescaled - d / r_n))) if ii.size else 0.0

    grid = _grid_ball(chart.k, R - eps, grid_step)
    if grid.size:
        gap, _ = cKDTree(img).query(grid, k=1, workers=-1)
        coverage_gap = float(gap.max())
    else:
        coverage_gap = 0.0
    return DefectRecord(n=n, r_n=r_n, distortion=distortion,
                        coverage_gap=coverage_gap, pairs_used=int(ii.size),
                        grid_points=int(grid.shape[0]), ball_size=int(B.size))


def blowup_sweep(space: Space, atlases, cfg: BlowupConfig,
                 pair_budget: int = 256, grid_step: float = 0.25):
    """Defect records over the whole scale ladder.

    ``atlases`` is either one atlas used at every scale or a per-scale list.
    The reported n_0 is the first index beyond which both defects stay below
    the tolerance (None if that never happens)."""
    records = []
    for n in range(len(cfg.scales)):
        atlas_n = atlases[n] if isinstance(atlases, (list, tuple)) else atlases
        records.append(quasi_isometry_defect(space, atlas_n, cfg, n,
                                             pair_budget, grid_step))
    n0 = None
    for n in range(len(records)):
        tail = records[n:]
        if all((not np.isnan(r.distortion)) and r.distortion <= cfg.tol
               and r.coverage_gap <= cfg.tol for r in tail):
            n0 = n
            break
    return records, n0


@dataclass
class RescaledChartReport:
    r_values: tuple
    bilip_measured: list          # per r_j: measured factor on slice pairs
    bilip_closed_form: list       # sqrt(1 + (1+eps)^2 / r_j^2)
    bilip_general: list           # measured factor on unrestricted pairs
    residual_fraction: list       # coverage residual after using radii[:j+1]
    grid_points: int


def rescaled_chart_coverage(space: Space, chart: Chart, radii,
                            m_window: float, tol: float | None = None,
                            base_samples: int = 24, pair_samples: int = 40000,
                            seed: int = 0) -> RescaledChartReport:
    """Coverage of the window bundle by rescaled chart displacement maps.

    For each base point xbar and radius r_j the map x -> (phi(x) -
    phi(xbar)) / r_j spreads the domain over the fiber window; the residual
    fraction measures the part of U x B_{m_window}(0) not within ``tol`` of
    any of those images, and should shrink as the radius ladder descends.
    The measured biLipschitz factor of the paired map (xbar, x) ->
    (xbar, rescaled displacement) is compared with the closed form
    sqrt(1 + (1+eps)^2 / r_j^2) on pair families where one slot is frozen;
    unrestricted pairs can exceed the closed form and are reported
    separately.
    """
    radii = tuple(float(r) for r in radii)
    if any(b >= a for a, b in zip(radii, radii[1:])) or not radii:
        raise ValueError("radii must be strictly decreasing")
    rng = np.random.default_rng(seed)
    dom, phi = chart.domain, chart.phi
    nd = dom.size
    if tol is None:
        tol = 0.35 * m_window

    bilip_measured, bilip_closed, bilip_general = [], [], []
    for r in radii:
        closed = float(np.sqrt(1 + (1 + chart.eps) ** 2 / r ** 2))
        best_slice = 0.0
        best_general = 0.0
        # slice family: frozen probe slot, moving base slot (and vice versa)
        a = rng.integers(0, nd, size=pair_samples)
        b = rng.integers(0, nd, size=pair_samples)
        keep = a != b
        a, b = a[keep], b[keep]
        if space.dist_table is not None:
            d_base = space.dist_table[dom[a], dom[b]]
        else:
            d_base = np.linalg.norm(space.coords[dom[a]] - space.coords[dom[b]], axis=1)
        dphi = np.linalg.norm(phi[a] - phi[b], axis=1)
        # frozen x: image difference (xbar-slot, -dphi/r); domain distance d_base
        num = np.sqrt(d_base**2 + (dphi / r) ** 2)
        best_slice = max(best_slice, float(np.max(num / d_base)),
                         float(np.max(d_base / np.maximum(num, 1e-300))))
        # frozen xbar: image difference (0, dphi/r); domain distance d_base
        ratio2 = (dphi / r) / d_base
        best_slice = max(best_slice, float(np.max(ratio2)))
        # unrestricted pairs: (xbar1, x1) vs (xbar2, x2), all four free
        quad = rng.integers(0, nd, size=(pair_samples, 4))
        quad = quad[(quad[:, 0] != quad[:, 1]) | (quad[:, 2] != quad[:, 3])]
        b1, b2, x1, x2 = quad.T
        if space.dist_table is not None:
            d_bar = space.dist_table[dom[b1], dom[b2]]
            d_pt = space.dist_table[dom[x1], dom[x2]]
        else:
            d_bar = np.linalg.norm(space.coords[dom[b1]] - space.coords[dom[b2]], axis=1)
            d_pt = np.linalg.norm(space.coords[dom[x1]] - space.coords[dom[x2]], axis=1)
        dprod = np.sqrt(d_bar**2 + d_pt**2)
        dv = ((phi[x1] - phi[b1]) - (phi[x2] - phi[b2])) / r
        img = np.sqrt(d_bar**2 + np.sum(dv**2, axis=1))
        ok = dprod > 0
        best_general = max(float(np.max(img[ok] / dprod[ok])),
                           float(np.max(dprod[ok] / np.maximum(img[ok], 1e-300))))
        bilip_measured.append(best_slice)
        bilip_closed.append(closed)
        bilip_general.append(best_general)

    # coverage residual over base sample x window grid
    bases = rng.choice(nd, size=min(base_samples, nd), replace=False)
    k = chart.k
    grid = _grid_ball(k, m_window, max(tol, m_window / 12))
    residual = []
    covered = np.zeros((bases.size, grid.shape[0]), dtype=bool)
    for j, r in enumerate(radii):
        for bi, xb in enumerate(bases):
            img = (phi - phi[xb]) / r
            gap, _ = cKDTree(img).query(grid[~covered[bi]], k=1, workers=-1)
            idx = np.nonzero(~covered[bi])[0]
            covered[bi, idx[gap <= tol]] = True
        residual.append(1.0 - float(covered.mean()))
    return RescaledChartReport(r_values=radii, bilip_measured=bilip_measured,
                               bilip_closed_form=bilip_closed,
                               bilip_general=bilip_general,
                               residual_fraction=residual,
                               grid_points=int(grid.shape[0]))
