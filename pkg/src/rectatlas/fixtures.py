"""Synthetic spaces with exact charts, planted transitions and known constants.

Every fixture lives in an ambient Euclidean embedding so distances are exact
and reproducible from the seed.  Weights are normalized per stratum so the
chart pushforward density is ~1 and the declared compression constants are
honest.  Atlas towers plant per-level transition maps in closed form
(rotations with a chosen operator-norm defect, or shear steps whose
nonlinear part has a chosen Lipschitz constant), ready for alignment and
transport experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .atlas import Atlas, Chart
from .space import Space

__all__ = ["FixtureSpec", "GroundTruth", "generate", "make_atlas_tower",
           "rotation_matrix"]

KINDS = ("euclidean_patch", "lipschitz_graph", "rotated_patches",
         "mixed_dimension", "piecewise_rotation")


@dataclass(frozen=True)
class FixtureSpec:
    kind: str = "euclidean_patch"
    k: int = 2
    n_points: int = 2000
    lip_g: float = 0.1
    angles: tuple = (np.pi / 9, -np.pi / 9)
    seed: int = 0
    grid: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown fixture kind {self.kind!r}")
        if self.k < 1 or self.n_points < 2 or self.lip_g < 0:
            raise ValueError("fixture parameters out of range")
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))


@dataclass
class GroundTruth:
    """Closed-form constants of a generated fixture."""

    bilip_factor: float = 1.0         # true (1+eps) factor of the charts
    comp: float = 1.0                 # true compression constant
    lip_g: float = 0.0
    transition_rotations: tuple = ()  # per-cell rotation angles (radians)
    doubling: float | None = None     # closed form where known
    notes: str = ""


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _sample_cube(rng, n, k, grid):
    if not grid:
        return rng.uniform(size=(n, k))
    side = int(round(n ** (1 / k)))
    axes = [np.linspace(0, 1, side, endpoint=False) + 0.5 / side for _ in range(k)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def generate(spec: FixtureSpec):
    """Build (space, level-0 atlas, ground truth) for a fixture spec."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "euclidean_patch":
        u = _sample_cube(rng, spec.n_points, spec.k, spec.grid)
        n = u.shape[0]
        space = Space(weights=np.full(n, 1.0 / n), coords=u,
                      dim_label=np.full(n, spec.k))
        chart = Chart(k=spec.k, domain=np.arange(n), phi=u.copy())
        atlas = Atlas(charts=[chart], level=0, eps=0.0)
        truth = GroundTruth(bilip_factor=1.0, comp=1.0,
                            doubling=2.0 ** spec.k,
                            notes="identity chart on a uniform cube sample")
        return space, atlas, truth

    if spec.kind == "lipschitz_graph":
        u = _sample_cube(rng, spec.n_points, spec.k, spec.grid)
        n = u.shape[0]
        g = spec.lip_g * np.sum(np.sin(u), axis=1) / np.sqrt(spec.k)
        coords = np.column_stack([u, g])
        space = Space(weights=np.full(n, 1.0 / n), coords=coords,
                      dim_label=np.full(n, spec.k))
        chart = Chart(k=spec.k, domain=np.arange(n), phi=u.copy(),
                      eps=float(np.sqrt(1 + spec.lip_g**2) - 1))
        atlas = Atlas(charts=[chart], level=0, eps=chart.eps)
        truth = GroundTruth(bilip_factor=float(np.sqrt(1 + spec.lip_g**2)),
                            comp=1.0, lip_g=spec.lip_g,
                            notes="projection chart of a Lipschitz graph")
        return space, atlas, truth

    if spec.kind in ("rotated_patches", "piecewise_rotation"):
        if spec.k != 2:
            raise ValueError("rotation fixtures are planar (k=2)")
        u = _sample_cube(rng, spec.n_points, 2, spec.grid)
        n = u.shape[0]
        space = Space(weights=np.full(n, 1.0 / n), coords=u,
                      dim_label=np.full(n, 2))
        cells = _strip_cells(u, len(spec.angles))
        charts = []
        for i, theta in enumerate(spec.angles):
            dom = np.nonzero(cells == i)[0]
            if dom.size == 0:
                continue
            charts.append(Chart(k=2, domain=dom, phi=u[dom] @ rotation_matrix(theta).T))
        atlas = Atlas(charts=charts, level=0, eps=0.0)
        truth = GroundTruth(bilip_factor=1.0, comp=1.0,
                            transition_rotations=spec.angles,
                            notes="per-cell rotated identity charts")
        return space, atlas, truth

    # mixed_dimension: a segment and a square, far separated
    n1 = max(2, spec.n_points // 3)
    n2 = max(2, spec.n_points - n1)
    t = rng.uniform(size=n1)
    seg = np.column_stack([t, np.full(n1, -2.0)])
    sq = rng.uniform(size=(n2, 2)) + 2.0
    coords = np.vstack([seg, sq])
    weights = np.concatenate([np.full(n1, 1.0 / n1), np.full(n2, 1.0 / n2)])
    labels = np.concatenate([np.full(n1, 1), np.full(n2, 2)])
    space = Space(weights=weights, coords=coords, dim_label=labels)
    chart1 = Chart(k=1, domain=np.arange(n1), phi=t[:, None].copy())
    chart2 = Chart(k=2, domain=np.arange(n1, n1 + n2), phi=sq - 2.0)
    atlas = Atlas(charts=[chart1, chart2], level=0, eps=0.0)
    truth = GroundTruth(bilip_factor=1.0, comp=1.0,
                        notes="disjoint union of a segment (k=1) and a square (k=2)")
    return space, atlas, truth


def _strip_cells(u: np.ndarray, n_cells: int) -> np.ndarray:
    return np.minimum((u[:, 0] * n_cells).astype(int), n_cells - 1)


@dataclass
class PlantedLevel:
    level: int
    delta: float                  # planted transition-differential defect
    eps: float                    # declared chart slack at this level
    angles: tuple = ()            # per-cell rotation angles (rotation towers)
    shear: float = 0.0            # shear step magnitude (graph towers)
    n_cells: int = 1


def make_atlas_tower(spec: FixtureSpec, n_levels: int,
                     delta_of=lambda m: 2.0 ** (-m),
                     kind: str | None = None, max_cells: int = 8):
    """Refinement tower with closed-form per-level transitions.

    Rotation towers (default for planar fixtures) multiply each level's
    charts by per-cell rotations whose operator-norm distance from the
    identity is exactly ``delta_of(m)``; graph towers perturb the chart by a
    shear whose per-level increment has Lipschitz constant ``delta_of(m)``.
    Returns (space, list of atlases level 0..n, planted records, truth).
    """
    space, base, truth = generate(spec)
    kind = kind or ("graph" if spec.kind == "lipschitz_graph" else "rotation")
    atlases = [base]
    planted = [PlantedLevel(level=0, delta=0.0, eps=base.eps,
                            n_cells=len(base.charts))]
    if kind == "rotation":
        for m in range(1, n_levels + 1):
            delta_m = float(delta_of(m))
            theta_m = 2 * np.arcsin(delta_m / 2)
            n_cells = min(2 ** m, max_cells)
            prev = atlases[-1]
            charts = []
            cell_angles = []
            for c in prev.charts:
                if c.k != 2:
                    charts.append(c)     # lower strata ride along unchanged
                    continue
                cells = _cell_of_domain(space, c.domain, n_cells)
                for i in np.unique(cells):
                    dom = c.domain[cells == i]
                    theta = theta_m * (1 if i % 2 == 0 else -1)
                    cell_angles.append(theta)
                    charts.append(Chart(k=2, domain=dom,
                                        phi=c.coords(dom) @ rotation_matrix(theta).T,
                                        eps=c.eps, comp=c.comp))
            atlases.append(Atlas(charts=charts, level=m, eps=prev.eps,
                                 delta=delta_m))
            planted.append(PlantedLevel(level=m, delta=delta_m, eps=prev.eps,
                                        angles=tuple(cell_angles),
                                        n_cells=n_cells))
        return space, atlases, planted, truth

    if kind != "graph":
        raise ValueError(f"unknown tower kind {kind!r}")
    # graph tower: chart_m(u) = (u1 + a_m sin(u2), u2) with a_m = delta_of(m),
    # so the step transition is a shear of Lipschitz constant a_{m-1} - a_m
    base_chart = base.charts[0]
    u = base_chart.phi
    for m in range(1, n_levels + 1):
        a_m = float(delta_of(m))
        phi = np.column_stack([u[:, 0] + a_m * np.sin(u[:, 1]), u[:, 1]])
        eps_shear = float(a_m / 2 + np.sqrt(1 + a_m**2 / 4) - 1)
        eps_m = float((1 + base.eps) * (1 + eps_shear) - 1)
        chart = Chart(k=2, domain=base_chart.domain, phi=phi, eps=eps_m)
        atlases.append(Atlas(charts=[chart], level=m, eps=eps_m, delta=a_m))
        prev_a = float(delta_of(m - 1)) if m > 1 else 0.0
        planted.append(PlantedLevel(level=m, delta=abs(prev_a - a_m) if m > 1 else a_m,
                                    eps=eps_m, shear=a_m))
    return space, atlases, planted, truth


def _cell_of_domain(space: Space, domain: np.ndarray, n_cells: int) -> np.ndarray:
    u = space.coords[domain]
    return np.minimum((u[:, 0] * n_cells).astype(int), n_cells - 1)
