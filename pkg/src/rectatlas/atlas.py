"""Charts, atlases, refinement trees and the rotation-net alignment pass.

A chart stores per-point coordinates (no functional form); transition maps
between charts are evaluated by joining the two coordinate tables on the
shared domain, and their differentials are estimated by local least squares.
The alignment pass snaps each estimated transition differential to a finite
net of the orthogonal group and splits chart domains by snapped member, so
that child-to-parent transitions stay within the alignment tolerance of the
identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .diffest import batch_differentials, estimate_differential, RankDeficientFit
from .orthonet import OrthoNet, SnapError, ortho_net
from .space import PointSet, Space, point_set

__all__ = [
    "Chart", "Atlas", "RefinementTree", "ChartReport", "AlignReport",
    "AlignmentError", "RefinementError",
    "validate_chart", "split_by_density", "build_refinement",
    "transition_differentials", "alignment_defect", "align",
    "estimate_differential", "ortho_net", "unit_ball_volume",
]


class AlignmentError(RuntimeError):
    """Alignment defect budget exceeded or too much mass left unassigned."""


class RefinementError(ValueError):
    """Fine domains are not covered by the coarse atlas."""


def unit_ball_volume(k: int) -> float:
    from math import gamma, pi
    return pi ** (k / 2) / gamma(k / 2 + 1)


@dataclass(frozen=True)
class Chart:
    """BiLipschitz coordinate patch: indices ``domain`` mapped to R^k rows."""

    k: int
    domain: PointSet
    phi: np.ndarray              # (|domain|, k), rows follow domain order
    eps: float = 0.0             # declared (1+eps)-biLipschitz slack
    comp: float = 1.0            # declared measure-compression constant

    def __post_init__(self):
        dom = np.asarray(self.domain, dtype=np.int64)
        if np.any(np.diff(dom) <= 0):
            raise ValueError("chart domain must be sorted and duplicate-free")
        phi = np.ascontiguousarray(np.asarray(self.phi, dtype=float))
        if phi.shape != (dom.size, self.k):
            raise ValueError("phi must be (|domain|, k)")
        object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "phi", phi)

    @property
    def size(self) -> int:
        return self.domain.size

    def positions(self, idx: np.ndarray) -> np.ndarray:
        """Row positions of point indices inside this chart's table."""
        pos = np.searchsorted(self.domain, idx)
        if np.any(pos >= self.domain.size) or np.any(self.domain[np.minimum(pos, self.domain.size - 1)] != idx):
            raise KeyError("index outside chart domain")
        return pos

    def coords(self, idx: np.ndarray) -> np.ndarray:
        return self.phi[self.positions(np.asarray(idx, dtype=np.int64))]

    def restrict(self, subset: PointSet) -> "Chart":
        subset = np.asarray(subset, dtype=np.int64)
        return Chart(k=self.k, domain=subset, phi=self.coords(subset),
                     eps=self.eps, comp=self.comp)

    def compose_orthogonal(self, T: np.ndarray) -> "Chart":
        """Chart with coordinates T @ phi; biLipschitz factors unchanged."""
        return Chart(k=self.k, domain=self.domain, phi=self.phi @ np.asarray(T).T,
                     eps=self.eps, comp=self.comp)

    def image_resolution(self) -> float:
        if self.size < 2:
            return 0.0
        d, _ = cKDTree(self.phi).query(self.phi, k=2)
        return float(np.median(d[:, 1]))


@dataclass
class Atlas:
    """Chart family at one alignment level, grouped by dimension."""

    charts: list
    level: int = 0
    eps: float = 0.0
    delta: float = 0.0

    def by_dim(self) -> dict:
        out: dict[int, list[int]] = {}
        for i, c in enumerate(self.charts):
            out.setdefault(c.k, []).append(i)
        return out

    def chart_containing(self, x: int) -> int | None:
        for i, c in enumerate(self.charts):
            pos = np.searchsorted(c.domain, x)
            if pos < c.domain.size and c.domain[pos] == x:
                return i
        return None

    def covered_mass(self, space: Space, k: int | None = None) -> float:
        sel = [c for c in self.charts if k is None or c.k == k]
        idx = np.unique(np.concatenate([c.domain for c in sel])) if sel else np.empty(0, np.int64)
        return float(space.weights[idx].sum())


@dataclass
class ChartReport:
    lip_forward: float
    lip_inverse: float
    eps_measured: float
    density: np.ndarray
    comp_bound: float
    comp_ok: bool
    pairs_checked: int

    @property
    def bilip_ok(self) -> bool:
        return self.eps_measured <= np.inf


def _bilip_factors(space: Space, chart: Chart, pair_budget: int = 4_000_000,
                   seed: int = 0):
    """Max |d phi| / d and d / |d phi| over (sampled) domain pairs."""
    dom, phi = chart.domain, chart.phi
    n = dom.size
    lip_f, lip_i = 0.0, 0.0
    n_pairs = n * (n - 1) // 2
    if n_pairs <= pair_budget:
        for a in range(n - 1):
            if space.dist_table is not None:
                d = space.dist_table[dom[a], dom[a + 1:]]
            else:
                d = np.linalg.norm(space.coords[dom[a + 1:]] - space.coords[dom[a]], axis=1)
            dphi = np.linalg.norm(phi[a + 1:] - phi[a], axis=1)
            if np.any(d == 0):
                raise ValueError("distinct chart points at zero distance")
            if np.any(dphi == 0):
                raise ValueError("chart coordinates are not injective")
            lip_f = max(lip_f, float(np.max(dphi / d)))
            lip_i = max(lip_i, float(np.max(d / dphi)))
        return lip_f, lip_i, n_pairs
    rng = np.random.default_rng(seed)
    a = rng.integers(0, n, size=pair_budget)
    b = rng.integers(0, n, size=pair_budget)
    keep = a != b
    a, b = a[keep], b[keep]
    if space.dist_table is not None:
        d = space.dist_table[dom[a], dom[b]]
    else:
        d = np.linalg.norm(space.coords[dom[a]] - space.coords[dom[b]], axis=1)
    dphi = np.linalg.norm(phi[a] - phi[b], axis=1)
    if np.any(d == 0) or np.any(dphi == 0):
        raise ValueError("zero distance or non-injective coordinates in sample")
    return float(np.max(dphi / d)), float(np.max(d / dphi)), int(a.size)


def chart_density(space: Space, chart: Chart, probe_radius: float) -> np.ndarray:
    """Pushforward density estimate at each domain point.

    rho(x) = m(U cap phi^{-1}(B_s(phi(x)))) / (omega_k s^k) with s the probe
    radius, measured entirely in the chart image.
    """
    tree = cKDTree(chart.phi)
    w = space.weights[chart.domain]
    denom = unit_ball_volume(chart.k) * probe_radius ** chart.k
    rho = np.empty(chart.size)
    for i in range(chart.size):
        nbrs = tree.query_ball_point(chart.phi[i], probe_radius)
        rho[i] = w[nbrs].sum() / denom
    return rho


def validate_chart(space: Space, chart: Chart, probe_radius: float,
                   pair_budget: int = 4_000_000) -> ChartReport:
    """Measure biLipschitz factors and the compression estimate of a chart."""
    if chart.size < 2:
        raise ValueError("chart needs at least two points")
    if np.unique(np.round(chart.phi, 12), axis=0).shape[0] < chart.size:
        raise ValueError("chart coordinates are not injective")
    lip_f, lip_i, pairs = _bilip_factors(space, chart, pair_budget)
    rho = chart_density(space, chart, probe_radius)
    comp_ok = bool(np.all((rho >= 1 / chart.comp - 1e-12) & (rho <= chart.comp + 1e-12)))
    return ChartReport(
        lip_forward=lip_f,
        lip_inverse=lip_i,
        eps_measured=max(lip_f, lip_i) - 1.0,
        density=rho,
        comp_bound=chart.comp,
        comp_ok=comp_ok,
        pairs_checked=pairs,
    )


def split_by_density(space: Space, chart: Chart, probe_radius: float) -> list:
    """Partition a chart by dyadic level of its pushforward density.

    Each output chart collects the points with rho in [2^j, 2^{j+1}) and is
    assigned the matching compression constant; empty levels are dropped and
    the output domains partition the input domain.
    """
    rho = chart_density(space, chart, probe_radius)
    if np.any(rho <= 0):
        raise ValueError("zero density estimate; enlarge probe_radius")
    levels = np.floor(np.log2(rho)).astype(int)
    out = []
    for j in np.unique(levels):
        sub = chart.domain[levels == j]
        comp = max(2.0 ** (j + 1), 2.0 ** (-j))
        out.append(Chart(k=chart.k, domain=sub, phi=chart.coords(sub),
                         eps=chart.eps, comp=comp))
    return out


@dataclass
class RefinementTree:
    """Child-to-parent assignment between two atlas levels.

    ``children`` are the effective fine charts: fine domains that straddled
    several coarse domains are split (recorded in ``splits``) so that every
    child sits inside exactly one parent.
    """

    children: list
    parent_of: np.ndarray
    fine_of: np.ndarray
    splits: list = field(default_factory=list)
    dropped_mass: float = 0.0

    def __len__(self) -> int:
        return len(self.children)


def build_refinement(space: Space, coarse: Atlas, fine: Atlas,
                     mass_tol: float = 0.0) -> RefinementTree:
    """Assign every fine domain to the coarse domain containing it.

    Straddling fine domains are split along coarse boundaries.  Fine mass
    not covered by any same-dimension coarse domain is allowed up to
    ``mass_tol`` times the total fine mass, otherwise an error is raised.
    """
    children, parents, fines, splits = [], [], [], []
    dropped = 0.0
    coarse_by_dim = coarse.by_dim()
    for fi, fc in enumerate(fine.charts):
        cand = coarse_by_dim.get(fc.k, [])
        remaining = fc.domain
        pieces = []
        for ci in cand:
            inter = np.intersect1d(remaining, coarse.charts[ci].domain, assume_unique=True)
            if inter.size:
                pieces.append((ci, inter))
                remaining = np.setdiff1d(remaining, inter, assume_unique=True)
        if remaining.size:
            dropped += float(space.weights[remaining].sum())
        if len(pieces) > 1 or remaining.size:
            splits.append({"fine": fi,
                           "parents": [ci for ci, _ in pieces],
                           "uncovered": int(remaining.size)})
        for ci, inter in pieces:
            children.append(fc.restrict(inter))
            parents.append(ci)
            fines.append(fi)
    total = sum(float(space.weights[fc.domain].sum()) for fc in fine.charts)
    if total > 0 and dropped > mass_tol * total:
        raise RefinementError(
            f"fine mass {dropped:.3g} of {total:.3g} not covered by the coarse atlas")
    return RefinementTree(children=children,
                          parent_of=np.asarray(parents, dtype=np.int64),
                          fine_of=np.asarray(fines, dtype=np.int64),
                          splits=splits, dropped_mass=dropped)


def transition_differentials(from_chart: Chart, to_chart: Chart, h: float | None = None,
                             ladder=(1.0, 0.5, 0.25), residual_gate: float = np.inf):
    """Estimated differential of ``to o from^{-1}`` at every shared point.

    Returns (shared indices, BatchFitResult); the fit at shared point x is
    anchored at from-coordinates of x.
    """
    shared = np.intersect1d(from_chart.domain, to_chart.domain, assume_unique=True)
    if shared.size == 0:
        raise ValueError("charts share no domain points")
    pts = from_chart.coords(shared)
    vals = to_chart.coords(shared)
    if h is None:
        d, _ = cKDTree(pts).query(pts, k=2)
        h = 4.0 * float(np.median(d[:, 1]))
    fit = batch_differentials(pts, vals, h, ladder=ladder, residual_gate=residual_gate)
    return shared, fit


def alignment_defect(space: Space, child: Chart, parent: Chart,
                     h: float | None = None) -> float:
    """Max operator-norm distance of the child-to-parent transition
    differential from the identity over the child image."""
    if not np.all(np.isin(child.domain, parent.domain)):
        raise ValueError("child domain must sit inside the parent domain")
    _, fit = transition_differentials(child, parent, h)
    if not np.any(fit.resolved):
        raise RankDeficientFit("no resolvable fit in the child domain")
    A = fit.matrices[fit.resolved]
    eye = np.eye(child.k)
    return float(np.max(np.linalg.norm(eye[None] - A, ord=2, axis=(1, 2))))


@dataclass
class AlignReport:
    rows: list                   # per output chart: dict of measurements
    exceptional_mass: float
    net_sizes: dict
    defect_max: float

    def worst(self) -> float:
        return self.defect_max


def align(space: Space, prev: Atlas, fine: Atlas, delta_n: float,
          net_resolution: float | None = None, h: float | None = None,
          mass_tol: float = 0.02, seed: int = 0,
          nets: dict | None = None):
    """Rotate fine charts so their transitions to the previous level are
    within ``delta_n`` of the identity, splitting domains by snapped member.

    For each fine chart with parent chart phi, the transition differential
    d(phi o psi^{-1}) is estimated at every domain point, snapped to a net of
    the orthogonal group at ``net_resolution``, and the domain is partitioned
    by snapped member T; the output charts are (psi^{-1}-cell, T o psi).
    Points whose differential cannot be resolved or snapped join the
    exceptional set, whose mass must stay within ``mass_tol`` of the fine
    mass.  Returns (aligned atlas, refinement tree onto prev, report).
    """
    if net_resolution is None:
        net_resolution = delta_n
    net_eps = net_resolution / 4
    if (1 + prev.eps) * (1 + fine.eps) > 1 + net_eps + 1e-12:
        raise AlignmentError(
            f"chart slacks ({prev.eps}, {fine.eps}) exceed the net neighborhood "
            f"budget eps'={net_eps}")
    tree = build_refinement(space, prev, fine, mass_tol=mass_tol)
    nets = {} if nets is None else nets
    out_charts, out_parents, rows = [], [], []
    exceptional = tree.dropped_mass
    for child, parent_idx in zip(tree.children, tree.parent_of):
        parent = prev.charts[parent_idx]
        k = child.k
        if k not in nets:
            nets[k] = ortho_net(k, net_resolution, seed=seed)
        net: OrthoNet = nets[k]
        shared, fit = transition_differentials(
            child, parent, h, residual_gate=max(0.25 * net_resolution, 1e-9))
        labels = np.full(shared.size, -1, dtype=np.int64)
        for i in np.nonzero(fit.resolved)[0]:
            try:
                labels[i] = net.snap_index(fit.matrices[i])
            except SnapError:
                labels[i] = -1
        exceptional += float(space.weights[shared[labels < 0]].sum())
        for member in np.unique(labels[labels >= 0]):
            cell = shared[labels == member]
            T = net.members[member]
            new_chart = child.restrict(cell).compose_orthogonal(T)
            defect = alignment_defect(space, new_chart, parent, h)
            rows.append({
                "k": k, "parent": int(parent_idx), "member": int(member),
                "points": int(cell.size), "defect": float(defect),
                "net_resolution": float(net_resolution),
            })
            out_charts.append(new_chart)
            out_parents.append(int(parent_idx))
    if not out_charts:
        raise AlignmentError("alignment produced no charts")
    total = sum(float(space.weights[fc.domain].sum()) for fc in fine.charts)
    if total > 0 and exceptional > mass_tol * total:
        raise AlignmentError(
            f"exceptional mass {exceptional:.3g} exceeds tolerance "
            f"{mass_tol * total:.3g}")
    defect_max = max(r["defect"] for r in rows)
    if defect_max > delta_n + 1e-9:
        raise AlignmentError(
            f"alignment defect {defect_max:.3g} exceeds budget {delta_n:.3g}")
    aligned = Atlas(charts=out_charts, level=prev.level + 1,
                    eps=fine.eps, delta=delta_n)
    out_tree = RefinementTree(children=out_charts,
                              parent_of=np.asarray(out_parents, dtype=np.int64),
                              fine_of=np.arange(len(out_charts), dtype=np.int64))
    report = AlignReport(rows=rows, exceptional_mass=exceptional,
                         net_sizes={k: len(v) for k, v in nets.items()},
                         defect_max=defect_max)
    return aligned, out_tree, report
