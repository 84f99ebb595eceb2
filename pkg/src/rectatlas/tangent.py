"""Tangent-bundle sections and their transport between chart levels.

The bundle assigns each positive-mass point a Euclidean fiber R^k through
the dimensional decomposition.  Sections are stored densely as an (N, kmax)
array whose rows are zero-padded beyond the fiber dimension, which keeps the
module algebra exact and vectorized.  A transport plan caches the per-point
transition differentials of an atlas tower; applying the cached composites
realizes the level-n isomorphism between level-0 chart representations and
level-n ones, and reusing the same cache for the inverse makes the
roundtrip exact to solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .atlas import Atlas, Chart, transition_differentials
from .space import PointSet, Space, point_set

__all__ = [
    "GHBundle", "Section", "make_bundle", "zero_section", "random_section",
    "coordinate_section", "combine", "multiply", "pointwise_norm", "l2_norm",
    "local_dimension", "ChartTransition", "transition", "push_section",
    "pull_form", "duality_defect", "chain_defect",
    "TransportPlan", "build_transport_plan", "iso_step", "iso_inverse",
    "contraction_profile", "norm_preservation", "ConditioningError",
]


class ConditioningError(RuntimeError):
    """Composite transition differential conditioned beyond the biLip bound."""


@dataclass(frozen=True)
class GHBundle:
    """Per-point Euclidean fibers over the dimensional decomposition."""

    space: Space
    fiber_dim: np.ndarray            # per-point k (0 on zero-weight points)

    def __post_init__(self):
        fd = np.asarray(self.fiber_dim, dtype=np.int64)
        if fd.shape != (self.space.n_points,):
            raise ValueError("fiber_dim must be per-point")
        object.__setattr__(self, "fiber_dim", fd)

    @property
    def kmax(self) -> int:
        return int(self.fiber_dim.max())

    def stratum(self, k: int) -> PointSet:
        return np.nonzero((self.fiber_dim == k) & (self.space.weights > 0))[0].astype(np.int64)

    def strata(self) -> dict:
        ks = np.unique(self.fiber_dim[self.space.weights > 0])
        return {int(k): self.stratum(int(k)) for k in ks if k > 0}


def make_bundle(space: Space) -> GHBundle:
    if space.dim_label is None:
        raise ValueError("space carries no dimensional decomposition")
    return GHBundle(space=space, fiber_dim=space.dim_label.copy())


@dataclass
class Section:
    """L2 section: a vector in R^{k(x)} at every point, zero-padded rows."""

    bundle: GHBundle
    values: np.ndarray               # (N, kmax)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape != (self.bundle.space.n_points, self.bundle.kmax):
            raise ValueError("values must be (n_points, kmax)")
        self.values = v

    def check_padding(self) -> bool:
        for x in range(self.bundle.space.n_points):
            if np.any(self.values[x, self.bundle.fiber_dim[x]:] != 0):
                return False
        return True

    def copy(self) -> "Section":
        return Section(self.bundle, self.values.copy())


def zero_section(bundle: GHBundle) -> Section:
    return Section(bundle, np.zeros((bundle.space.n_points, bundle.kmax)))


def random_section(bundle: GHBundle, rng=None, scale: float = 1.0) -> Section:
    rng = np.random.default_rng() if rng is None else rng
    vals = rng.normal(scale=scale, size=(bundle.space.n_points, bundle.kmax))
    for k in range(bundle.kmax):
        vals[bundle.fiber_dim <= k, k] = 0.0
    return Section(bundle, vals)


def coordinate_section(bundle: GHBundle, j: int) -> Section:
    """Constant unit vector e_j on all fibers of dimension > j."""
    vals = np.zeros((bundle.space.n_points, bundle.kmax))
    vals[bundle.fiber_dim > j, j] = 1.0
    return Section(bundle, vals)


def _same_bundle(v: Section, w: Section):
    if v.bundle is not w.bundle and not np.array_equal(v.bundle.fiber_dim, w.bundle.fiber_dim):
        raise ValueError("sections live on different bundles")


def combine(alpha: float, v: Section, beta: float, w: Section) -> Section:
    _same_bundle(v, w)
    return Section(v.bundle, alpha * v.values + beta * w.values)


def multiply(h, v: Section) -> Section:
    """Pointwise module multiplication (h v)(x) = h(x) v(x)."""
    h = np.asarray(h, dtype=float)
    return Section(v.bundle, h[:, None] * v.values)


def pointwise_norm(v: Section) -> np.ndarray:
    return np.linalg.norm(v.values, axis=1)


def l2_norm(v: Section) -> float:
    w = v.bundle.space.weights
    return float(np.sqrt(np.sum(w * np.sum(v.values**2, axis=1))))


def local_dimension(sections: list, A: PointSet, eta: float = 0.0,
                    tol: float = 1e-10):
    """Count of a basis on A, or None when the family is not a basis.

    At each point of A the section values form a k(x) x n matrix; the family
    is independent when that matrix has full column rank and generating when
    it has rank k(x), in both cases off an exceptional set of mass <= eta
    times the mass of A.
    """
    if not sections:
        return None
    bundle = sections[0].bundle
    space = bundle.space
    A = point_set(A, space.n_points)
    massA = float(space.weights[A].sum())
    if massA <= 0:
        raise ValueError("A must have positive mass")
    n = len(sections)
    stacked = np.stack([s.values[A] for s in sections], axis=-1)  # (|A|, kmax, n)
    sv = np.linalg.svd(stacked, compute_uv=False)
    ranks = (sv > tol * np.maximum(sv[:, :1], tol)).sum(axis=1)
    kx = bundle.fiber_dim[A]
    bad_indep = float(space.weights[A[ranks < n]].sum())
    bad_gen = float(space.weights[A[ranks < kx]].sum())
    if bad_indep > eta * massA or bad_gen > eta * massA:
        return None
    return n


# ---------------------------------------------------------------------------
# chart-to-chart transport

@dataclass
class ChartTransition:
    """Shared-domain transition with its estimated per-point differentials.

    Push and pull both consume the same cached matrices, so duality between
    them holds by construction.
    """

    source: Chart
    target: Chart
    shared: PointSet
    matrices: np.ndarray             # (n, k_target, k_source)
    resolved: np.ndarray

    def push(self, v_rows: np.ndarray) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.matrices, v_rows)

    def pull(self, omega_rows: np.ndarray) -> np.ndarray:
        return np.einsum("ni,nij->nj", omega_rows, self.matrices)


def transition(from_chart: Chart, to_chart: Chart, h: float | None = None,
               residual_gate: float = np.inf) -> ChartTransition:
    shared, fit = transition_differentials(from_chart, to_chart, h,
                                           residual_gate=residual_gate)
    keep = fit.resolved
    return ChartTransition(source=from_chart, target=to_chart,
                           shared=shared[keep],
                           matrices=fit.matrices[keep],
                           resolved=fit.resolved)


def _rows_on(section: Section, idx: np.ndarray, k: int) -> np.ndarray:
    return section.values[idx][:, :k]


def push_section(space: Space, from_chart: Chart, to_chart: Chart, v: Section,
                 h: float | None = None, tr: ChartTransition | None = None):
    """Transport section values from one chart representation to another.

    Returns (shared indices, pushed rows in target coordinates, transition).
    """
    tr = transition(from_chart, to_chart, h) if tr is None else tr
    rows = _rows_on(v, tr.shared, from_chart.k)
    return tr.shared, tr.push(rows), tr


def pull_form(space: Space, from_chart: Chart, to_chart: Chart,
              omega_rows: np.ndarray, h: float | None = None,
              tr: ChartTransition | None = None):
    """Pull covector rows (given in to-coordinates) back to from-coordinates."""
    tr = transition(from_chart, to_chart, h) if tr is None else tr
    return tr.shared, tr.pull(np.asarray(omega_rows, dtype=float)), tr


def duality_defect(space: Space, from_chart: Chart, to_chart: Chart,
                   omega_rows: np.ndarray, v: Section,
                   h: float | None = None) -> np.ndarray:
    """Per-point |omega(dphi v) - (phi* omega)(v)|; zero by construction
    because both pairings reuse the same estimated differentials."""
    tr = transition(from_chart, to_chart, h)
    v_rows = _rows_on(v, tr.shared, from_chart.k)
    omega_rows = np.asarray(omega_rows, dtype=float)
    lhs = np.einsum("ni,ni->n", omega_rows, tr.push(v_rows))
    rhs = np.einsum("ni,ni->n", tr.pull(omega_rows), v_rows)
    return np.abs(lhs - rhs)


def chain_defect(c0: Chart, c1: Chart, c2: Chart, v: Section,
                 h: float | None = None) -> np.ndarray:
    """Per-point |A02 v - A12 A01 v| over the common domain."""
    t01 = transition(c0, c1, h)
    t12 = transition(c1, c2, h)
    t02 = transition(c0, c2, h)
    common = np.intersect1d(np.intersect1d(t01.shared, t12.shared, assume_unique=True),
                            t02.shared, assume_unique=True)
    s01 = np.searchsorted(t01.shared, common)
    s12 = np.searchsorted(t12.shared, common)
    s02 = np.searchsorted(t02.shared, common)
    rows = _rows_on(v, common, c0.k)
    direct = np.einsum("nij,nj->ni", t02.matrices[s02], rows)
    stepped = np.einsum("nij,nj->ni", t12.matrices[s12],
                        np.einsum("nij,nj->ni", t01.matrices[s01], rows))
    return np.linalg.norm(direct - stepped, axis=1)


# ---------------------------------------------------------------------------
# transport plans over an atlas tower

@dataclass
class TransportPlan:
    """Cached per-point transition differentials along an aligned tower."""

    space: Space
    bundle: GHBundle
    atlases: list
    covered: np.ndarray               # (N,) bool: covered at every level
    composites: list                  # per level: dict k -> (idx, (n,k,k))
    step_conds: list
    exceptional_mass: float

    @property
    def levels(self) -> int:
        return len(self.atlases) - 1

    def composite_at(self, n: int, k: int):
        return self.composites[n].get(k, (np.empty(0, np.int64), np.empty((0, k, k))))


def _chart_assignment(atlas: Atlas, n_points: int) -> np.ndarray:
    owner = np.full(n_points, -1, dtype=np.int64)
    for ci, c in enumerate(atlas.charts):
        owner[c.domain] = ci
    return owner


def build_transport_plan(space: Space, atlases: list, h: float | None = None,
                         mass_tol: float = 0.05,
                         cond_slack: float = 1e-6) -> TransportPlan:
    """Estimate and cache all step differentials of an atlas tower.

    Per point x and level m >= 1 the step matrix is the differential of the
    transition from the level-(m-1) chart of x to its level-m chart at the
    level-(m-1) coordinates of x.  Composites to level 0 are accumulated and
    their conditioning is checked against the declared biLipschitz slacks.
    """
    bundle = make_bundle(space)
    n = space.n_points
    covered = space.weights > 0
    owners = [_chart_assignment(a, n) for a in atlases]
    for ow in owners:
        covered &= ow >= 0

    kmax = bundle.kmax
    comp = {}
    for k in bundle.strata():
        idx = np.nonzero(covered & (bundle.fiber_dim == k))[0]
        eye = np.broadcast_to(np.eye(k), (idx.size, k, k)).copy()
        comp[k] = (idx, eye)
    composites = [comp]
    step_conds = []

    for m in range(1, len(atlases)):
        prev_atlas, cur_atlas = atlases[m - 1], atlases[m]
        step = {k: np.full((n, k, k), np.nan) for k in bundle.strata()}
        seen = np.zeros(n, dtype=bool)
        for ci, cur_chart in enumerate(cur_atlas.charts):
            k = cur_chart.k
            for pi in np.unique(owners[m - 1][cur_chart.domain]):
                if pi < 0:
                    continue
                prev_chart = prev_atlas.charts[pi]
                sub = cur_chart.domain[owners[m - 1][cur_chart.domain] == pi]
                tr = transition(prev_chart.restrict(sub), cur_chart, h)
                step[k][tr.shared] = tr.matrices
                seen[tr.shared] = True
        covered &= seen | (space.weights <= 0)
        conds = {}
        eps_pair = (1 + atlases[m - 1].eps) ** 2 * (1 + cur_atlas.eps) ** 2
        new_comp = {}
        for k, (idx, mats) in composites[-1].items():
            keep = covered[idx]
            idx2 = idx[keep]
            S = step[k][idx2]
            sv = np.linalg.svd(S, compute_uv=False)
            cond = sv[:, 0] / np.maximum(sv[:, -1], 1e-300)
            conds[k] = cond
            if np.any(cond > eps_pair + cond_slack):
                worst = float(cond.max())
                raise ConditioningError(
                    f"level {m} step conditioning {worst:.6f} exceeds biLip bound "
                    f"{eps_pair:.6f}")
            new_comp[k] = (idx2, np.einsum("nij,njk->nik", S, mats[keep]))
        composites.append(new_comp)
        step_conds.append(conds)

    exceptional = float(space.weights[~covered & (space.weights > 0)].sum())
    if space.total_mass > 0 and exceptional > mass_tol * space.total_mass:
        raise ValueError(f"uncovered mass {exceptional:.3g} exceeds tolerance")
    # re-trim all composites to the final covered set
    final = []
    for level_comp in composites:
        trimmed = {}
        for k, (idx, mats) in level_comp.items():
            keep = covered[idx]
            trimmed[k] = (idx[keep], mats[keep])
        final.append(trimmed)
    return TransportPlan(space=space, bundle=bundle, atlases=list(atlases),
                         covered=covered, composites=final,
                         step_conds=step_conds, exceptional_mass=exceptional)


def iso_step(plan: TransportPlan, v0: Section, n: int) -> Section:
    """Level-n representation of a level-0 section: w(x) = C_n(x) v0(x)."""
    if not 0 <= n <= plan.levels:
        raise ValueError(f"level {n} outside plan range 0..{plan.levels}")
    out = zero_section(plan.bundle)
    for k, (idx, mats) in plan.composites[n].items():
        rows = v0.values[idx][:, :k]
        out.values[idx, :k] = np.einsum("nij,nj->ni", mats, rows)
    return out


def iso_inverse(plan: TransportPlan, w: Section, n: int) -> Section:
    """Inverse transport: solve C_n(x) v0(x) = w(x) with the cached matrices."""
    if not 0 <= n <= plan.levels:
        raise ValueError(f"level {n} outside plan range 0..{plan.levels}")
    out = zero_section(plan.bundle)
    for k, (idx, mats) in plan.composites[n].items():
        rows = w.values[idx][:, :k]
        out.values[idx, :k] = np.linalg.solve(mats, rows[..., None])[..., 0]
    return out


def contraction_profile(plan: TransportPlan, probes: list, n: int | None = None):
    """Per-level contrast between consecutive transports.

    For each level m the matrix bound is max_x ||C_{m+1}(x) - C_m(x)|| and
    the empirical ratio is sup over probe sections of
    ||I_{m+1}(v) - I_m(v)|| / ||v|| in the weighted L2 norms.
    """
    n = plan.levels if n is None else n
    rows = []
    for m in range(n):
        mat_bound = 0.0
        for k in plan.composites[m]:
            _, a = plan.composites[m][k]
            _, b = plan.composites[m + 1][k]
            diff = b - a
            if diff.size:
                mat_bound = max(mat_bound, float(
                    np.max(np.linalg.norm(diff, ord=2, axis=(1, 2)))))
        emp = 0.0
        for v in probes:
            nv = l2_norm(v)
            if nv == 0:
                continue
            d = combine(1.0, iso_step(plan, v, m + 1), -1.0, iso_step(plan, v, m))
            emp = max(emp, l2_norm(d) / nv)
        rows.append({"level": m, "matrix_sup": mat_bound, "empirical": emp})
    return rows


def norm_preservation(plan: TransportPlan, v0: Section, n: int,
                      floor: float | None = None) -> np.ndarray:
    """Relative deviation | |I_n(v)|(x) - |v|(x) | / max(|v|(x), floor)."""
    w = iso_step(plan, v0, n)
    nv = pointwise_norm(v0)
    nw = pointwise_norm(w)
    if floor is None:
        floor = 1e-12 * max(float(nv.max()), 1e-300)
    dev = np.abs(nw - nv) / np.maximum(nv, floor)
    return dev[plan.covered]
