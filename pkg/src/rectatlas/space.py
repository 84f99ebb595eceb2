"""Finite weighted point clouds with a distance oracle.

A space is a set of indexed points carrying nonnegative weights (the atomic
measure) and either embedded Euclidean coordinates or an explicit dense
distance table.  All balls are open: ``ball(x, r)`` collects the points at
distance strictly below ``r``, so the center always belongs to its own ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Space",
    "PointSet",
    "point_set",
    "ValidationReport",
    "validate_space",
    "ball",
    "measure",
    "density",
    "density_one_points",
    "doubling_constant",
    "ball_average",
]

# A PointSet is a sorted, duplicate-free int64 index array.
PointSet = np.ndarray


def point_set(indices, n_points: int) -> PointSet:
    """Normalize an index collection into a sorted duplicate-free array."""
    idx = np.unique(np.asarray(indices, dtype=np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= n_points):
        raise IndexError(f"point index out of range 0..{n_points - 1}")
    return idx


@dataclass(frozen=True)
class Space:
    """Discrete metric measure space.

    Exactly one of ``coords`` (points embedded in R^d, Euclidean distance)
    or ``dist_table`` (dense symmetric N x N matrix) defines the metric.
    ``weights`` are the per-point masses; ``dim_label`` optionally assigns
    each point to its dimensional stratum.
    """

    weights: np.ndarray
    coords: np.ndarray | None = None
    dist_table: np.ndarray | None = None
    dim_label: np.ndarray | None = None

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "weights", w)
        if (self.coords is None) == (self.dist_table is None):
            raise ValueError("exactly one of coords/dist_table must be given")
        if self.coords is not None:
            c = np.ascontiguousarray(np.asarray(self.coords, dtype=float))
            if c.ndim != 2 or c.shape[0] != w.size:
                raise ValueError("coords must be (n_points, ambient_dim)")
            object.__setattr__(self, "coords", c)
        else:
            t = np.ascontiguousarray(np.asarray(self.dist_table, dtype=float))
            if t.shape != (w.size, w.size):
                raise ValueError("dist_table must be (n_points, n_points)")
            object.__setattr__(self, "dist_table", t)
        if self.dim_label is not None:
            lbl = np.asarray(self.dim_label, dtype=np.int64)
            if lbl.shape != (w.size,):
                raise ValueError("dim_label must be per-point")
            object.__setattr__(self, "dim_label", lbl)

    @property
    def n_points(self) -> int:
        return self.weights.size

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def check_index(self, x: int) -> int:
        x = int(x)
        if not 0 <= x < self.n_points:
            raise IndexError(f"point index {x} out of range 0..{self.n_points - 1}")
        return x

    def dist(self, i: int, j: int) -> float:
        i, j = self.check_index(i), self.check_index(j)
        if self.dist_table is not None:
            return float(self.dist_table[i, j])
        return float(np.linalg.norm(self.coords[i] - self.coords[j]))

    def dist_row(self, i: int) -> np.ndarray:
        """Distances from point ``i`` to every point."""
        i = self.check_index(i)
        if self.dist_table is not None:
            return self.dist_table[i]
        return np.linalg.norm(self.coords - self.coords[i], axis=1)

    def dims(self) -> np.ndarray:
        """Sorted distinct dimension labels (0 if unlabeled)."""
        if self.dim_label is None:
            return np.array([0], dtype=np.int64)
        return np.unique(self.dim_label)

    def stratum(self, k: int) -> PointSet:
        """Indices of the points labeled with dimension ``k``."""
        if self.dim_label is None:
            raise ValueError("space carries no dim_label")
        return np.nonzero(self.dim_label == k)[0].astype(np.int64)

    def resolution(self) -> float:
        """Median nearest-neighbor distance: the sampling resolution.

        Scale parameters below this value are not meaningful; callers that
        evaluate shrinking-radius limits should stop here.
        """
        if self.n_points < 2:
            return 0.0
        if self.coords is not None:
            from scipy.spatial import cKDTree

            d, _ = cKDTree(self.coords).query(self.coords, k=2)
            return float(np.median(d[:, 1]))
        t = self.dist_table + np.diag(np.full(self.n_points, np.inf))
        return float(np.median(t.min(axis=1)))


@dataclass
class ValidationReport:
    """Axiom violations found in a space; empty means every check passed."""

    violations: list = field(default_factory=list)
    checked_triples: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, axiom: str, witness: tuple, detail: float):
        self.violations.append({"axiom": axiom, "witness": witness, "detail": detail})


def validate_space(space: Space, triple_samples: int = 20000, seed: int = 0,
                   tol: float = 1e-9) -> ValidationReport:
    """Check the metric-measure axioms, reporting violations as data.

    Diagonal, symmetry and weight checks are exhaustive.  The triangle
    inequality is scanned exhaustively when the number of triples fits in
    ``triple_samples``, otherwise on that many random triples.
    """
    report = ValidationReport()
    n = space.n_points
    w = space.weights
    for i in np.nonzero(w < 0)[0]:
        report.add("nonnegative_weight", (int(i),), float(w[i]))
    if space.total_mass <= 0:
        report.add("positive_total_mass", (), space.total_mass)

    if space.dist_table is not None:
        t = space.dist_table
        bad = np.nonzero(np.abs(np.diag(t)) > tol)[0]
        for i in bad:
            report.add("zero_diagonal", (int(i),), float(t[i, i]))
        asym = np.abs(t - t.T)
        ii, jj = np.nonzero(np.triu(asym, 1) > tol)
        for i, j in zip(ii[:100], jj[:100]):
            report.add("symmetry", (int(i), int(j)), float(asym[i, j]))
        ii, jj = np.nonzero(np.triu(t < -tol, 1))
        for i, j in zip(ii[:100], jj[:100]):
            report.add("nonnegative_distance", (int(i), int(j)), float(t[i, j]))

    # Triangle inequality.  Euclidean coordinates satisfy it identically, but
    # the scan is kept for both representations so planted tables are caught.
    n_triples = n * (n - 1) * (n - 2) // 6 if n >= 3 else 0
    if n_triples == 0:
        return report
    if n_triples <= triple_samples:
        idx = np.arange(n)
        triples = np.array(
            [(i, j, l) for i in idx for j in idx[idx > i] for l in idx[idx > j]]
        )
    else:
        rng = np.random.default_rng(seed)
        triples = rng.integers(0, n, size=(triple_samples, 3))
        triples = triples[
            (triples[:, 0] != triples[:, 1])
            & (triples[:, 1] != triples[:, 2])
            & (triples[:, 0] != triples[:, 2])
        ]
    report.checked_triples = len(triples)
    for i, j, l in triples:
        dij, dil, dlj = space.dist(i, j), space.dist(i, l), space.dist(l, j)
        for a, b, c, wit in (
            (dij, dil, dlj, (i, l, j)),
            (dil, dij, dlj, (i, j, l)),
            (dlj, dil, dij, (l, i, j)),
        ):
            if a > b + c + tol:
                report.add("triangle", tuple(int(v) for v in wit), float(a - b - c))
                break
    return report


def ball(space: Space, x: int, r: float) -> PointSet:
    """Open ball: indices of points with dist(x, .) < r.  Requires r > 0."""
    if r <= 0:
        raise ValueError("ball radius must be positive")
    return np.nonzero(space.dist_row(x) < r)[0].astype(np.int64)


def measure(space: Space, E: PointSet) -> float:
    E = np.asarray(E, dtype=np.int64)
    return float(space.weights[E].sum())


def density(space: Space, E: PointSet, x: int, r: float) -> float:
    """Mass ratio m(E and B_r(x)) / m(B_r(x)) in [0, 1]."""
    B = ball(space, x, r)
    mb = measure(space, B)
    if mb <= 0:
        raise ValueError(f"ball of radius {r} at {x} has zero mass")
    mask = np.zeros(space.n_points, dtype=bool)
    mask[np.asarray(E, dtype=np.int64)] = True
    return float(space.weights[B[mask[B]]].sum() / mb)


def density_one_points(space: Space, E: PointSet, scales, eta: float) -> PointSet:
    """Points of E that look like density-1 points at every probe scale.

    Keeps x in E when density(E, x, r) >= 1 - eta for all r in ``scales``;
    the scale list must be decreasing and should stay above the sampling
    resolution for the answer to be meaningful.
    """
    scales = [float(r) for r in scales]
    if not scales or any(b >= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be a nonempty decreasing list")
    E = point_set(E, space.n_points)
    keep = [
        x for x in E
        if all(density(space, E, int(x), r) >= 1.0 - eta for r in scales)
    ]
    return np.asarray(keep, dtype=np.int64)


def doubling_constant(space: Space, radii, points: PointSet | None = None) -> float:
    """Largest sampled ratio m(B_2r(x)) / m(B_r(x)); always >= 1."""
    xs = np.arange(space.n_points) if points is None else np.asarray(points)
    best = 1.0
    for x in xs:
        row = space.dist_row(int(x))
        for r in radii:
            inner = float(space.weights[row < r].sum())
            if inner <= 0:
                raise ValueError(f"empty ball at (x={x}, r={r})")
            outer = float(space.weights[row < 2 * r].sum())
            best = max(best, outer / inner)
    return best


def ball_average(space: Space, f, x: int, r: float) -> float:
    """Weighted mean of a per-point scalar over the open ball B_r(x)."""
    f = np.asarray(f, dtype=float)
    B = ball(space, x, r)
    mb = float(space.weights[B].sum())
    if mb <= 0:
        raise ValueError(f"ball of radius {r} at {x} has zero mass")
    return float(np.dot(space.weights[B], f[B]) / mb)
