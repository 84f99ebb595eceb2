"""Finite covering nets of the orthogonal group with a deterministic snap map.

A net for O(R^k) at resolution delta is a finite ordered list of orthogonal
matrices such that every operator T with ``norm(T), norm(T^-1) <= 1 + eps``
(eps = delta/4) lies within operator-norm distance delta of some member, and
members are pairwise more than delta apart.  ``snap`` assigns the first
member (in list order) whose open delta-ball contains the input, so the
assignment is reproducible and each member snaps to itself.

Construction is exact for k <= 2 (sign pair; angle grid tensored with the
reflection coset).  For k = 3 the rotation component is built by a Lloyd
relaxation on the unit-quaternion model of SO(3), symmetrized over the
octahedral group for speed, followed by an unfolded pair-repulsion pass that
enforces the separation; Monte-Carlo validation retries with a denser,
reseeded configuration on failure.  For k >= 4 the same randomized scheme
runs without symmetrization and small resolutions may exhaust the retry
budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["OrthoNet", "NetConstructionError", "SnapError", "ortho_net"]


class NetConstructionError(RuntimeError):
    """Coverage or separation validation failed after the retry budget."""


class SnapError(ValueError):
    """No member within the snap radius of the input."""


# ---------------------------------------------------------------------------
# quaternion helpers (unit quaternions double-cover SO(3))

def _qmul(p, q):
    w1, x1, y1, z1 = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    w2, x2, y2, z2 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def _qconj(q):
    out = np.array(q, copy=True)
    out[..., 1:] *= -1
    return out


def _haar_quats(rng, n):
    v = rng.standard_normal((n, 4))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _quat_to_mat(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def _mat_to_quat(R):
    w = np.sqrt(np.maximum(0.0, 1 + R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2])) / 2
    x = np.sqrt(np.maximum(0.0, 1 + R[..., 0, 0] - R[..., 1, 1] - R[..., 2, 2])) / 2
    y = np.sqrt(np.maximum(0.0, 1 - R[..., 0, 0] + R[..., 1, 1] - R[..., 2, 2])) / 2
    z = np.sqrt(np.maximum(0.0, 1 - R[..., 0, 0] - R[..., 1, 1] + R[..., 2, 2])) / 2
    x = np.copysign(x, R[..., 2, 1] - R[..., 1, 2])
    y = np.copysign(y, R[..., 0, 2] - R[..., 2, 0])
    z = np.copysign(z, R[..., 1, 0] - R[..., 0, 1])
    q = np.stack([w, x, y, z], axis=-1)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


# chord = Euclidean distance of unit quaternions = 2 sin(alpha/2);
# operator-norm distance of the corresponding rotations = 2 sin(alpha)
def _chord_to_dop(c):
    alpha = 2 * np.arcsin(np.clip(np.asarray(c) / 2, 0.0, 1.0))
    return 2 * np.sin(np.minimum(alpha, np.pi / 2))


def _dop_to_chord(t):
    alpha = np.arcsin(np.clip(t / 2, 0.0, 1.0))
    return 2 * np.sin(alpha / 2)


def _binary_octahedral():
    q = []
    for i in range(4):
        for s in (1.0, -1.0):
            v = np.zeros(4)
            v[i] = s
            q.append(v)
    for signs in np.ndindex(2, 2, 2, 2):
        q.append(np.array([0.5 if s == 0 else -0.5 for s in signs]))
    r = 1 / np.sqrt(2)
    for i in range(4):
        for j in range(i + 1, 4):
            for si in (r, -r):
                for sj in (r, -r):
                    v = np.zeros(4)
                    v[i] = si
                    v[j] = sj
                    q.append(v)
    return np.array(q)


# ---------------------------------------------------------------------------
# SO(3) net construction: symmetrized Lloyd + unfolded repulsion

def _lloyd_symmetrized(G, X, pool, iters):
    n_free = len(X)
    for _ in range(iters):
        members = _qmul(G[:, None, :], X[None, :, :]).reshape(-1, 4)
        _, idx = cKDTree(members).query(pool, k=1, workers=-1)
        gi, xi = np.divmod(idx, n_free)
        local = _qmul(_qconj(G[gi]), pool)
        sign = np.sign(np.einsum("ij,ij->i", local, X[xi]))
        sign[sign == 0] = 1.0
        local *= sign[:, None]
        acc = np.zeros_like(X)
        np.add.at(acc, xi, local)
        norms = np.linalg.norm(acc, axis=1, keepdims=True)
        ok = norms[:, 0] > 1e-12
        X[ok] = acc[ok] / norms[ok]
    return X


def _anneal_symmetrized(G, X, delta, target, rounds):
    n_free = len(X)
    for _ in range(rounds):
        members = _qmul(G[:, None, :], X[None, :, :]).reshape(-1, 4)
        dd, ii = cKDTree(members).query(members, k=2, workers=-1)
        dop = _chord_to_dop(dd[:, 1])
        bad = np.nonzero(dop <= delta * target)[0]
        if bad.size == 0:
            break
        moved = np.zeros(n_free, dtype=bool)
        for mm in bad[np.argsort(dop[bad])]:
            gi, xi = divmod(int(mm), n_free)
            if moved[xi]:
                continue
            other = _qmul(_qconj(G[gi]), members[ii[mm, 1]])
            if np.dot(other, X[xi]) < 0:
                other = -other
            v = X[xi] - other
            nv = np.linalg.norm(v)
            if nv < 1e-12:
                continue
            moved[xi] = True
            step = (delta * target * 1.03 - dop[mm]) / 2
            X[xi] = X[xi] + v / nv * (step / 2)
            X[xi] /= np.linalg.norm(X[xi])
    return X


def _repel_pairs(Q, delta, target, rounds):
    """Push every rotation pair beyond delta*target; members move freely."""
    for rd in range(rounds):
        m = len(Q)
        both = np.vstack([Q, -Q])
        pairs = cKDTree(both).query_pairs(_dop_to_chord(delta * target), output_type="ndarray")
        if pairs.size == 0:
            return Q, True
        a, b = pairs[:, 0] % m, pairs[:, 1] % m
        keep = a != b
        pairs, a, b = pairs[keep], a[keep], b[keep]
        if len(pairs) == 0:
            return Q, True
        key = np.minimum(a, b).astype(np.int64) * m + np.maximum(a, b)
        _, uniq = np.unique(key, return_index=True)
        pairs, a, b = pairs[uniq], a[uniq], b[uniq]
        pa, pb = both[pairs[:, 0]], both[pairs[:, 1]]
        dop = _chord_to_dop(np.linalg.norm(pa - pb, axis=1))
        step = (delta * target * 1.03 - dop) / 2
        direction = pa - pb
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        ok = norms[:, 0] > 1e-14
        direction[ok] /= norms[ok]
        disp = direction * (step / 2)[:, None]
        sign_a = np.where(pairs[:, 0] < m, 1.0, -1.0)[:, None]
        sign_b = np.where(pairs[:, 1] < m, 1.0, -1.0)[:, None]
        upd = np.zeros_like(Q)
        np.add.at(upd, a, disp * sign_a)
        np.add.at(upd, b, -disp * sign_b)
        Q = Q + upd
        Q /= np.linalg.norm(Q, axis=1, keepdims=True)
    return Q, False


def _so3_rotations(delta: float, seed: int, grow: float = 1.0) -> np.ndarray:
    """Quaternions of an SO(3) net: pairwise d_op > delta, covering ~0.8 delta."""
    rng = np.random.default_rng(seed)
    n_free = max(2, int(round(grow * 3.6 / ((1 + 0.5 * delta) * delta**3))))
    G = _binary_octahedral()
    X = _haar_quats(rng, n_free)
    pool_per_member = 150 if n_free <= 200 else 30
    pool = _haar_quats(rng, pool_per_member * 24 * n_free)
    X = _lloyd_symmetrized(G, X, pool, 10)
    for _ in range(3):
        X = _anneal_symmetrized(G, X, delta, 1.05, 2)
        X = _lloyd_symmetrized(G, X, pool, 5)
    members = _qmul(G[:, None, :], X[None, :, :]).reshape(-1, 4)
    sign = np.where(members[:, :1] >= 0, 1.0, -1.0)
    canonical = np.unique(np.round(members * sign, 10), axis=0)
    canonical /= np.linalg.norm(canonical, axis=1, keepdims=True)
    rotations, converged = _repel_pairs(canonical, delta, 1.01, 300)
    if not converged:
        raise NetConstructionError(f"separation pass did not converge (delta={delta})")
    return rotations


def _haar_orthogonal(rng, n, k):
    """Haar sample of O(k) via QR with sign-fixed diagonal."""
    z = rng.standard_normal((n, k, k))
    q, r = np.linalg.qr(z)
    d = np.sign(np.einsum("nii->ni", r))
    d[d == 0] = 1.0
    return q * d[:, None, :]


def _generic_rotations(delta: float, seed: int, k: int, grow: float = 1.0) -> np.ndarray:
    """Greedy packing + repulsion over SO(k) matrices for k >= 4."""
    rng = np.random.default_rng(seed)
    members: list[np.ndarray] = []
    stream = 0
    misses = 0
    while misses < 4000 * grow:
        cand = _haar_orthogonal(rng, 256, k)
        cand = cand[np.linalg.det(cand) > 0]
        for T in cand:
            stream += 1
            if not members:
                members.append(T)
                continue
            d = np.linalg.norm(np.stack(members) - T, ord=2, axis=(1, 2))
            if d.min() > 0.8 * delta:
                members.append(T)
                misses = 0
            else:
                misses += 1
            if misses >= 4000 * grow:
                break
    return np.stack(members)


# ---------------------------------------------------------------------------
# net object

@dataclass
class OrthoNet:
    """Ordered finite net of O(R^k) with first-hit snap assignment."""

    k: int
    delta: float
    members: np.ndarray                 # (m, k, k), orthogonal, fixed order
    eps: float
    separation: float = np.inf          # validated min pairwise distance
    coverage: float = 0.0               # validated max probe distance
    probes_checked: int = 0
    _quats: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.members)

    def _distances(self, T: np.ndarray) -> np.ndarray:
        """Operator-norm distance of T to every member."""
        diff = self.members - T[None]
        return np.linalg.norm(diff, ord=2, axis=(1, 2))

    def snap_index(self, T) -> int:
        """Index of the first member whose open delta-ball contains T."""
        T = np.asarray(T, dtype=float)
        if T.shape != (self.k, self.k):
            raise ValueError(f"expected a {self.k}x{self.k} matrix")
        if self.k == 3 and self._quats is not None:
            idx = self._snap3(T)
        else:
            d = self._distances(T)
            hits = np.nonzero(d < self.delta)[0]
            idx = int(hits[0]) if hits.size else -1
        if idx < 0:
            raise SnapError(f"no net member within {self.delta} of the input")
        return idx

    def snap(self, T) -> np.ndarray:
        return self.members[self.snap_index(T)]

    def snap_many(self, Ts) -> np.ndarray:
        """Member indices for a stack of matrices."""
        Ts = np.asarray(Ts, dtype=float)
        return np.array([self.snap_index(T) for T in Ts], dtype=np.int64)

    def _snap3(self, T: np.ndarray) -> int:
        # restrict to the matching determinant component; candidates from the
        # quaternion tree around the polar factor, then exact spectral norms
        m = len(self._quats)
        reflected = bool(np.linalg.det(T) < 0)
        S = T @ _J3 if reflected else T
        U, sig, Vt = np.linalg.svd(S)
        if np.linalg.det(U @ Vt) < 0:
            # polar factor landed in the wrong component; no rotation nearby
            return -1
        offset = float(np.max(np.abs(sig - 1.0)))
        q = _mat_to_quat(U @ Vt)
        radius = _dop_to_chord(min(self.delta + offset + 1e-9, 1.999))
        cand = self._tree.query_ball_point(np.vstack([q, -q]), radius)
        ids = np.unique(np.concatenate([np.asarray(c, dtype=np.int64) for c in cand])
                        if any(len(c) for c in cand) else np.empty(0, dtype=np.int64)) % m
        ids = np.unique(ids)
        if ids.size == 0:
            return -1
        R = _quat_to_mat(self._quats[ids])
        d = np.linalg.norm(R - S[None], ord=2, axis=(1, 2))
        hits = ids[d < self.delta]
        if hits.size == 0:
            return -1
        first = int(hits.min())
        return first + m if reflected else first

    def __post_init__(self):
        if self.k == 3 and self._quats is not None:
            self._tree = cKDTree(np.vstack([self._quats, -self._quats]))


_J3 = np.diag([1.0, 1.0, -1.0])


def _net_members_k1() -> np.ndarray:
    return np.array([[[1.0]], [[-1.0]]])


def _net_members_k2(delta: float) -> np.ndarray:
    # rotations at angle spacing with chord ~1.4 delta: pairwise > delta,
    # covering radius ~0.7 delta, so O^{delta/4} probes stay within delta
    chord = min(1.4 * delta, 1.8)
    step = 2 * np.arcsin(chord / 2)
    n = int(np.ceil(2 * np.pi / step))
    angles = np.arange(n) * (2 * np.pi / n)
    c, s = np.cos(angles), np.sin(angles)
    rotations = np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)
    reflections = rotations @ np.diag([1.0, -1.0])
    return np.concatenate([rotations, reflections])


def _sample_probes(rng, n, k, eps):
    """Operators with spectrum in [1/(1+eps), 1+eps]: a sample of O^eps."""
    U = _haar_orthogonal(rng, n, k)
    V = _haar_orthogonal(rng, n, k)
    sig = rng.uniform(1 / (1 + eps), 1 + eps, size=(n, k))
    return U * sig[:, None, :] @ np.swapaxes(V, 1, 2)


def _validate(net: OrthoNet, rng, probes: int) -> tuple[bool, str]:
    m = len(net.members)
    # orthogonality
    eye = np.eye(net.k)
    gram_err = np.max(np.abs(np.swapaxes(net.members, 1, 2) @ net.members - eye))
    if gram_err > 1e-10:
        return False, f"member orthogonality error {gram_err:.2e}"
    # pairwise separation
    if net.k == 3 and net._quats is not None:
        both = np.vstack([net._quats, -net._quats])
        dd, ii = cKDTree(both).query(both, k=2, workers=-1)
        mask = (ii[:, 1] % len(net._quats)) != (np.arange(len(both)) % len(net._quats))
        sep = float(_chord_to_dop(dd[mask, 1]).min()) if mask.any() else np.inf
    else:
        flat = net.members.reshape(m, -1)
        sep = np.inf
        for i in range(m - 1):
            d = np.linalg.norm(net.members[i + 1:] - net.members[i], ord=2, axis=(1, 2))
            sep = min(sep, float(d.min()))
    net.separation = sep
    if sep <= net.delta:
        return False, f"member separation {sep:.4f} <= delta"
    # probe coverage through the snap path itself
    T = _sample_probes(rng, probes, net.k, net.eps)
    worst = 0.0
    for t in T:
        try:
            j = net.snap_index(t)
        except SnapError:
            return False, "probe not covered"
        worst = max(worst, float(np.linalg.norm(t - net.members[j], ord=2)))
    net.coverage = worst
    net.probes_checked = probes
    if worst >= net.delta:
        return False, f"probe coverage {worst:.4f} >= delta"
    return True, ""


def ortho_net(k: int, delta: float, seed: int = 0, probes: int = 2000,
              retries: int = 3) -> OrthoNet:
    """Build and validate a delta-net of O(R^k) with snap map.

    The validated coverage property is over a probe sample of O^eps with
    eps = delta/4; construction errors out when validation still fails after
    ``retries`` reseeded, densified attempts.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if delta <= 0:
        raise ValueError("delta must be positive")
    eps = delta / 4
    last = ""
    for attempt in range(retries):
        rng = np.random.default_rng(seed + 7919 * attempt)
        grow = 1.12 ** attempt
        quats = None
        if k == 1:
            members = _net_members_k1()
        elif k == 2:
            members = _net_members_k2(delta / (1.06 ** attempt))
        else:
            maker = _so3_rotations if k == 3 else None
            try:
                if k == 3:
                    quats = _so3_rotations(delta, seed + 7919 * attempt, grow)
                    rot = _quat_to_mat(quats)
                    members = np.concatenate([rot, rot @ _J3])
                else:
                    rot = _generic_rotations(delta, seed + 7919 * attempt, k, grow)
                    refl = rot @ np.diag([1.0] * (k - 1) + [-1.0])
                    members = np.concatenate([rot, refl])
            except NetConstructionError as exc:
                last = str(exc)
                continue
        net = OrthoNet(k=k, delta=delta, members=members, eps=eps, _quats=quats)
        ok, last = _validate(net, rng, probes)
        if ok:
            return net
    raise NetConstructionError(
        f"ortho_net(k={k}, delta={delta}) failed after {retries} attempts: {last}")
