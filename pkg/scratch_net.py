"""Prototype: symmetrized Lloyd CVT net on SO(3) in operator-norm metric."""
import numpy as np
from scipy.spatial import cKDTree
import time

# binary octahedral group: 48 unit quaternions
def binary_octahedral():
    q = []
    # 8: +-1, +-i, +-j, +-k
    for i in range(4):
        for s in (1.0, -1.0):
            v = np.zeros(4); v[i] = s; q.append(v)
    # 16: (+-1 +-i +-j +-k)/2
    for a in (0.5, -0.5):
        for b in (0.5, -0.5):
            for c in (0.5, -0.5):
                for d in (0.5, -0.5):
                    q.append(np.array([a, b, c, d]))
    # 24: (+-1 +-i)/sqrt2 over all coordinate pairs
    r = 1 / np.sqrt(2)
    for i in range(4):
        for j in range(i + 1, 4):
            for si in (r, -r):
                for sj in (r, -r):
                    v = np.zeros(4); v[i] = si; v[j] = sj; q.append(v)
    return np.array(q)

def qmul(p, q):
    # hamilton product, p,q (...,4)
    w1, x1, y1, z1 = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    w2, x2, y2, z2 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        w1*w2 - x1*x2 - y1*y2 - z1*z2,
        w1*x2 + x1*w2 + y1*z2 - z1*y2,
        w1*y2 - x1*z2 + y1*w2 + z1*x2,
        w1*z2 + x1*y2 - y1*x2 + z1*w2,
    ], axis=-1)

def qconj(q):
    out = q.copy(); out[..., 1:] *= -1; return out

def haar_quats(rng, n):
    v = rng.standard_normal((n, 4))
    return v / np.linalg.norm(v, axis=1, keepdims=True)

def d_op_from_absdot(absdot):
    # d_op = 2 sin(alpha), alpha = arccos(|dot|)
    absdot = np.clip(absdot, -1.0, 1.0)
    return 2.0 * np.sqrt(1.0 - absdot**2)

def chord_to_dop(chord):
    # chord = 2 sin(alpha/2) -> alpha; d_op = 2 sin(alpha)
    alpha = 2 * np.arcsin(np.clip(chord / 2, 0, 1))
    return 2 * np.sin(alpha)

def build_net(delta, n_free, pool_mult=60, iters=40, seed=0, anneal=8):
    rng = np.random.default_rng(seed)
    G = binary_octahedral()          # (48,4)
    X = haar_quats(rng, n_free)      # free points
    pool = haar_quats(rng, pool_mult * 24 * n_free)
    t0 = time.time()
    for it in range(iters):
        # members: (48, nf, 4) -> (48*nf, 4)
        M = qmul(G[:, None, :], X[None, :, :]).reshape(-1, 4)
        tree = cKDTree(M)
        _, idx = tree.query(pool, k=1, workers=-1)
        gi, xi = np.divmod(idx, n_free)
        # pull pool back: conj(g) * p
        loc = qmul(qconj(G[gi]), pool)
        # sign-align to X[xi]
        s = np.sign(np.einsum('ij,ij->i', loc, X[xi]))
        s[s == 0] = 1.0
        loc *= s[:, None]
        newX = np.zeros_like(X)
        np.add.at(newX, xi, loc)
        norms = np.linalg.norm(newX, axis=1, keepdims=True)
        ok = norms[:, 0] > 1e-12
        X[ok] = newX[ok] / norms[ok]
    # separation annealing in quotient: push apart close member pairs by moving free points
    for _ in range(anneal):
        M = qmul(G[:, None, :], X[None, :, :]).reshape(-1, 4)
        tree = cKDTree(M)
        # nearest distinct member (k=2; first is self)
        dd, ii = tree.query(M, k=2, workers=-1)
        dop = chord_to_dop(dd[:, 1])
        bad = dop <= delta * 1.03
        if not bad.any():
            break
        # for each bad member pair, nudge the underlying free points apart
        srcs = np.nonzero(bad)[0]
        moved = np.zeros(n_free, dtype=bool)
        for m in srcs:
            j = ii[m, 1]
            gi_m, xi_m = divmod(m, n_free)
            # move X[xi_m] away from the image of member j in its local frame
            other = qmul(qconj(G[gi_m]), M[j])
            if np.dot(other, X[xi_m]) < 0:
                other = -other
            if moved[xi_m]:
                continue
            moved[xi_m] = True
            v = X[xi_m] - other
            nv = np.linalg.norm(v)
            if nv < 1e-12:
                continue
            step = (delta * 1.05 - dop[m]) / 2
            # quaternion-angle step ~ dop step / 2
            X[xi_m] = X[xi_m] + v / nv * (step / 2)
            X[xi_m] /= np.linalg.norm(X[xi_m])
    M = qmul(G[:, None, :], X[None, :, :]).reshape(-1, 4)
    return X, M, time.time() - t0

def evaluate(M, delta, eps, n_probe=10000, seed=1):
    rng = np.random.default_rng(seed)
    tree = cKDTree(M)
    dd, ii = tree.query(M, k=2, workers=-1)
    sep = chord_to_dop(dd[:, 1]).min()
    # coverage of O^eps via polar route: Q haar + offset <= eps
    Q = haar_quats(rng, n_probe)
    dqc, _ = tree.query(Q, k=1, workers=-1)
    cover_so3 = chord_to_dop(dqc).max()
    # probe offsets: worst case eps (sup over sampled sigma); worst-case bound:
    return sep, cover_so3

if __name__ == "__main__":
    for delta, n_free, pool_mult, iters in [(0.5, 22, 80, 60), (0.5, 26, 80, 60)]:
        X, M, dt = build_net(delta, n_free, pool_mult, iters, seed=0)
        sep, cover = evaluate(M, delta, delta / 4)
        n_rot = M.shape[0] // 2
        print(f"delta={delta} n_free={n_free} rotations={n_rot} time={dt:.1f}s "
              f"sep={sep:.4f} (need>{delta}) cover={cover:.4f} (need<={0.75*delta:.4f}) "
              f"ratio={sep/cover:.3f}")
