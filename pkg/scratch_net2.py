"""Prototype v2: constrained CVT (Lloyd + separation projection) on SO(3)."""
import numpy as np
from scipy.spatial import cKDTree
import time
from scratch_net import qmul, qconj, haar_quats, chord_to_dop, binary_octahedral

def binary_icosahedral():
    tau = (1 + np.sqrt(5)) / 2
    q = []
    for i in range(4):
        for s in (1.0, -1.0):
            v = np.zeros(4); v[i] = s; q.append(v)
    for a in (0.5, -0.5):
        for b in (0.5, -0.5):
            for c in (0.5, -0.5):
                for d in (0.5, -0.5):
                    q.append(np.array([a, b, c, d]))
    # even permutations of (tau, 1, 1/tau, 0)/2 with all signs
    base = np.array([tau, 1.0, 1.0 / tau, 0.0]) / 2
    even_perms = [(0,1,2,3),(0,2,3,1),(0,3,1,2),(1,0,3,2),(1,2,0,3),(1,3,2,0),
                  (2,0,1,3),(2,1,3,0),(2,3,0,1),(3,0,2,1),(3,1,0,2),(3,2,1,0)]
    for p in even_perms:
        for s0 in (1,-1):
            for s1 in (1,-1):
                for s2 in (1,-1):
                    v = np.zeros(4)
                    v[p[0]] = s0*base[0]; v[p[1]] = s1*base[1]; v[p[2]] = s2*base[2]
                    # base[3]=0, sign irrelevant
                    q.append(v)
    arr = np.array(q)
    # dedupe
    arr = np.unique(np.round(arr, 12), axis=0)
    assert len(arr) == 120, len(arr)
    return arr

def members_of(G, X):
    return qmul(G[:, None, :], X[None, :, :]).reshape(-1, 4)

def sep_project(G, X, delta, target=1.05, rounds=3):
    n_free = len(X)
    for _ in range(rounds):
        M = members_of(G, X)
        tree = cKDTree(M)
        dd, ii = tree.query(M, k=2, workers=-1)
        dop = chord_to_dop(dd[:, 1])
        bad = np.nonzero(dop <= delta * target)[0]
        if bad.size == 0:
            return X, True
        moved = np.zeros(n_free, dtype=bool)
        for m in bad:
            gi_m, xi_m = divmod(m, n_free)
            if moved[xi_m]:
                continue
            j = ii[m, 1]
            other = qmul(qconj(G[gi_m]), M[j])
            if np.dot(other, X[xi_m]) < 0:
                other = -other
            v = X[xi_m] - other
            nv = np.linalg.norm(v)
            if nv < 1e-12:
                continue
            moved[xi_m] = True
            step = (delta * target * 1.02 - dop[m]) / 2
            X[xi_m] = X[xi_m] + v / nv * (step / 2)
            X[xi_m] /= np.linalg.norm(X[xi_m])
    return X, False

def build_net2(delta, n_free, G, pool_mult=100, iters=80, seed=0, sep_every=4,
               sep_target=1.05):
    rng = np.random.default_rng(seed)
    n_grp = len(G)
    X = haar_quats(rng, n_free)
    pool = haar_quats(rng, pool_mult * (n_grp // 2) * n_free)
    t0 = time.time()
    for it in range(iters):
        M = members_of(G, X)
        tree = cKDTree(M)
        _, idx = tree.query(pool, k=1, workers=-1)
        gi, xi = np.divmod(idx, n_free)
        loc = qmul(qconj(G[gi]), pool)
        s = np.sign(np.einsum('ij,ij->i', loc, X[xi]))
        s[s == 0] = 1.0
        loc *= s[:, None]
        newX = np.zeros_like(X)
        np.add.at(newX, xi, loc)
        norms = np.linalg.norm(newX, axis=1, keepdims=True)
        ok = norms[:, 0] > 1e-12
        X[ok] = newX[ok] / norms[ok]
        if (it + 1) % sep_every == 0:
            X, _ = sep_project(G, X, delta, target=sep_target, rounds=2)
    X, sep_ok = sep_project(G, X, delta, target=1.02, rounds=12)
    return X, members_of(G, X), time.time() - t0

def evaluate(M, n_probe=20000, seed=1):
    rng = np.random.default_rng(seed)
    tree = cKDTree(M)
    dd, _ = tree.query(M, k=2, workers=-1)
    sep = chord_to_dop(dd[:, 1]).min()
    Q = haar_quats(rng, n_probe)
    dqc, _ = tree.query(Q, k=1, workers=-1)
    cover = chord_to_dop(dqc).max()
    return sep, cover

if __name__ == "__main__":
    G_ico = binary_icosahedral()
    G_oct = binary_octahedral()
    delta = 0.5
    for G, name, n_free, seed in [
        (G_ico, "ico", 9, 0), (G_ico, "ico", 10, 0), (G_ico, "ico", 11, 0),
        (G_ico, "ico", 10, 1), (G_oct, "oct", 24, 0),
    ]:
        X, M, dt = build_net2(delta, n_free, G, pool_mult=150, iters=80, seed=seed)
        sep, cover = evaluate(M)
        need = 0.75 * delta
        print(f"{name} n_free={n_free} seed={seed} rot={M.shape[0]//2} t={dt:.1f}s "
              f"sep={sep:.4f} cover={cover:.4f} ok={sep>delta and cover<=need} ratio={sep/cover:.3f}")

