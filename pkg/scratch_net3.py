"""Prototype v3: Lloyd/anneal cycles; exact probe evaluation."""
import numpy as np
from scipy.spatial import cKDTree
import time
from scratch_net import qmul, qconj, haar_quats, chord_to_dop, binary_octahedral

ANTIPODAL = np.array([[1.0,0,0,0],[-1.0,0,0,0]])

def members_of(G, X):
    return qmul(G[:, None, :], X[None, :, :]).reshape(-1, 4)

def lloyd(G, X, pool, iters):
    n_free = len(X)
    for _ in range(iters):
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
    return X

def anneal(G, X, delta, target, rounds):
    n_free = len(X)
    for _ in range(rounds):
        M = members_of(G, X)
        tree = cKDTree(M)
        dd, ii = tree.query(M, k=2, workers=-1)
        dop = chord_to_dop(dd[:, 1])
        bad = np.nonzero(dop <= delta * target)[0]
        if bad.size == 0:
            break
        moved = np.zeros(n_free, dtype=bool)
        order = np.argsort(dop[bad])
        for m in bad[order]:
            gi_m, xi_m = divmod(int(m), n_free)
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
            step = (delta * target * 1.03 - dop[m]) / 2
            X[xi_m] = X[xi_m] + v / nv * (step / 2)
            X[xi_m] /= np.linalg.norm(X[xi_m])
    return X

def quat_to_mat(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([1-2*(y*y+z*z), 2*(x*y-w*z), 2*(x*z+w*y)], axis=-1),
        np.stack([2*(x*y+w*z), 1-2*(x*x+z*z), 2*(y*z-w*x)], axis=-1),
        np.stack([2*(x*z-w*y), 2*(y*z+w*x), 1-2*(x*x+y*y)], axis=-1),
    ], axis=-2)

def exact_probe_eval(M_quat, delta, eps, n_probe=10000, seed=1):
    """Exact max over probes of O^eps of spectral-norm distance to the net."""
    rng = np.random.default_rng(seed)
    R = quat_to_mat(M_quat)                      # (m,3,3)
    tree = cKDTree(M_quat)
    U = quat_to_mat(haar_quats(rng, n_probe))
    V = quat_to_mat(haar_quats(rng, n_probe))
    lo = 1 / (1 + eps)
    sig = rng.uniform(lo, 1 + eps, size=(n_probe, 3))
    T = U * sig[:, None, :] @ np.swapaxes(V, 1, 2)
    # polar factor Q = U V^T; offset e = max|sigma-1|... candidates via quat tree
    Qq_mat = U @ np.swapaxes(V, 1, 2)
    # quaternion of Q: cheap path - use tree in matrix space? do exact small-k scan:
    # for evaluation simplicity: exact spectral distance to k nearest by chord on Q.
    # convert Q to quaternion
    def mat_to_quat(Rm):
        w = np.sqrt(np.maximum(0, 1 + Rm[...,0,0] + Rm[...,1,1] + Rm[...,2,2])) / 2
        x = np.sqrt(np.maximum(0, 1 + Rm[...,0,0] - Rm[...,1,1] - Rm[...,2,2])) / 2
        y = np.sqrt(np.maximum(0, 1 - Rm[...,0,0] + Rm[...,1,1] - Rm[...,2,2])) / 2
        z = np.sqrt(np.maximum(0, 1 - Rm[...,0,0] - Rm[...,1,1] + Rm[...,2,2])) / 2
        x = np.copysign(x, Rm[...,2,1] - Rm[...,1,2])
        y = np.copysign(y, Rm[...,0,2] - Rm[...,2,0])
        z = np.copysign(z, Rm[...,1,0] - Rm[...,0,1])
        q = np.stack([w,x,y,z], axis=-1)
        return q / np.linalg.norm(q, axis=-1, keepdims=True)
    Qq = mat_to_quat(Qq_mat)
    _, near = tree.query(Qq, k=min(12, len(M_quat)), workers=-1)
    worst = 0.0
    for i in range(n_probe):
        diffs = T[i][None] - R[near[i]]
        s = np.linalg.svd(diffs, compute_uv=False)[:, 0]
        worst = max(worst, float(s.min()))
    return worst

def evaluate(M, n_probe=20000, seed=1):
    tree = cKDTree(M)
    dd, _ = tree.query(M, k=2, workers=-1)
    sep = chord_to_dop(dd[:, 1]).min()
    rng = np.random.default_rng(seed)
    Q = haar_quats(rng, n_probe)
    dqc, _ = tree.query(Q, k=1, workers=-1)
    cover = chord_to_dop(dqc).max()
    return sep, cover

def build_cycles(delta, n_free, G, pool_mult, seed, cycles, lloyd_iters, sep_target=1.06):
    rng = np.random.default_rng(seed)
    n_grp = max(len(G) // 2, 1)
    X = haar_quats(rng, n_free)
    pool = haar_quats(rng, pool_mult * n_grp * n_free)
    t0 = time.time()
    for c in range(cycles):
        X = lloyd(G, X, pool, lloyd_iters)
        X = anneal(G, X, delta, sep_target, 4)
    X = anneal(G, X, delta, 1.02, 15)
    return X, members_of(G, X), time.time() - t0

if __name__ == "__main__":
    G_oct = binary_octahedral()
    delta = 0.5
    runs = [
        ("oct-cyc", G_oct, 23, 150, 0, 6, 25),
        ("oct-cyc", G_oct, 23, 150, 1, 6, 25),
        ("none-cyc", ANTIPODAL, 552, 60, 0, 6, 25),
        ("oct-cyc", G_oct, 25, 150, 0, 6, 25),
    ]
    for name, G, n_free, pm, seed, cyc, li in runs:
        X, M, dt = build_cycles(delta, n_free, G, pm, seed, cyc, li)
        sep, cover = evaluate(M)
        exact = exact_probe_eval(M, delta, delta/4)
        print(f"{name} n_free={n_free} seed={seed} rot={M.shape[0]//2} t={dt:.1f}s "
              f"sep={sep:.4f} cover={cover:.4f} ratio={sep/cover:.3f} "
              f"exact_probe_max={exact:.4f} PASS={sep>delta and exact<=delta}")
