"""Compiled numeric kernels (numba) for the hot paths.

Everything here is deterministic: no threading, no fastmath, and all
randomness comes from an explicit SplitMix64 state threaded through the
tree builder. SplitMix64 is the package-wide forest PRNG; the per-tree
stream derivation is documented in `forest.py`.
"""

import numpy as np
from numba import njit

U64 = np.uint64
_GAMMA = U64(0x9E3779B97F4A7C15)
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _sm64_next(state):
    """Advance a SplitMix64 state; returns (new_state, output)."""
    state = state + _GAMMA
    z = state
    z = (z ^ (z >> U64(30))) * _M1
    z = (z ^ (z >> U64(27))) * _M2
    z = z ^ (z >> U64(31))
    return state, z


@njit(cache=True)
def sm64_sequence(seed, n):
    """First n outputs of the SplitMix64 stream with the given seed."""
    out = np.empty(n, dtype=np.uint64)
    s = U64(seed)
    for i in range(n):
        s, z = _sm64_next(s)
        out[i] = z
    return out


@njit(cache=True)
def lowpass_columns(t_s, x, rc):
    """Causal single-pole IIR smoother, applied independently per column.

    y[0] = x[0]; y[i] = y[i-1] + a_i * (x[i] - y[i-1]) with
    a_i = dt_i / (rc + dt_i) and dt_i = t_s[i] - t_s[i-1].
    """
    n, k = x.shape
    y = np.empty_like(x)
    if n == 0:
        return y
    for j in range(k):
        y[0, j] = x[0, j]
    for i in range(1, n):
        dt = t_s[i] - t_s[i - 1]
        a = dt / (rc + dt)
        for j in range(k):
            y[i, j] = y[i - 1, j] + a * (x[i, j] - y[i - 1, j])
    return y


@njit(cache=True)
def build_tree(X, y, tree_seed, mtry, max_depth, min_split, bootstrap):
    """Grow one Gini decision tree on a bootstrap sample of (X, y).

    Split thresholds are midpoints between consecutive distinct sorted
    values of the candidate feature; the best split strictly minimizes the
    weighted child impurity, ties keeping the earliest candidate in draw /
    ascending-threshold order. Nodes become leaves when pure, smaller than
    min_split, at max_depth (if >= 0), or when none of the mtry candidates
    reduces impurity.

    PRNG draw order per tree: n bootstrap draws, then mtry feature draws
    per internal-candidate node in preorder.

    Returns preorder node arrays (feature = -1 marks a leaf), the node
    count, and the per-feature impurity-decrease sums weighted by node
    sample fraction.
    """
    n, p = X.shape
    state = U64(tree_seed)

    work = np.empty(n, dtype=np.int64)
    if bootstrap:
        for i in range(n):
            state, z = _sm64_next(state)
            work[i] = np.int64(z % U64(n))
    else:
        for i in range(n):
            work[i] = i

    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, dtype=np.int32)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    pos_frac = np.zeros(max_nodes, dtype=np.float64)
    counts = np.zeros(max_nodes, dtype=np.int32)
    importances = np.zeros(p, dtype=np.float64)

    # stack entries: (lo, hi, depth, parent, is_left)
    st_lo = np.empty(max_nodes, dtype=np.int64)
    st_hi = np.empty(max_nodes, dtype=np.int64)
    st_depth = np.empty(max_nodes, dtype=np.int64)
    st_parent = np.empty(max_nodes, dtype=np.int32)
    st_side = np.empty(max_nodes, dtype=np.int8)

    feats = np.empty(p, dtype=np.int64)
    vbuf = np.empty(n, dtype=np.float64)
    lbuf = np.empty(n, dtype=np.int8)
    part_l = np.empty(n, dtype=np.int64)
    part_r = np.empty(n, dtype=np.int64)

    top = 0
    st_lo[top], st_hi[top], st_depth[top], st_parent[top], st_side[top] = 0, n, 0, -1, 0
    top += 1
    n_nodes = 0

    while top > 0:
        top -= 1
        lo, hi = st_lo[top], st_hi[top]
        depth, parent, is_left = st_depth[top], st_parent[top], st_side[top]
        m = hi - lo

        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left == 1:
                left[parent] = node
            else:
                right[parent] = node

        pos = 0
        for i in range(lo, hi):
            pos += y[work[i]]
        counts[node] = m
        pos_frac[node] = pos / m

        if pos == 0 or pos == m or m < min_split or (max_depth >= 0 and depth >= max_depth):
            continue

        # candidate split search over mtry features drawn without replacement
        for j in range(p):
            feats[j] = j
        best_cost = np.inf
        best_feat = -1
        best_thr = 0.0
        for j in range(mtry):
            state, z = _sm64_next(state)
            r = j + np.int64(z % U64(p - j))
            feats[j], feats[r] = feats[r], feats[j]
            f = feats[j]

            for i in range(m):
                vbuf[i] = X[work[lo + i], f]
            order = np.argsort(vbuf[:m])
            for i in range(m):
                lbuf[i] = y[work[lo + order[i]]]

            pl = 0
            for k in range(1, m):
                pl += lbuf[k - 1]
                vk1 = vbuf[order[k - 1]]
                vk = vbuf[order[k]]
                if vk1 >= vk:
                    continue
                pr = pos - pl
                nl = k
                nr = m - k
                cost = (
                    nl - (pl * pl + (nl - pl) * (nl - pl)) / nl
                    + nr - (pr * pr + (nr - pr) * (nr - pr)) / nr
                )
                if cost < best_cost:
                    best_cost = cost
                    best_feat = f
                    thr = vk1 + (vk - vk1) / 2.0
                    if thr >= vk:  # guard against midpoint rounding up
                        thr = vk1
                    best_thr = thr

        parent_cost = m - (pos * pos + (m - pos) * (m - pos)) / m
        if best_feat < 0 or not (parent_cost - best_cost > 0.0):
            continue

        importances[best_feat] += (parent_cost - best_cost) / n

        # stable partition of work[lo:hi] on the chosen split
        nl = 0
        nr = 0
        for i in range(lo, hi):
            if X[work[i], best_feat] <= best_thr:
                part_l[nl] = work[i]
                nl += 1
            else:
                part_r[nr] = work[i]
                nr += 1
        for i in range(nl):
            work[lo + i] = part_l[i]
        for i in range(nr):
            work[lo + nl + i] = part_r[i]

        feature[node] = best_feat
        threshold[node] = best_thr

        # push right first so the left child pops (and is numbered) first
        st_lo[top], st_hi[top], st_depth[top], st_parent[top], st_side[top] = (
            lo + nl, hi, depth + 1, node, 0)
        top += 1
        st_lo[top], st_hi[top], st_depth[top], st_parent[top], st_side[top] = (
            lo, lo + nl, depth + 1, node, 1)
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            pos_frac[:n_nodes].copy(), counts[:n_nodes].copy(),
            importances)


@njit(cache=True)
def integrate_orientation(omega_deg_s, dt_s, q_start):
    """Integrate body angular rates (deg/s) into unit quaternions.

    Uses the exact exponential map per step, so a constant rate over a
    segment composes to the exact total rotation. Returns the orientation
    at each sample; out[0] already includes the first step from q_start.
    Quaternion component order is (x, y, z, w).
    """
    n = omega_deg_s.shape[0]
    out = np.empty((n, 4), dtype=np.float64)
    qx, qy, qz, qw = q_start[0], q_start[1], q_start[2], q_start[3]
    deg2rad = np.pi / 180.0
    for k in range(n):
        wx = omega_deg_s[k, 0] * deg2rad
        wy = omega_deg_s[k, 1] * deg2rad
        wz = omega_deg_s[k, 2] * deg2rad
        mag = np.sqrt(wx * wx + wy * wy + wz * wz)
        half = 0.5 * mag * dt_s
        if mag > 1e-12:
            s = np.sin(half) / mag
            dx, dy, dz, dw = wx * s, wy * s, wz * s, np.cos(half)
        else:
            dx, dy, dz, dw = 0.0, 0.0, 0.0, 1.0
        # body-frame rate: q <- q * dq
        nx = qw * dx + qx * dw + qy * dz - qz * dy
        ny = qw * dy - qx * dz + qy * dw + qz * dx
        nz = qw * dz + qx * dy - qy * dx + qz * dw
        nw = qw * dw - qx * dx - qy * dy - qz * dz
        norm = np.sqrt(nx * nx + ny * ny + nz * nz + nw * nw)
        qx, qy, qz, qw = nx / norm, ny / norm, nz / norm, nw / norm
        out[k, 0], out[k, 1], out[k, 2], out[k, 3] = qx, qy, qz, qw
    return out


@njit(cache=True)
def forest_scores(feature, threshold, left, right, pos_frac, tree_offsets, X):
    """Mean leaf positive-fraction over all trees for each row of X."""
    n = X.shape[0]
    n_trees = len(tree_offsets) - 1
    out = np.zeros(n, dtype=np.float64)
    for t in range(n_trees):
        root = tree_offsets[t]
        for i in range(n):
            node = root
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] += pos_frac[node]
    return out / n_trees


@njit(cache=True)
def tree_votes(feature, threshold, left, right, pos_frac, tree_offsets, x):
    """Per-tree leaf positive-fractions for a single feature row."""
    n_trees = len(tree_offsets) - 1
    out = np.empty(n_trees, dtype=np.float64)
    for t in range(n_trees):
        node = tree_offsets[t]
        while feature[node] >= 0:
            if x[feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[t] = pos_frac[node]
    return out
