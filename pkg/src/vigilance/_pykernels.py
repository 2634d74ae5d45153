"""Pure-Python/numpy kernels; the fallback when ``_ckernels`` is unavailable.

Every routine here performs the same floating-point operations in the same
order as its Cython twin, so both backends produce bit-identical trees,
margins and attributions.

Tree layout shared by both backends (parallel arrays, one entry per node,
breadth-first numbering, root = 0):

``feature``   split feature, -1 for leaves
``threshold`` rows with ``x[feature] < threshold`` go left
``left``/``right`` child ids, -1 for leaves
``value``     leaf output (already multiplied by the learning rate)
``gain``      split gain, 0 for leaves
``cover``     number of training rows that reached the node
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

# Gains within TIE_EPS of the gain terms' magnitude count as ties (see _ckernels).
TIE_EPS = 1e-12


def grow_tree(X, order, g, h, sample, features, max_depth, lam, gamma, min_child_weight, eta):
    """Grow one regression tree by exact greedy split search.

    ``order`` holds a stable argsort of every column of ``X`` (unused here but
    part of the shared signature). Only rows with ``sample[r] != 0`` take part.
    """
    rows = np.flatnonzero(np.asarray(sample))
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)

    feature, threshold, left, right, value, gain, cover = [], [], [], [], [], [], []
    gsum, hsum = [], []

    def add_node(G, H, count):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        gain.append(0.0)
        cover.append(float(count))
        gsum.append(G)
        hsum.append(H)
        return len(feature) - 1

    if rows.size:
        G0 = float(np.cumsum(g[rows])[-1])
        H0 = float(np.cumsum(h[rows])[-1])
    else:
        G0 = H0 = 0.0
    level = [(add_node(G0, H0, rows.size), rows)]
    depth = 0
    while level:
        next_level = []
        for node, idx in level:
            G, H = gsum[node], hsum[node]
            best = None
            if depth < max_depth and idx.size >= 2:
                best = _best_split_node(X, idx, g, h, G, H, features, lam, gamma, min_child_weight)
            if best is None:
                value[node] = -G / (H + lam) * eta
                continue
            f, thr, best_gain, GL, HL, nl = best
            feature[node] = f
            threshold[node] = thr
            gain[node] = best_gain
            go_left = X[idx, f] < thr
            li = add_node(GL, HL, nl)
            ri = add_node(G - GL, H - HL, idx.size - nl)
            left[node] = li
            right[node] = ri
            next_level.append((li, idx[go_left]))
            next_level.append((ri, idx[~go_left]))
        level = next_level
        depth += 1

    return (
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
        np.array(gain, dtype=np.float64),
        np.array(cover, dtype=np.float64),
    )


def _best_split_node(X, idx, g, h, G, H, features, lam, gamma, min_child_weight):
    """Scan features in order and thresholds ascending, like the compiled kernel.

    A candidate replaces the incumbent only if its gain exceeds the incumbent's
    by more than the tie tolerance; the first admissible candidate must beat 0.
    """
    parent = G * G / (H + lam)
    gi = g[idx]
    hi = h[idx]
    per_feature = []
    for f in features:
        xs = X[idx, f]
        o = np.argsort(xs, kind="stable")
        xs = xs[o]
        GL = np.cumsum(gi[o])[:-1]
        HL = np.cumsum(hi[o])[:-1]
        GR = G - GL
        HR = H - HL
        ok = (xs[1:] > xs[:-1]) & (HL >= min_child_weight) & (HR >= min_child_weight)
        j = np.flatnonzero(ok)
        if j.size == 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = GL[j] * GL[j] / (HL[j] + lam)
            t2 = GR[j] * GR[j] / (HR[j] + lam)
            gains = 0.5 * (t1 + t2 - parent) - gamma
            tols = TIE_EPS * (t1 + t2 + parent)
        per_feature.append((int(f), j, gains, tols, xs, GL, HL))
    if not per_feature:
        return None
    gains = np.concatenate([p[2] for p in per_feature])
    tols = np.concatenate([p[3] for p in per_feature])
    owner = np.concatenate([np.full(p[1].size, k) for k, p in enumerate(per_feature)])
    local = np.concatenate([p[1] for p in per_feature])
    best = -1
    best_gain = best_tol = 0.0
    start = 0
    with np.errstate(invalid="ignore"):
        while start < gains.size:
            m = gains[start:] > best_gain + np.where(tols[start:] < best_tol, best_tol, tols[start:])
            if not m.any():
                break
            best = start + int(np.argmax(m))
            best_gain, best_tol = float(gains[best]), float(tols[best])
            start = best + 1
    if best < 0:
        return None
    f, _, _, _, xs, GL, HL = per_feature[owner[best]]
    j = int(local[best])
    lo, hi_v = float(xs[j]), float(xs[j + 1])
    thr = (lo + hi_v) * 0.5
    if thr <= lo:
        thr = hi_v
    return (f, thr, best_gain, float(GL[j]), float(HL[j]), j + 1)


def predict_tree(feature, threshold, left, right, value, X):
    """Leaf output of one tree for every row of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        f = feature[node]
        active = f >= 0
        if not active.any():
            break
        a = rows[active]
        na = node[active]
        go_left = X[a, f[active]] < threshold[na]
        node[active] = np.where(go_left, left[na], right[na])
    return value[node]


def predict_forest(feature, threshold, left, right, value, offsets, tree_class, base_score, X):
    """Ensemble margins: ``base_score`` plus every tree's output, in tree order."""
    X = np.asarray(X, dtype=np.float64)
    margins = np.tile(np.asarray(base_score, dtype=np.float64), (X.shape[0], 1))
    for t in range(len(offsets) - 1):
        s, e = offsets[t], offsets[t + 1]
        margins[:, tree_class[t]] += predict_tree(
            feature[s:e], threshold[s:e], left[s:e], right[s:e], value[s:e], X
        )
    return margins


# --------------------------------------------------------------------------
# TreeSHAP (path-dependent, polynomial time)


def _extend(feat, zero, one, pw, depth, zf, of, fi):
    feat[depth] = fi
    zero[depth] = zf
    one[depth] = of
    pw[depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[i + 1] += of * pw[i] * (i + 1) / (depth + 1)
        pw[i] = zf * pw[i] * (depth - i) / (depth + 1)


def _unwind(feat, zero, one, pw, depth, idx):
    of = one[idx]
    zf = zero[idx]
    next_one = pw[depth]
    for i in range(depth - 1, -1, -1):
        if of != 0:
            tmp = pw[i]
            pw[i] = next_one * (depth + 1) / ((i + 1) * of)
            next_one = tmp - pw[i] * zf * (depth - i) / (depth + 1)
        else:
            pw[i] = pw[i] * (depth + 1) / (zf * (depth - i))
    for i in range(idx, depth):
        feat[i] = feat[i + 1]
        zero[i] = zero[i + 1]
        one[i] = one[i + 1]


def _unwound_sum(zero, one, pw, depth, idx):
    of = one[idx]
    zf = zero[idx]
    next_one = pw[depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if of != 0:
            tmp = next_one * (depth + 1) / ((i + 1) * of)
            total += tmp
            next_one = pw[i] - tmp * zf * ((depth - i) / (depth + 1))
        else:
            total += pw[i] / zf / ((depth - i) / (depth + 1))
    return total


def tree_shap(feature, threshold, left, right, value, cover, x, phi):
    """Add one tree's SHAP values for row ``x`` into ``phi`` (length n_features)."""

    def recurse(node, feat, zero, one, pw, depth, pz, po, pf):
        feat = feat[:depth] + [0]
        zero = zero[:depth] + [0.0]
        one = one[:depth] + [0.0]
        pw = pw[:depth] + [0.0]
        _extend(feat, zero, one, pw, depth, pz, po, pf)
        f = feature[node]
        if f < 0:
            v = value[node]
            for i in range(1, depth + 1):
                w = _unwound_sum(zero, one, pw, depth, i)
                phi[feat[i]] += w * (one[i] - zero[i]) * v
            return
        if x[f] < threshold[node]:
            hot, cold = left[node], right[node]
        else:
            hot, cold = right[node], left[node]
        w = cover[node]
        hot_zf = cover[hot] / w
        cold_zf = cover[cold] / w
        iz = 1.0
        io = 1.0
        for k in range(1, depth + 1):
            if feat[k] == f:
                iz = zero[k]
                io = one[k]
                _unwind(feat, zero, one, pw, depth, k)
                depth -= 1
                break
        recurse(hot, feat, zero, one, pw, depth + 1, hot_zf * iz, io, f)
        recurse(cold, feat, zero, one, pw, depth + 1, cold_zf * iz, 0.0, f)

    recurse(0, [], [], [], [], 0, 1.0, 1.0, -1)


def expected_value(feature, left, right, value, cover):
    """Cover-weighted mean leaf output of one tree."""

    def rec(node):
        if feature[node] < 0:
            return value[node]
        l, r = left[node], right[node]
        return (cover[l] * rec(l) + cover[r] * rec(r)) / cover[node]

    return rec(0)


def shap_forest(feature, threshold, left, right, value, cover, offsets, tree_class, X, n_classes, max_depth):
    """SHAP values for every row: array ``(n_rows, n_features, n_classes)``."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    out = np.zeros((n, d, n_classes))
    trees = [
        tuple(a[offsets[t]:offsets[t + 1]].tolist() for a in (feature, threshold, left, right, value, cover))
        for t in range(len(offsets) - 1)
    ]
    for r in range(n):
        x = X[r].tolist()
        phis = [[0.0] * d for _ in range(n_classes)]
        for t, (fe, th, le, ri, va, co) in enumerate(trees):
            tree_shap(fe, th, le, ri, va, co, x, phis[tree_class[t]])
        out[r] = np.array(phis).T
    return out
