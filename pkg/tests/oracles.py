"""Slow reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from vigilance.gbt import GbtModel, softmax

TIE_EPS = Fraction(1, 10**12)


def brute_split(X, rows, g, h, features, lam, gamma, mcw):
    """Enumerate every (feature, midpoint) and return the best admissible one.

    Gains are evaluated in exact rational arithmetic on the float inputs, so
    mathematically tied candidates compare equal. A later candidate wins only
    by more than ``TIE_EPS`` times the gain terms' magnitude. Returns
    ``(feature, threshold, gain)`` or ``None``; ties go to the lowest feature,
    then the lowest threshold.
    """
    rows = list(rows)
    q = {r: (Fraction(float(g[r])), Fraction(float(h[r]))) for r in rows}
    lam, gamma, mcw = Fraction(lam), Fraction(gamma), Fraction(mcw)
    G = sum(q[r][0] for r in rows)
    H = sum(q[r][1] for r in rows)
    best = None
    for f in sorted(features):
        vals = sorted(set(float(X[r, f]) for r in rows))
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) * 0.5
            if thr <= a:
                thr = b
            left = [r for r in rows if X[r, f] < thr]
            GL = sum((q[r][0] for r in left), Fraction(0))
            HL = sum((q[r][1] for r in left), Fraction(0))
            GR, HR = G - GL, H - HL
            if HL < mcw or HR < mcw or HL + lam == 0 or HR + lam == 0:
                continue
            t1, t2, parent = GL * GL / (HL + lam), GR * GR / (HR + lam), G * G / (H + lam)
            gain = (t1 + t2 - parent) / 2 - gamma
            tol = TIE_EPS * (t1 + t2 + parent)
            if best is None:
                if gain > tol:
                    best = (f, thr, gain, tol)
            elif gain > best[2] + max(tol, best[3]):
                best = (f, thr, gain, tol)
    return None if best is None else (best[0], best[1], float(best[2]))


def node_rows(tree, X, rows=None):
    """Map node id -> training rows reaching it."""
    rows = np.arange(X.shape[0]) if rows is None else rows
    out = {0: rows}
    stack = [0]
    while stack:
        i = stack.pop()
        if tree.feature[i] < 0:
            continue
        r = out[i]
        m = X[r, tree.feature[i]] < tree.threshold[i]
        out[tree.left[i]] = r[m]
        out[tree.right[i]] = r[~m]
        stack += [tree.left[i], tree.right[i]]
    return out


def round_gradients(model: GbtModel, X, y, rnd):
    """Gradient/hessian matrices the trainer saw at boosting round ``rnd``."""
    margins = np.tile(model.base_score, (X.shape[0], 1))
    for t in model.trees:
        if t.round < rnd:
            margins[:, t.cls] += _tree_predict(t, X)
    p = softmax(margins)
    onehot = np.eye(model.n_classes)[y]
    return p - onehot, p * (1 - p)


def _tree_predict(tree, X):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        i = 0
        while tree.feature[i] >= 0:
            i = tree.left[i] if X[r, tree.feature[i]] < tree.threshold[i] else tree.right[i]
        out[r] = tree.value[i]
    return out


def _cond_value(tree, x, S, i=0):
    if tree.feature[i] < 0:
        return tree.value[i]
    f = tree.feature[i]
    l, r = tree.left[i], tree.right[i]
    if f in S:
        return _cond_value(tree, x, S, l if x[f] < tree.threshold[i] else r)
    c = tree.cover[i]
    return (tree.cover[l] * _cond_value(tree, x, S, l) + tree.cover[r] * _cond_value(tree, x, S, r)) / c


def brute_shap(model: GbtModel, x):
    """Exact Shapley values of each class margin by subset enumeration.

    The value of a coalition S is the cover-weighted path expectation with
    features in S fixed to ``x`` (the path-dependent estimand).
    """
    d, K = model.n_features, model.n_classes
    phi = np.zeros((d, K))
    base = np.array(model.base_score, dtype=float)
    for t in model.trees:
        base[t.cls] += _cond_value(t, x, set())
    for t in model.trees:
        used = sorted(set(int(f) for f in t.feature if f >= 0))
        m = len(used)
        cache = {}
        for k in range(m + 1):
            for S in itertools.combinations(used, k):
                cache[S] = _cond_value(t, x, set(S))
        for j in used:
            others = [u for u in used if u != j]
            total = 0.0
            for k in range(len(others) + 1):
                w = math.factorial(k) * math.factorial(m - k - 1) / math.factorial(m)
                for S in itertools.combinations(others, k):
                    with_j = tuple(sorted(S + (j,)))
                    total += w * (cache[with_j] - cache[S])
            phi[j, t.cls] += total
    return base, phi


def fd_max_rel_error(loss_fn, params, grads, step=1e-5, floor=1e-6, limit=None, rng=None):
    """Largest relative gap between analytic and central-difference gradients.

    ``loss_fn()`` reads ``params`` in place. With ``limit`` only that many
    randomly chosen entries per array are checked.
    """
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if limit is not None and flat.size > limit:
            idx = rng.choice(flat.size, limit, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            up = loss_fn()
            flat[i] = old - step
            down = loss_fn()
            flat[i] = old
            num = (up - down) / (2 * step)
            ana = g.reshape(-1)[i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
    return worst


def node_depth(tree, node):
    parent = {int(c): i for i, (l, r) in enumerate(zip(tree.left, tree.right)) for c in (l, r) if c >= 0}
    d = 0
    while node in parent:
        node = parent[node]
        d += 1
    return d
