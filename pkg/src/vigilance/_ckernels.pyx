# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for tree growing, forest prediction and TreeSHAP.

Mirrors ``_pykernels`` operation for operation; see that module for the
shared tree layout.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"

# Candidate gains closer than TIE_EPS times the magnitude of the gain terms are
# treated as tied, so rounding noise cannot override the lowest-feature /
# lowest-threshold tie rule.
cdef double TIE_EPS = 1e-12

ctypedef cnp.int64_t i64


def grow_tree(const double[:, ::1] X, const i64[:, ::1] order, const double[::1] g,
              const double[::1] h, const unsigned char[::1] sample, const i64[::1] features,
              int max_depth, double lam, double gamma, double min_child_weight, double eta):
    """Exact greedy, level-wise tree growth over presorted columns."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t nf = features.shape[0]
    cdef Py_ssize_t n_in = 0
    cdef Py_ssize_t r, p, j, a, cap
    for r in range(n):
        if sample[r]:
            n_in += 1
    if n_in == 0:
        cap = 1
    elif max_depth >= 40:
        cap = 2 * n_in - 1
    else:
        cap = min((<Py_ssize_t>1 << (max_depth + 1)) - 1, 2 * n_in - 1)

    feature_a = np.full(cap, -1, dtype=np.int64)
    threshold_a = np.zeros(cap, dtype=np.float64)
    left_a = np.full(cap, -1, dtype=np.int64)
    right_a = np.full(cap, -1, dtype=np.int64)
    value_a = np.zeros(cap, dtype=np.float64)
    gain_a = np.zeros(cap, dtype=np.float64)
    cover_a = np.zeros(cap, dtype=np.float64)
    cdef i64[::1] feature = feature_a
    cdef double[::1] threshold = threshold_a
    cdef i64[::1] left = left_a
    cdef i64[::1] right = right_a
    cdef double[::1] value = value_a
    cdef double[::1] gain = gain_a
    cdef double[::1] cover = cover_a

    cdef double[::1] gsum = np.zeros(cap)
    cdef double[::1] hsum = np.zeros(cap)
    # per-node scan state
    cdef double[::1] GLs = np.zeros(cap)
    cdef double[::1] HLs = np.zeros(cap)
    cdef i64[::1] NLs = np.zeros(cap, dtype=np.int64)
    cdef double[::1] last = np.zeros(cap)
    cdef unsigned char[::1] has_prev = np.zeros(cap, dtype=np.uint8)
    cdef double[::1] best_gain = np.zeros(cap)
    cdef double[::1] best_tol = np.zeros(cap)
    cdef i64[::1] best_feat = np.full(cap, -1, dtype=np.int64)
    cdef double[::1] best_thr = np.zeros(cap)
    cdef double[::1] best_GL = np.zeros(cap)
    cdef double[::1] best_HL = np.zeros(cap)
    cdef i64[::1] best_NL = np.zeros(cap, dtype=np.int64)
    cdef i64[::1] pos = np.full(n, -1, dtype=np.int64)

    cdef double G = 0.0, H = 0.0, GL, HL, GR, HR, v, gn, thr, parent, t1, t2, tol
    cdef i64 f, node
    cdef Py_ssize_t n_nodes = 1, lvl_start = 0, lvl_end = 1, depth = 0

    for r in range(n):
        if sample[r]:
            G += g[r]
            H += h[r]
            pos[r] = 0
    gsum[0] = G
    hsum[0] = H
    cover[0] = <double>n_in

    with nogil:
        while lvl_start < lvl_end:
            for a in range(lvl_start, lvl_end):
                best_gain[a] = 0.0
                best_tol[a] = 0.0
                best_feat[a] = -1
            if depth < max_depth:
                for j in range(nf):
                    f = features[j]
                    for a in range(lvl_start, lvl_end):
                        GLs[a] = 0.0
                        HLs[a] = 0.0
                        NLs[a] = 0
                        has_prev[a] = 0
                    for p in range(n):
                        r = order[f, p]
                        a = pos[r]
                        if a < lvl_start:
                            continue
                        v = X[r, f]
                        if has_prev[a] and v > last[a]:
                            GL = GLs[a]
                            HL = HLs[a]
                            GR = gsum[a] - GL
                            HR = hsum[a] - HL
                            if HL >= min_child_weight and HR >= min_child_weight:
                                parent = gsum[a] * gsum[a] / (hsum[a] + lam)
                                t1 = GL * GL / (HL + lam)
                                t2 = GR * GR / (HR + lam)
                                gn = 0.5 * (t1 + t2 - parent) - gamma
                                tol = TIE_EPS * (t1 + t2 + parent)
                                if tol < best_tol[a]:
                                    tol = best_tol[a]
                                if gn > best_gain[a] + tol:
                                    best_gain[a] = gn
                                    best_tol[a] = TIE_EPS * (t1 + t2 + parent)
                                    best_feat[a] = f
                                    thr = (last[a] + v) * 0.5
                                    if thr <= last[a]:
                                        thr = v
                                    best_thr[a] = thr
                                    best_GL[a] = GL
                                    best_HL[a] = HL
                                    best_NL[a] = NLs[a]
                        GLs[a] += g[r]
                        HLs[a] += h[r]
                        NLs[a] += 1
                        last[a] = v
                        has_prev[a] = 1
            # finalize this level, append children in node order
            for a in range(lvl_start, lvl_end):
                if best_feat[a] < 0:
                    value[a] = -gsum[a] / (hsum[a] + lam) * eta
                    continue
                feature[a] = best_feat[a]
                threshold[a] = best_thr[a]
                gain[a] = best_gain[a]
                left[a] = n_nodes
                right[a] = n_nodes + 1
                gsum[n_nodes] = best_GL[a]
                hsum[n_nodes] = best_HL[a]
                cover[n_nodes] = <double>best_NL[a]
                gsum[n_nodes + 1] = gsum[a] - best_GL[a]
                hsum[n_nodes + 1] = hsum[a] - best_HL[a]
                cover[n_nodes + 1] = cover[a] - <double>best_NL[a]
                n_nodes += 2
            for r in range(n):
                a = pos[r]
                if a < lvl_start:
                    continue
                if best_feat[a] < 0:
                    pos[r] = -1
                elif X[r, best_feat[a]] < best_thr[a]:
                    pos[r] = left[a]
                else:
                    pos[r] = right[a]
            lvl_start = lvl_end
            lvl_end = n_nodes
            depth += 1

    return (feature_a[:n_nodes].copy(), threshold_a[:n_nodes].copy(), left_a[:n_nodes].copy(),
            right_a[:n_nodes].copy(), value_a[:n_nodes].copy(), gain_a[:n_nodes].copy(),
            cover_a[:n_nodes].copy())


cdef inline i64 _leaf(const i64[::1] feature, const double[::1] threshold, const i64[::1] left,
                      const i64[::1] right, Py_ssize_t s, const double[:, ::1] X,
                      Py_ssize_t r) noexcept nogil:
    cdef i64 node = 0
    cdef i64 f = feature[s]
    while f >= 0:
        if X[r, f] < threshold[s + node]:
            node = left[s + node]
        else:
            node = right[s + node]
        f = feature[s + node]
    return node


def predict_tree(const i64[::1] feature, const double[::1] threshold, const i64[::1] left,
                 const i64[::1] right, const double[::1] value, X):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], r
    out_a = np.empty(n)
    cdef double[::1] out = out_a
    with nogil:
        for r in range(n):
            out[r] = value[_leaf(feature, threshold, left, right, 0, Xv, r)]
    return out_a


def predict_forest(const i64[::1] feature, const double[::1] threshold, const i64[::1] left,
                   const i64[::1] right, const double[::1] value, const i64[::1] offsets,
                   const i64[::1] tree_class, base_score, X):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], r, t, s
    cdef Py_ssize_t n_trees = offsets.shape[0] - 1
    margins_a = np.tile(np.asarray(base_score, dtype=np.float64), (n, 1))
    cdef double[:, ::1] margins = margins_a
    with nogil:
        for r in range(n):
            for t in range(n_trees):
                s = offsets[t]
                margins[r, tree_class[t]] += value[s + _leaf(feature, threshold, left, right, s, Xv, r)]
    return margins_a


# --------------------------------------------------------------------------
# TreeSHAP

cdef struct PathElement:
    i64 feature
    double zero
    double one
    double pweight


cdef void _extend(PathElement* path, Py_ssize_t depth, double zf, double of, i64 fi) noexcept nogil:
    cdef Py_ssize_t i
    path[depth].feature = fi
    path[depth].zero = zf
    path[depth].one = of
    path[depth].pweight = 1.0 if depth == 0 else 0.0
    i = depth - 1
    while i >= 0:
        path[i + 1].pweight += of * path[i].pweight * <double>(i + 1) / <double>(depth + 1)
        path[i].pweight = zf * path[i].pweight * <double>(depth - i) / <double>(depth + 1)
        i -= 1


cdef void _unwind(PathElement* path, Py_ssize_t depth, Py_ssize_t idx) noexcept nogil:
    cdef double of = path[idx].one
    cdef double zf = path[idx].zero
    cdef double next_one = path[depth].pweight
    cdef double tmp
    cdef Py_ssize_t i = depth - 1
    while i >= 0:
        if of != 0:
            tmp = path[i].pweight
            path[i].pweight = next_one * <double>(depth + 1) / (<double>(i + 1) * of)
            next_one = tmp - path[i].pweight * zf * <double>(depth - i) / <double>(depth + 1)
        else:
            path[i].pweight = path[i].pweight * <double>(depth + 1) / (zf * <double>(depth - i))
        i -= 1
    for i in range(idx, depth):
        path[i].feature = path[i + 1].feature
        path[i].zero = path[i + 1].zero
        path[i].one = path[i + 1].one


cdef double _unwound_sum(PathElement* path, Py_ssize_t depth, Py_ssize_t idx) noexcept nogil:
    cdef double of = path[idx].one
    cdef double zf = path[idx].zero
    cdef double next_one = path[depth].pweight
    cdef double total = 0.0, tmp
    cdef Py_ssize_t i = depth - 1
    while i >= 0:
        if of != 0:
            tmp = next_one * <double>(depth + 1) / (<double>(i + 1) * of)
            total += tmp
            next_one = path[i].pweight - tmp * zf * (<double>(depth - i) / <double>(depth + 1))
        else:
            total += path[i].pweight / zf / (<double>(depth - i) / <double>(depth + 1))
        i -= 1
    return total


cdef void _recurse(const i64* feature, const double* threshold, const i64* left,
                   const i64* right, const double* value, const double* cover,
                   const double* x, double* phi, i64 node, PathElement* parent_path,
                   Py_ssize_t depth, double pz, double po, i64 pf) noexcept nogil:
    cdef PathElement* path = parent_path + depth + 1
    cdef Py_ssize_t i, k
    cdef i64 f, hot, cold
    cdef double w, hot_zf, cold_zf, iz, io, v
    for i in range(depth):
        path[i] = parent_path[i]
    _extend(path, depth, pz, po, pf)
    f = feature[node]
    if f < 0:
        v = value[node]
        for i in range(1, depth + 1):
            w = _unwound_sum(path, depth, i)
            phi[path[i].feature] += w * (path[i].one - path[i].zero) * v
        return
    if x[f] < threshold[node]:
        hot = left[node]
        cold = right[node]
    else:
        hot = right[node]
        cold = left[node]
    w = cover[node]
    hot_zf = cover[hot] / w
    cold_zf = cover[cold] / w
    iz = 1.0
    io = 1.0
    for k in range(1, depth + 1):
        if path[k].feature == f:
            iz = path[k].zero
            io = path[k].one
            _unwind(path, depth, k)
            depth -= 1
            break
    _recurse(feature, threshold, left, right, value, cover, x, phi, hot, path,
             depth + 1, hot_zf * iz, io, f)
    _recurse(feature, threshold, left, right, value, cover, x, phi, cold, path,
             depth + 1, cold_zf * iz, 0.0, f)


cdef Py_ssize_t _tree_depth(const i64* feature, const i64* left, const i64* right, i64 node) noexcept nogil:
    if feature[node] < 0:
        return 0
    cdef Py_ssize_t a = _tree_depth(feature, left, right, left[node])
    cdef Py_ssize_t b = _tree_depth(feature, left, right, right[node])
    return 1 + (a if a > b else b)


def tree_shap(const i64[::1] feature, const double[::1] threshold, const i64[::1] left,
              const i64[::1] right, const double[::1] value, const double[::1] cover,
              const double[::1] x, double[::1] phi):
    cdef Py_ssize_t d = _tree_depth(&feature[0], &left[0], &right[0], 0)
    cdef PathElement* buf = <PathElement*>malloc(((d + 2) * (d + 3) // 2 + 1) * sizeof(PathElement))
    if buf == NULL:
        raise MemoryError()
    try:
        _recurse(&feature[0], &threshold[0], &left[0], &right[0], &value[0], &cover[0],
                 &x[0], &phi[0], 0, buf, 0, 1.0, 1.0, -1)
    finally:
        free(buf)


def shap_forest(const i64[::1] feature, const double[::1] threshold, const i64[::1] left,
                const i64[::1] right, const double[::1] value, const double[::1] cover,
                const i64[::1] offsets, const i64[::1] tree_class, X, int n_classes,
                int max_depth):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], d = Xv.shape[1], r, t, s, j, k
    cdef Py_ssize_t n_trees = offsets.shape[0] - 1
    cdef Py_ssize_t deepest = 0, td
    for t in range(n_trees):
        s = offsets[t]
        td = _tree_depth(&feature[s], &left[s], &right[s], 0)
        if td > deepest:
            deepest = td
    out_a = np.zeros((n, d, n_classes))
    cdef double[:, :, ::1] out = out_a
    cdef double[:, ::1] phis = np.zeros((n_classes, d))
    cdef PathElement* buf = <PathElement*>malloc(((deepest + 2) * (deepest + 3) // 2 + 1) * sizeof(PathElement))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(n):
                for k in range(n_classes):
                    for j in range(d):
                        phis[k, j] = 0.0
                for t in range(n_trees):
                    s = offsets[t]
                    _recurse(&feature[s], &threshold[s], &left[s], &right[s], &value[s],
                             &cover[s], &Xv[r, 0], &phis[tree_class[t], 0], 0, buf, 0,
                             1.0, 1.0, -1)
                for k in range(n_classes):
                    for j in range(d):
                        out[r, j, k] = phis[k, j]
    finally:
        free(buf)
    return out_a
