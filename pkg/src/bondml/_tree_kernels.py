"""Compiled CART growth and traversal.

Growth works on presorted index lists: ``order[f, lo:hi]`` holds the rows of
a node sorted by feature ``f``, for every feature at once. Splitting a node
stably partitions each of those segments, so children stay sorted and no
re-sorting happens below the root.
"""

import numpy as np
from numba import njit

MAX_LEVEL = 63  # categorical codes must lie in [0, MAX_LEVEL]


@njit(cache=True)
def _node_stats(y, w, order, lo, hi):
    W = 0.0
    S = 0.0
    for k in range(lo, hi):
        r = order[0, k]
        W += w[r]
        S += w[r] * y[r]
    mean = S / W
    sse = 0.0
    syy = 0.0
    for k in range(lo, hi):
        r = order[0, k]
        dlt = y[r] - mean
        sse += w[r] * dlt * dlt
        syy += w[r] * y[r] * y[r]
    return W, mean, sse, syy


@njit(cache=True)
def _best_split(vals, yc, w, order, lo, hi, feats, n_feats, is_cat, min_leaf, W):
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    best_mask = np.int64(0)
    N = hi - lo
    lw = np.zeros(MAX_LEVEL + 1)
    ls = np.zeros(MAX_LEVEL + 1)
    ln = np.zeros(MAX_LEVEL + 1, np.int64)
    levels = np.empty(MAX_LEVEL + 1, np.int64)
    S = 0.0
    for k in range(lo, hi):
        r = order[0, k]
        S += w[r] * yc[r]
    base = S * S / W
    for fi in range(n_feats):
        f = feats[fi]
        if is_cat[f]:
            lw[:] = 0.0
            ls[:] = 0.0
            ln[:] = 0
            for k in range(lo, hi):
                r = order[f, k]
                v = int(vals[f, k])
                lw[v] += w[r]
                ls[v] += w[r] * yc[r]
                ln[v] += 1
            L = 0
            for v in range(MAX_LEVEL + 1):
                if ln[v] > 0:
                    levels[L] = v
                    L += 1
            if L < 2:
                continue
            # subsets that exclude the last present level enumerate each split once
            for m in range(1, 1 << (L - 1)):
                wl = 0.0
                sl = 0.0
                nl = 0
                lmask = np.int64(0)
                for b in range(L - 1):
                    if (m >> b) & 1:
                        v = levels[b]
                        wl += lw[v]
                        sl += ls[v]
                        nl += ln[v]
                        lmask |= np.int64(1) << np.int64(v)
                nr = N - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                wr = W - wl
                if wl <= 0.0 or wr <= 0.0:
                    continue
                sr = S - sl
                gain = sl * sl / wl + sr * sr / wr - base
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_mask = lmask
                    best_thr = 0.0
        else:
            wl = 0.0
            sl = 0.0
            for k in range(lo, hi - 1):
                r = order[f, k]
                wl += w[r]
                sl += w[r] * yc[r]
                nl = k - lo + 1
                x0 = vals[f, k]
                x1 = vals[f, k + 1]
                if x1 <= x0:
                    continue
                if nl < min_leaf or N - nl < min_leaf:
                    continue
                wr = W - wl
                if wl <= 0.0 or wr <= 0.0:
                    continue
                sr = S - sl
                gain = sl * sl / wl + sr * sr / wr - base
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    thr = 0.5 * (x0 + x1)
                    if thr <= x0:
                        thr = x1
                    best_thr = thr
                    best_mask = np.int64(0)
    return best_gain, best_f, best_thr, best_mask


@njit(cache=True)
def grow(vals, y, w, order, is_cat, max_depth, min_split, min_leaf, max_leaves, m_try, seed):
    """Grow one tree. ``max_depth``/``max_leaves`` < 0 mean unlimited.

    ``order`` and ``vals`` (row indices and the matching feature values, both
    (d, m)) are partitioned in place.

    With ``max_leaves`` set, the open leaf with the largest impurity decrease
    is expanded first; otherwise nodes are expanded depth first.
    """
    d = order.shape[0]
    n = y.shape[0]
    m = order.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    catmask = np.zeros(cap, np.int64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    nsamp = np.zeros(cap, np.int64)
    wsum = np.zeros(cap)
    sse = np.zeros(cap)
    depth = np.zeros(cap, np.int64)
    lo_a = np.zeros(cap, np.int64)
    hi_a = np.zeros(cap, np.int64)
    bgain = np.full(cap, -1.0)
    bfeat = np.full(cap, -1, np.int64)
    bthr = np.zeros(cap)
    bmask = np.zeros(cap, np.int64)

    np.random.seed(seed)
    feats = np.arange(d)
    n_feats = d if (m_try <= 0 or m_try > d) else m_try
    yc = np.zeros(n)
    isleft = np.zeros(n, np.uint8)
    tmp = np.empty(m, order.dtype)
    tmpv = np.empty(m)
    stack = np.empty(cap, np.int64)

    lo_a[0] = 0
    hi_a[0] = m
    count = 1
    # nodes are evaluated (leaf value, best split) as soon as they are created
    to_eval = np.empty(2, np.int64)
    n_eval = 1
    to_eval[0] = 0
    sp = 0
    n_leaves = 1
    while True:
        for e in range(n_eval):
            node = to_eval[e]
            lo = lo_a[node]
            hi = hi_a[node]
            W, mean, s2, syy = _node_stats(y, w, order, lo, hi)
            value[node] = mean
            wsum[node] = W
            sse[node] = s2
            nsamp[node] = hi - lo
            pure = s2 <= 1e-20 * (syy + 1e-300)
            if (hi - lo) >= min_split and (max_depth < 0 or depth[node] < max_depth) and not pure and (hi - lo) >= 2 * min_leaf:
                for k in range(lo, hi):
                    r = order[0, k]
                    yc[r] = y[r] - mean
                if n_feats < d:
                    for i in range(n_feats):
                        j = i + np.random.randint(0, d - i)
                        t = feats[i]
                        feats[i] = feats[j]
                        feats[j] = t
                g, f, thr, msk = _best_split(vals, yc, w, order, lo, hi, feats, n_feats, is_cat, min_leaf, W)
                if f >= 0 and g > 1e-12 * s2:
                    bgain[node] = g
                    bfeat[node] = f
                    bthr[node] = thr
                    bmask[node] = msk
                    stack[sp] = node
                    sp += 1
        n_eval = 0
        if sp == 0:
            break
        if max_leaves > 0 and n_leaves >= max_leaves:
            break
        if max_leaves > 0:
            bi = 0
            for i in range(1, sp):
                if bgain[stack[i]] > bgain[stack[bi]]:
                    bi = i
            node = stack[bi]
            for i in range(bi, sp - 1):
                stack[i] = stack[i + 1]
            sp -= 1
        else:
            sp -= 1
            node = stack[sp]

        f = bfeat[node]
        lo = lo_a[node]
        hi = hi_a[node]
        for k in range(lo, hi):
            r = order[f, k]
            x = vals[f, k]
            if is_cat[f]:
                isleft[r] = (bmask[node] >> np.int64(int(x))) & 1
            else:
                isleft[r] = 1 if x < bthr[node] else 0
        nl = 0
        for k in range(lo, hi):
            nl += isleft[order[0, k]]
        for g in range(d):
            a = lo
            b = 0
            for k in range(lo, hi):
                r = order[g, k]
                if isleft[r]:
                    order[g, a] = r
                    vals[g, a] = vals[g, k]
                    a += 1
                else:
                    tmp[b] = r
                    tmpv[b] = vals[g, k]
                    b += 1
            for k in range(b):
                order[g, a + k] = tmp[k]
                vals[g, a + k] = tmpv[k]
        cl = count
        cr = count + 1
        count += 2
        feature[node] = f
        threshold[node] = bthr[node]
        catmask[node] = bmask[node]
        left[node] = cl
        right[node] = cr
        lo_a[cl] = lo
        hi_a[cl] = lo + nl
        lo_a[cr] = lo + nl
        hi_a[cr] = hi
        depth[cl] = depth[node] + 1
        depth[cr] = depth[node] + 1
        to_eval[0] = cl
        to_eval[1] = cr
        n_eval = 2
        n_leaves += 1

    return (feature[:count], threshold[:count], catmask[:count], left[:count], right[:count],
            value[:count], nsamp[:count], wsum[:count], sse[:count], depth[:count])


@njit(cache=True)
def apply_tree(X, feature, threshold, catmask, is_cat_node, left, right):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            x = X[i, feature[node]]
            if is_cat_node[node]:
                go_left = (catmask[node] >> np.int64(int(x))) & 1
            else:
                go_left = x < threshold[node]
            node = left[node] if go_left else right[node]
        out[i] = node
    return out
