"""Numba kernels for the boosted-tree learner.

Trees are stored in flat per-round arrays: slot 0 is the root split,
slots 1/2 the left/right child splits (feature -1 marks a leaf), and
four leaf values per round. Split search scans histogram bins of
pre-binned features; ties keep the first (feature, bin) in scan order.
"""

import numpy as np
from numba import njit

LAMBDA = 1e-6
MIN_HESS = 1e-12


@njit(cache=True)
def _histogram_split(codes, nb, g, h, idx):
    nf = codes.shape[1]
    G = np.zeros((nf, nb))
    H = np.zeros((nf, nb))
    gs = 0.0
    hs = 0.0
    for t in range(idx.size):
        i = idx[t]
        gi = g[i]
        hi = h[i]
        gs += gi
        hs += hi
        for f in range(nf):
            b = codes[i, f]
            G[f, b] += gi
            H[f, b] += hi
    base = gs * gs / (hs + LAMBDA)
    best_gain = 0.0
    bf = -1
    bb = -1
    for f in range(nf):
        gl = 0.0
        hl = 0.0
        for b in range(nb - 1):
            gl += G[f, b]
            hl += H[f, b]
            hr = hs - hl
            if hl <= MIN_HESS or hr <= MIN_HESS:
                continue
            gr = gs - gl
            gain = gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - base
            if gain > best_gain:
                best_gain = gain
                bf = f
                bb = b
    return bf, bb, gs, hs


@njit(cache=True)
def _leaf_value(g, h, idx):
    gs = 0.0
    hs = 0.0
    for t in range(idx.size):
        gs += g[idx[t]]
        hs += h[idx[t]]
    return gs / (hs + LAMBDA)


@njit(cache=True)
def boost_fit(codes, nb, y, w, rounds, shrinkage, levels, f0):
    """Gradient boosting on log-loss over pre-binned features.

    Returns (feat, cutb, vals): per-round split features/bins and the four
    leaf values (left-left, left-right, right-left, right-right); child
    feature -1 stores a plain leaf in the first slot of its value pair.
    """
    n, nf = codes.shape
    F = np.full(n, f0)
    feat = np.full((rounds, 3), -1, np.int64)
    cutb = np.zeros((rounds, 3), np.int64)
    vals = np.zeros((rounds, 4))
    g = np.empty(n)
    h = np.empty(n)
    all_rows = np.arange(n)
    for r in range(rounds):
        for i in range(n):
            p = 1.0 / (1.0 + np.exp(-F[i]))
            g[i] = w[i] * (y[i] - p)
            hh = w[i] * p * (1.0 - p)
            h[i] = hh if hh > MIN_HESS else MIN_HESS
        rf, rb, gs, hs = _histogram_split(codes, nb, g, h, all_rows)
        if rf < 0:
            vals[r, 0] = gs / (hs + LAMBDA)
            step = shrinkage * vals[r, 0]
            for i in range(n):
                F[i] += step
            continue
        feat[r, 0] = rf
        cutb[r, 0] = rb
        go_left = codes[:, rf] <= rb
        left = all_rows[go_left]
        right = all_rows[~go_left]
        for side in range(2):
            rows = left if side == 0 else right
            slot = 1 + side
            if levels > 1:
                cf, cb, cgs, chs = _histogram_split(codes, nb, g, h, rows)
            else:
                cf, cb = -1, 0
            if cf < 0:
                vals[r, 2 * side] = _leaf_value(g, h, rows)
            else:
                feat[r, slot] = cf
                cutb[r, slot] = cb
                sub_left = rows[codes[rows, cf] <= cb]
                sub_right = rows[codes[rows, cf] > cb]
                vals[r, 2 * side] = _leaf_value(g, h, sub_left)
                vals[r, 2 * side + 1] = _leaf_value(g, h, sub_right)
        for i in range(n):
            side = 0 if codes[i, rf] <= rb else 1
            cf = feat[r, 1 + side]
            if cf < 0:
                v = vals[r, 2 * side]
            elif codes[i, cf] <= cutb[r, 1 + side]:
                v = vals[r, 2 * side]
            else:
                v = vals[r, 2 * side + 1]
            F[i] += shrinkage * v
    return feat, cutb, vals


@njit(cache=True)
def boost_margin(X, feat, cutv, vals, shrinkage, f0):
    """Accumulated boosting margin for raw feature rows (cutv holds the
    actual threshold values of every stored split)."""
    n = X.shape[0]
    rounds = feat.shape[0]
    F = np.full(n, f0)
    for r in range(rounds):
        rf = feat[r, 0]
        if rf < 0:
            for i in range(n):
                F[i] += shrinkage * vals[r, 0]
            continue
        for i in range(n):
            side = 0 if X[i, rf] <= cutv[r, 0] else 1
            cf = feat[r, 1 + side]
            if cf < 0:
                v = vals[r, 2 * side]
            elif X[i, cf] <= cutv[r, 1 + side]:
                v = vals[r, 2 * side]
            else:
                v = vals[r, 2 * side + 1]
            F[i] += shrinkage * v
    return F
