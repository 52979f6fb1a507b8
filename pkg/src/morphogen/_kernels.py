"""Numba kernels for the sparse convolutional net.

All convolutions are same-size cross-correlations with zero padding of K//2
(K odd). Layout is channel-last: activations are (batch, height, width,
channels) and filter banks are (c_in, kh, kw, c_out), so the innermost loops
run contiguously over output channels.

Post-WTA maps carry at most a few nonzeros per map, so they travel as winner
lists: `pos` (batch, c, k) flattened spatial positions and `vals` the matching
activations. The `*_at` kernels work straight off those lists; only the first
layer (and the sparsity-off path) sees a dense input.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv_forward(x, w, bias):
    """out[b,p,q,o] = bias[o] + sum_{c,u,v} w[c,u,v,o] * x_pad[b,p+u,q+v,c].

    Scatter-form: zero input entries are skipped.
    """
    nb, h, wd, cin = x.shape
    _, kh, kw, cout = w.shape
    ph = kh // 2
    pw = kw // 2
    out = np.empty((nb, h, wd, cout))
    for b in range(nb):
        for p in range(h):
            for q in range(wd):
                for o in range(cout):
                    out[b, p, q, o] = bias[o]
    for b in range(nb):
        for i in range(h):
            for j in range(wd):
                for c in range(cin):
                    v = x[b, i, j, c]
                    if v == 0.0:
                        continue
                    _scatter(out, w, b, c, i, j, v, h, wd, kh, kw, ph, pw, cout)
    return out


@njit(cache=True, inline="always")
def _scatter(out, w, b, c, i, j, v, h, wd, kh, kw, ph, pw, cout):
    u_lo = max(0, i + ph - h + 1)
    u_hi = min(kh, i + ph + 1)
    t_lo = max(0, j + pw - wd + 1)
    t_hi = min(kw, j + pw + 1)
    for u in range(u_lo, u_hi):
        p = i + ph - u
        for t in range(t_lo, t_hi):
            q = j + pw - t
            for o in range(cout):
                out[b, p, q, o] += v * w[c, u, t, o]


@njit(cache=True)
def conv_forward_at(pos, vals, w, bias, h, wd):
    """Forward conv whose input is given as winner lists instead of a dense
    array. pos[b,c,s] < 0 and vals[b,c,s] == 0 entries are skipped."""
    nb = pos.shape[0]
    cin, kh, kw, cout = w.shape
    ph = kh // 2
    pw = kw // 2
    out = np.empty((nb, h, wd, cout))
    for b in range(nb):
        for p in range(h):
            for q in range(wd):
                for o in range(cout):
                    out[b, p, q, o] = bias[o]
    for b in range(nb):
        for c in range(cin):
            for s in range(pos.shape[2]):
                fp = pos[b, c, s]
                if fp < 0:
                    continue
                v = vals[b, c, s]
                if v == 0.0:
                    continue
                _scatter(out, w, b, c, fp // wd, fp % wd, v, h, wd, kh, kw, ph, pw, cout)
    return out


@njit(cache=True)
def relu_topk(a, k):
    """Fused rectifier + spatial winner-take-all.

    For each (sample, map), selects the k largest entries of max(a, 0), ties
    broken by lowest row-major spatial index. Returns winner positions and
    values, both (batch, c, k). Dense maps are never built here.
    """
    nb, h, wd, c = a.shape
    hw = h * wd
    flat = a.reshape(nb, hw, c)
    pos = np.full((nb, c, k), -1, dtype=np.int64)
    vals = np.full((nb, c, k), -1.0)
    for b in range(nb):
        for s in range(hw):
            for ci in range(c):
                v = flat[b, s, ci]
                if v < 0.0:
                    v = 0.0
                if v > vals[b, ci, k - 1]:
                    # insertion sort into the per-map top-k row (k is tiny);
                    # strict > keeps the earlier index on ties
                    r = k - 1
                    while r > 0 and vals[b, ci, r - 1] < v:
                        vals[b, ci, r] = vals[b, ci, r - 1]
                        pos[b, ci, r] = pos[b, ci, r - 1]
                        r -= 1
                    vals[b, ci, r] = v
                    pos[b, ci, r] = s
    return pos, vals


@njit(cache=True)
def conv_grad_input_at(gy, w, pos, h, wd):
    """Gradient w.r.t. the conv input, evaluated only at live winner positions
    (pos entry -1 = no gradient: the straight-through WTA contract). Also
    returns the per-channel gradient sum, which is the bias gradient of the
    layer below.
    """
    nb = gy.shape[0]
    cin, kh, kw, cout = w.shape
    ph = kh // 2
    pw = kw // 2
    gx = np.zeros((nb, h, wd, cin))
    gsum = np.zeros(cin)
    for b in range(nb):
        for c in range(cin):
            for s in range(pos.shape[2]):
                fp = pos[b, c, s]
                if fp < 0:
                    continue
                i = fp // wd
                j = fp % wd
                u_lo = max(0, i + ph - h + 1)
                u_hi = min(kh, i + ph + 1)
                t_lo = max(0, j + pw - wd + 1)
                t_hi = min(kw, j + pw + 1)
                acc = 0.0
                for u in range(u_lo, u_hi):
                    p = i + ph - u
                    for t in range(t_lo, t_hi):
                        q = j + pw - t
                        for o in range(cout):
                            acc += gy[b, p, q, o] * w[c, u, t, o]
                gx[b, i, j, c] += acc
                gsum[c] += acc
    return gx, gsum


@njit(cache=True, inline="always")
def _gather_weight_grad(gw, gy, b, c, i, j, v, h, wd, kh, kw, ph, pw, cout):
    u_lo = max(0, i + ph - h + 1)
    u_hi = min(kh, i + ph + 1)
    t_lo = max(0, j + pw - wd + 1)
    t_hi = min(kw, j + pw + 1)
    for u in range(u_lo, u_hi):
        p = i + ph - u
        for t in range(t_lo, t_hi):
            q = j + pw - t
            for o in range(cout):
                gw[c, u, t, o] += v * gy[b, p, q, o]


@njit(cache=True)
def conv_grad_weights(x, gy, kh, kw):
    """Filter-bank gradient with a dense input, skipping zero entries."""
    nb, h, wd, cin = x.shape
    cout = gy.shape[3]
    ph = kh // 2
    pw = kw // 2
    gw = np.zeros((cin, kh, kw, cout))
    for b in range(nb):
        for i in range(h):
            for j in range(wd):
                for c in range(cin):
                    v = x[b, i, j, c]
                    if v == 0.0:
                        continue
                    _gather_weight_grad(gw, gy, b, c, i, j, v, h, wd, kh, kw, ph, pw, cout)
    return gw


@njit(cache=True)
def conv_grad_weights_at(pos, vals, gy, cin, kh, kw, h, wd):
    """Filter-bank gradient with the input given as winner lists."""
    nb = pos.shape[0]
    cout = gy.shape[3]
    ph = kh // 2
    pw = kw // 2
    gw = np.zeros((cin, kh, kw, cout))
    for b in range(nb):
        for c in range(cin):
            for s in range(pos.shape[2]):
                fp = pos[b, c, s]
                if fp < 0:
                    continue
                v = vals[b, c, s]
                if v == 0.0:
                    continue
                _gather_weight_grad(gw, gy, b, c, fp // wd, fp % wd, v, h, wd, kh, kw, ph, pw, cout)
    return gw
