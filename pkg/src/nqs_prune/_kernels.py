"""Numba inner loops for Metropolis sampling of feed-forward ansaetze.

One chain per call; all randomness is pre-drawn by the caller so results
are bit-identical however chains are scheduled.  The hidden-layer
pre-activations are maintained incrementally and rebuilt from scratch
every `refresh_every` accepted moves to kill float drift.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def relu_masked_outer(h, x, rows, cols, out):
    """out[b, k] = 1[h[b, rows[k]] > 0] * x[b, cols[k]] (FFNN log-derivatives)."""
    for b in range(h.shape[0]):
        for k in range(rows.shape[0]):
            out[b, k] = x[b, cols[k]] if h[b, rows[k]] > 0.0 else 0.0


@numba.njit(cache=True)
def ffnn_flip_logpsi(h, x, wt, flip_sets, out):
    """out[b, s] = log psi of config b with flip set s applied.

    h is (B, width) pre-activations, x the (B, N) configs as floats,
    wt the (N, width) transposed weights, flip_sets (S, K) site indices.
    """
    n_b, width = h.shape
    n_s, k = flip_sets.shape
    for b in range(n_b):
        for s in range(n_s):
            acc = 0.0
            if k == 1:
                e = flip_sets[s, 0]
                c = -2.0 * x[b, e]
                for i in range(width):
                    v = h[b, i] + c * wt[e, i]
                    if v > 0.0:
                        acc += v
            else:
                for i in range(width):
                    v = h[b, i]
                    for q in range(k):
                        e = flip_sets[s, q]
                        v -= 2.0 * x[b, e] * wt[e, i]
                    if v > 0.0:
                        acc += v
            out[b, s] = acc


@numba.njit(cache=True)
def _rebuild(sigma, wt, h):
    n, w = wt.shape
    for i in range(w):
        acc = 0.0
        for j in range(n):
            acc += sigma[j] * wt[j, i]
        h[i] = acc
    lp = 0.0
    for i in range(w):
        if h[i] > 0.0:
            lp += h[i]
    return lp


@numba.njit(cache=True)
def run_ffnn_chain(sigma, wt, sites, u_accept, use_cell, cell_pick, cells, n_burn, sweep, refresh_every, out_configs):
    """Metropolis chain for log psi = sum relu(W sigma); returns acceptance count."""
    w = wt.shape[1]
    n_prop = sites.shape[0]
    h = np.empty(w)
    logpsi = _rebuild(sigma, wt, h)
    n_acc = 0
    since_refresh = 0
    rec = 0
    for t in range(n_prop):
        if use_cell[t]:
            quad = cells[cell_pick[t]]
            lp2 = 0.0
            for i in range(w):
                hi = h[i]
                for q in range(4):
                    e = quad[q]
                    hi -= 2.0 * sigma[e] * wt[e, i]
                if hi > 0.0:
                    lp2 += hi
            if lp2 >= logpsi or u_accept[t] < np.exp(2.0 * (lp2 - logpsi)):
                for q in range(4):
                    e = quad[q]
                    ds = -2.0 * sigma[e]
                    for i in range(w):
                        h[i] += ds * wt[e, i]
                    sigma[e] = -sigma[e]
                logpsi = lp2
                n_acc += 1
                since_refresh += 1
        else:
            k = sites[t]
            ds = -2.0 * sigma[k]
            lp2 = 0.0
            for i in range(w):
                hi = h[i] + ds * wt[k, i]
                if hi > 0.0:
                    lp2 += hi
            if lp2 >= logpsi or u_accept[t] < np.exp(2.0 * (lp2 - logpsi)):
                for i in range(w):
                    h[i] += ds * wt[k, i]
                sigma[k] = -sigma[k]
                logpsi = lp2
                n_acc += 1
                since_refresh += 1
        if since_refresh >= refresh_every:
            logpsi = _rebuild(sigma, wt, h)
            since_refresh = 0
        if t >= n_burn and (t - n_burn + 1) % sweep == 0:
            out_configs[rec] = sigma
            rec += 1
    return n_acc
