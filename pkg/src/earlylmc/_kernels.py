"""Compiled loops for the one-hidden-layer score network.

The hidden activations ``Z = tanh(X W1^T + b1)`` are computed by the caller
with vectorized numpy (much faster than scalar ``tanh`` in a compiled
loop); the kernels here do the remaining arithmetic.  Sums run over samples
in a fixed order on one thread, so results are bitwise reproducible
on a given machine.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def preactivation(X, W1, b1):
    n, d = X.shape
    H = W1.shape[0]
    A = np.empty((n, H))
    for i in range(n):
        for k in range(H):
            a = b1[k]
            for j in range(d):
                a += W1[k, j] * X[i, j]
            A[i, k] = a
    return A


@njit(cache=True, fastmath=True)
def vanilla_loss_grad(X, Z, W1, W2, b2):
    n, d = X.shape
    H = W1.shape[0]
    dW1t = np.zeros((d, H))
    db1 = np.zeros(H)
    dW2 = np.zeros((d, H))
    db2 = np.zeros(d)
    W1t = np.ascontiguousarray(W1.T)
    c = np.zeros(H)
    for j in range(d):
        for k in range(H):
            c[k] += W2[j, k] * W1t[j, k]
    gsum = np.zeros(H)
    ds = np.empty(d)
    back = np.empty(H)
    da = np.empty(H)
    loss = 0.0
    inv_n = 1.0 / n
    for i in range(n):
        zi = Z[i]
        li = 0.0
        back[:] = 0.0
        for j in range(d):
            sj = b2[j]
            for k in range(H):
                sj += W2[j, k] * zi[k]
            li += 0.5 * sj * sj
            ds[j] = sj * inv_n
            db2[j] += ds[j]
            for k in range(H):
                dW2[j, k] += ds[j] * zi[k]
                back[k] += ds[j] * W2[j, k]
        for k in range(H):
            z = zi[k]
            g = 1.0 - z * z
            li += g * c[k]
            gsum[k] += g
            da[k] = g * (back[k] - 2.0 * z * c[k] * inv_n)
            db1[k] += da[k]
        for j in range(d):
            xj = X[i, j]
            for k in range(H):
                dW1t[j, k] += da[k] * xj
        loss += li
    for j in range(d):
        for k in range(H):
            gk = gsum[k] * inv_n
            dW2[j, k] += gk * W1t[j, k]
            dW1t[j, k] += gk * W2[j, k]
    return loss * inv_n, np.ascontiguousarray(dW1t.T), db1, dW2, db2


@njit(cache=True, fastmath=True)
def denoising_loss_grad(Xt, xi, sigma, Z, W1, W2, b2):
    n, d = Xt.shape
    H = W1.shape[0]
    dW1t = np.zeros((d, H))
    db1 = np.zeros(H)
    dW2 = np.zeros((d, H))
    db2 = np.zeros(d)
    back = np.empty(H)
    da = np.empty(H)
    loss = 0.0
    inv_n = 1.0 / n
    for i in range(n):
        zi = Z[i]
        back[:] = 0.0
        for j in range(d):
            sj = b2[j]
            for k in range(H):
                sj += W2[j, k] * zi[k]
            r = sj + xi[i, j] / sigma
            loss += r * r
            drj = 2.0 * r * inv_n
            db2[j] += drj
            for k in range(H):
                dW2[j, k] += drj * zi[k]
                back[k] += drj * W2[j, k]
        for k in range(H):
            z = zi[k]
            da[k] = back[k] * (1.0 - z * z)
            db1[k] += da[k]
        for j in range(d):
            xj = Xt[i, j]
            for k in range(H):
                dW1t[j, k] += da[k] * xj
    return loss * inv_n, np.ascontiguousarray(dW1t.T), db1, dW2, db2


@njit(cache=True)
def gmm_score(X, means, precs, logc):
    """Score of ``sum_i exp(logc_i) N(means_i, precs_i^{-1})`` row by row,
    with a max-shifted softmax over components."""
    n, d = X.shape
    K = means.shape[0]
    out = np.zeros((n, d))
    diff = np.empty(d)
    g = np.empty((K, d))
    la = np.empty(K)
    for i in range(n):
        top = -np.inf
        for k in range(K):
            for a in range(d):
                diff[a] = X[i, a] - means[k, a]
            q = 0.0
            for a in range(d):
                s = 0.0
                for b in range(d):
                    s += precs[k, a, b] * diff[b]
                g[k, a] = s
                q += diff[a] * s
            la[k] = logc[k] - 0.5 * q
            if la[k] > top:
                top = la[k]
        tot = 0.0
        for k in range(K):
            la[k] = np.exp(la[k] - top)
            tot += la[k]
        for k in range(K):
            r = la[k] / tot
            for a in range(d):
                out[i, a] -= r * g[k, a]
    return out


@njit(cache=True)
def advance(X, S, h, root2h, noise, diverged, div_step, step, limit):
    """One LMC step in place; chains whose new state is non-finite or
    beyond ``limit`` in norm are flagged and stay frozen."""
    n, d = X.shape
    for i in range(n):
        if diverged[i]:
            continue
        nrm = 0.0
        ok = True
        for a in range(d):
            v = X[i, a] + h * S[i, a] + root2h * noise[i, a]
            if not np.isfinite(v):
                ok = False
            nrm += v * v
        if ok and np.sqrt(nrm) <= limit:
            for a in range(d):
                X[i, a] = X[i, a] + h * S[i, a] + root2h * noise[i, a]
        else:
            diverged[i] = True
            div_step[i] = step + 1


KDE_CUTOFF = 9.0  # kernel mass beyond 9 bandwidths is below 3e-18


@njit(cache=True)
def kde_sum(grid, x, bw):
    """``sum_j exp(-((grid - x_j) / bw)^2 / 2)`` on an ascending grid,
    skipping grid points farther than ``KDE_CUTOFF`` bandwidths."""
    out = np.zeros(grid.size)
    reach = KDE_CUTOFF * bw
    for j in range(x.size):
        lo = np.searchsorted(grid, x[j] - reach)
        hi = np.searchsorted(grid, x[j] + reach, side="right")
        for g in range(lo, hi):
            z = (grid[g] - x[j]) / bw
            out[g] += np.exp(-0.5 * z * z)
    return out
