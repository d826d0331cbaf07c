"""Compiled kernels for histogram gradient boosting with shallow trees.

Trees are stored in heap layout: node ``k`` has children ``2k+1`` (left,
``x <= threshold``) and ``2k+2``.  A node with ``feature < 0`` is a leaf.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _expit(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def boost_kernel(codes, n_bins, y, w, offset, base, logistic, n_rounds, lr,
                 max_depth, min_leaf_weight, reg_lambda, feat_out, bin_out, value_out, loss_trace):
    n, p = codes.shape
    n_nodes = feat_out.shape[1]
    max_b = 1
    for j in range(p):
        if n_bins[j] > max_b:
            max_b = n_bins[j]
    eta = np.empty(n)
    for i in range(n):
        eta[i] = offset[i] + base
    g = np.empty(n)
    h = np.empty(n)
    node = np.empty(n, dtype=np.int64)
    n_level_max = 1 << max_depth
    hG = np.zeros((n_level_max, p, max_b))
    hH = np.zeros((n_level_max, p, max_b))
    hW = np.zeros((n_level_max, p, max_b))
    nG = np.zeros(n_nodes)
    nH = np.zeros(n_nodes)
    nW = np.zeros(n_nodes)
    split_ok = np.zeros(n_nodes, dtype=np.bool_)

    for r in range(n_rounds):
        loss = 0.0
        for i in range(n):
            if logistic:
                pr = _expit(eta[i])
                g[i] = w[i] * (pr - y[i])
                h[i] = w[i] * pr * (1.0 - pr)
                # log(1 + e^eta) - y * eta, computed stably
                if eta[i] > 0:
                    loss += w[i] * (eta[i] + np.log1p(np.exp(-eta[i])) - y[i] * eta[i])
                else:
                    loss += w[i] * (np.log1p(np.exp(eta[i])) - y[i] * eta[i])
            else:
                g[i] = w[i] * (eta[i] - y[i])
                h[i] = w[i]
                loss += 0.5 * w[i] * (eta[i] - y[i]) ** 2
            node[i] = 0
        loss_trace[r] = loss
        for k in range(n_nodes):
            feat_out[r, k] = -1
            bin_out[r, k] = 0
            value_out[r, k] = 0.0
            nG[k] = 0.0
            nH[k] = 0.0
            nW[k] = 0.0
            split_ok[k] = False
        for i in range(n):
            nG[0] += g[i]
            nH[0] += h[i]
            nW[0] += w[i]
        split_ok[0] = True

        for d in range(max_depth):
            first = (1 << d) - 1
            width = 1 << d
            any_open = False
            for k in range(width):
                if split_ok[first + k]:
                    any_open = True
            if not any_open:
                break
            for k in range(width):
                for j in range(p):
                    for b in range(n_bins[j]):
                        hG[k, j, b] = 0.0
                        hH[k, j, b] = 0.0
                        hW[k, j, b] = 0.0
            for i in range(n):
                k = node[i] - first
                if k < 0 or not split_ok[node[i]]:
                    continue
                for j in range(p):
                    b = codes[i, j]
                    hG[k, j, b] += g[i]
                    hH[k, j, b] += h[i]
                    hW[k, j, b] += w[i]
            for k in range(width):
                nd = first + k
                if not split_ok[nd]:
                    continue
                G = nG[nd]
                H = nH[nd]
                W = nW[nd]
                parent = G * G / (H + reg_lambda)
                best_gain = 1e-12 * (1.0 + parent)
                best_f = -1
                best_b = 0
                for j in range(p):
                    GL = 0.0
                    HL = 0.0
                    WL = 0.0
                    for b in range(n_bins[j] - 1):
                        GL += hG[k, j, b]
                        HL += hH[k, j, b]
                        WL += hW[k, j, b]
                        WR = W - WL
                        if WL < min_leaf_weight or WR < min_leaf_weight:
                            continue
                        GR = G - GL
                        HR = H - HL
                        gain = GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - parent
                        if gain > best_gain:
                            best_gain = gain
                            best_f = j
                            best_b = b
                if best_f >= 0:
                    feat_out[r, nd] = best_f
                    bin_out[r, nd] = best_b
                    left = 2 * nd + 1
                    right = 2 * nd + 2
                    GL = 0.0
                    HL = 0.0
                    WL = 0.0
                    for b in range(best_b + 1):
                        GL += hG[k, best_f, b]
                        HL += hH[k, best_f, b]
                        WL += hW[k, best_f, b]
                    nG[left] = GL
                    nH[left] = HL
                    nW[left] = WL
                    nG[right] = G - GL
                    nH[right] = H - HL
                    nW[right] = W - WL
                    split_ok[left] = d + 1 < max_depth
                    split_ok[right] = d + 1 < max_depth
                    # children are leaves unless split at the next level
                    value_out[r, left] = -lr * nG[left] / (nH[left] + reg_lambda)
                    value_out[r, right] = -lr * nG[right] / (nH[right] + reg_lambda)
                elif nd == 0:
                    value_out[r, 0] = -lr * G / (H + reg_lambda)
                split_ok[nd] = False
            for i in range(n):
                nd = node[i]
                f = feat_out[r, nd]
                if f >= 0 and nd >= first:
                    if codes[i, f] <= bin_out[r, nd]:
                        node[i] = 2 * nd + 1
                    else:
                        node[i] = 2 * nd + 2
        for i in range(n):
            eta[i] += value_out[r, node[i]]
    return eta


@njit(cache=True)
def predict_kernel(X, feat, thresh, value, out):
    n = X.shape[0]
    n_rounds = feat.shape[0]
    for i in range(n):
        s = 0.0
        for r in range(n_rounds):
            k = 0
            while feat[r, k] >= 0:
                if X[i, feat[r, k]] <= thresh[r, k]:
                    k = 2 * k + 1
                else:
                    k = 2 * k + 2
            s += value[r, k]
        out[i] += s
    return out
