"""Numba kernels for the scaled dot-product attention block.

The Q, K, V projections arrive packed in one (rows, T, 3, H, D) array. Each
row's slab is tiny, so the whole scores -> softmax -> weighted-sum pipeline
runs out of L1. Rows are processed in blocks that share head-major scratch
tiles whose last axis is the token dimension, letting the inner loops
vectorize. Rows are independent and in-row reductions are fixed-order, so
results are bit-deterministic regardless of thread count (fastmath reorders
identically on every call).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_BLOCK = 256


@njit(parallel=True, cache=True, fastmath=True)
def attention_scores(qkv, scale, attn):
    """Scaled scores minus their row max, written to attn (B, H, T, T).

    The exponential is applied by the caller with numpy's vectorized exp,
    which beats scalar libm calls by a wide margin.
    """
    B, T, _, H, D = qkv.shape
    n_blocks = (B + _BLOCK - 1) // _BLOCK
    for blk in prange(n_blocks):
        kt = np.empty((H, D, T))
        srow = np.empty(T)
        for b in range(blk * _BLOCK, min((blk + 1) * _BLOCK, B)):
            for j in range(T):
                for h in range(H):
                    for d in range(D):
                        kt[h, d, j] = qkv[b, j, 1, h, d]
            for h in range(H):
                for i in range(T):
                    for j in range(T):
                        srow[j] = 0.0
                    for d in range(D):
                        qd = qkv[b, i, 0, h, d] * scale
                        for j in range(T):
                            srow[j] += qd * kt[h, d, j]
                    mx = srow[0]
                    for j in range(1, T):
                        if srow[j] > mx:
                            mx = srow[j]
                    for j in range(T):
                        attn[b, h, i, j] = srow[j] - mx


@njit(parallel=True, cache=True, fastmath=True)
def attention_finish(qkv, attn, out):
    """Normalize exp'd scores row-wise in place and apply them to V."""
    B, T, _, H, D = qkv.shape
    n_blocks = (B + _BLOCK - 1) // _BLOCK
    for blk in prange(n_blocks):
        vt = np.empty((H, D, T))
        for b in range(blk * _BLOCK, min((blk + 1) * _BLOCK, B)):
            for j in range(T):
                for h in range(H):
                    for d in range(D):
                        vt[h, d, j] = qkv[b, j, 2, h, d]
            for h in range(H):
                for i in range(T):
                    total = 0.0
                    for j in range(T):
                        total += attn[b, h, i, j]
                    inv = 1.0 / total
                    for j in range(T):
                        attn[b, h, i, j] *= inv
                    for d in range(D):
                        acc = 0.0
                        for j in range(T):
                            acc += attn[b, h, i, j] * vt[h, d, j]
                        out[b, i, h, d] = acc


@njit(parallel=True, cache=True, fastmath=True)
def attention_backward(g, qkv, scale, attn, gqkv):
    """Gradient of the attention output w.r.t. the packed projections.

    Consumes ``attn``: the buffer is overwritten with score gradients.
    """
    B, T, _, H, D = qkv.shape
    n_blocks = (B + _BLOCK - 1) // _BLOCK
    for blk in prange(n_blocks):
        qt = np.empty((H, D, T))
        kt = np.empty((H, D, T))
        vt = np.empty((H, D, T))
        gt = np.empty((H, D, T))
        ga = np.empty(T)
        acc2 = np.empty((D, T))
        for b in range(blk * _BLOCK, min((blk + 1) * _BLOCK, B)):
            for j in range(T):
                for h in range(H):
                    for d in range(D):
                        qt[h, d, j] = qkv[b, j, 0, h, d]
                        kt[h, d, j] = qkv[b, j, 1, h, d]
                        vt[h, d, j] = qkv[b, j, 2, h, d]
                        gt[h, d, j] = g[b, j, h, d]
            for h in range(H):
                # gV first: it needs the original attention weights
                for d in range(D):
                    for j in range(T):
                        acc2[d, j] = 0.0
                for i in range(T):
                    for d in range(D):
                        gd = gt[h, d, i]
                        for j in range(T):
                            acc2[d, j] += attn[b, h, i, j] * gd
                for j in range(T):
                    for d in range(D):
                        gqkv[b, j, 2, h, d] = acc2[d, j]
                # overwrite attn rows with dLoss/dScores (scale folded in)
                for i in range(T):
                    for j in range(T):
                        ga[j] = 0.0
                    for d in range(D):
                        gd = gt[h, d, i]
                        for j in range(T):
                            ga[j] += gd * vt[h, d, j]
                    dot = 0.0
                    for j in range(T):
                        dot += ga[j] * attn[b, h, i, j]
                    for j in range(T):
                        attn[b, h, i, j] *= (ga[j] - dot) * scale
                    # gQ row: gS . K
                    for d in range(D):
                        acc = 0.0
                        for j in range(T):
                            acc += attn[b, h, i, j] * kt[h, d, j]
                        gqkv[b, i, 0, h, d] = acc
                # gK[j] = sum_i gS[i, j] * Q[i]
                for d in range(D):
                    for j in range(T):
                        acc2[d, j] = 0.0
                for i in range(T):
                    for d in range(D):
                        qd = qt[h, d, i]
                        for j in range(T):
                            acc2[d, j] += attn[b, h, i, j] * qd
                for j in range(T):
                    for d in range(D):
                        gqkv[b, j, 1, h, d] = acc2[d, j]
