"""Numba segment kernels behind sparse attention.

Every kernel parallelizes over independent output rows (a segment or a
pair) and walks its inputs in a fixed order, so results are bitwise
independent of the number of worker threads.
"""

import math
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

SOFTMAX = 0     # exp(l - max) / sum; no bias
POST_EXP = 1    # (exp(clip(l)) + b) / sum, bias added after the exponential
IN_LOGIT = 2    # softmax over l + b


def normalize_segments(q, k, qi, ki, perm, offsets, bias, mode, scale, clamp, eps):
    """Similarities and weights for every pair, normalized per segment.

    Returns ``(logits, sims, weights, denom)``; ``denom`` is the raw
    segment sum of ``sims`` before the epsilon guard.
    """
    no_values = np.zeros((1, q.shape[1], 0))
    return attend_segments(q, k, no_values, qi, ki, perm, offsets, bias, mode, scale,
                           clamp, eps)[:4]


@njit(parallel=True, cache=True)
def segment_gather_sum(w, rows, idx, perm, offsets):
    """``out[s] = sum over pairs p of segment s of w[p] * rows[idx[p]]``."""
    S = offsets.shape[0] - 1
    H = rows.shape[1]
    d = rows.shape[2]
    out = np.zeros((S, H, d))
    for s in prange(S):
        for j in range(offsets[s], offsets[s + 1]):
            p = perm[j]
            y = idx[p]
            for h in range(H):
                wv = w[p, h]
                for c in range(d):
                    out[s, h, c] += wv * rows[y, h, c]
    return out


@njit(parallel=True, cache=True)
def pair_dot(a, ia, b, ib):
    """Per-pair, per-head dot product ``a[ia[p], h] . b[ib[p], h]``."""
    A = ia.shape[0]
    H = a.shape[1]
    d = a.shape[2]
    out = np.empty((A, H))
    for p in prange(A):
        x = ia[p]
        y = ib[p]
        for h in range(H):
            acc = 0.0
            for c in range(d):
                acc += a[x, h, c] * b[y, h, c]
            out[p, h] = acc
    return out


@njit(parallel=True, cache=True)
def segment_sum(vals, perm, offsets):
    S = offsets.shape[0] - 1
    H = vals.shape[1]
    out = np.zeros((S, H))
    for s in prange(S):
        for j in range(offsets[s], offsets[s + 1]):
            p = perm[j]
            for h in range(H):
                out[s, h] += vals[p, h]
    return out


@njit(parallel=True, cache=True)
def trilinear_lookup(nodes, disp, input_scale, T):
    """Align-corners trilinear sample of ``nodes`` (H x T^3) at each clamped,
    scaled displacement row; corners visited in fixed bit order (x, y, z)."""
    A = disp.shape[0]
    H = nodes.shape[0]
    out = np.zeros((A, H))
    for a in prange(A):
        i0 = np.empty(3, np.int64)
        fr = np.empty(3)
        for ax in range(3):
            u = min(max(input_scale * disp[a, ax], -1.0), 1.0)
            t = (u + 1.0) * 0.5 * (T - 1)
            i = min(max(math.floor(t), 0), T - 2)
            i0[ax] = i
            fr[ax] = t - i
        for c in range(8):
            bx = (c >> 2) & 1
            by = (c >> 1) & 1
            bz = c & 1
            wx = fr[0] if bx == 1 else 1.0 - fr[0]
            wy = fr[1] if by == 1 else 1.0 - fr[1]
            wz = fr[2] if bz == 1 else 1.0 - fr[2]
            w = wx * wy * wz
            flat = ((i0[0] + bx) * T + (i0[1] + by)) * T + (i0[2] + bz)
            for h in range(H):
                out[a, h] += w * nodes[h, flat]
    return out


@njit(parallel=True, cache=True)
def attend_segments(q, k, v, qi, ki, perm, offsets, bias, mode, scale, clamp, eps):
    """Per-segment normalization plus the weighted sum of ``v`` rows.

    Returns ``(logits, sims, weights, denom, out)`` with ``out`` S x H x d;
    pass a zero-width ``v`` to skip the sum.
    """
    A = qi.shape[0]
    H = q.shape[1]
    d = q.shape[2]
    dv = v.shape[2]
    S = offsets.shape[0] - 1
    has_bias = bias.shape[0] == A
    logits = np.empty((A, H))
    sims = np.empty((A, H))
    weights = np.empty((A, H))
    denom = np.zeros((S, H))
    out = np.zeros((S, H, dv))
    for s in prange(S):
        lo = offsets[s]
        hi = offsets[s + 1]
        for h in range(H):
            mx = -np.inf
            for j in range(lo, hi):
                p = perm[j]
                x = qi[p]
                y = ki[p]
                acc = 0.0
                for c in range(d):
                    acc += q[x, h, c] * k[y, h, c]
                acc *= scale
                if mode == IN_LOGIT and has_bias:
                    acc += bias[p, h]
                logits[p, h] = acc
                if acc > mx:
                    mx = acc
            tot = 0.0
            for j in range(lo, hi):
                p = perm[j]
                if mode == POST_EXP:
                    lv = min(max(logits[p, h], -clamp), clamp)
                    e = math.exp(lv)
                    if has_bias:
                        e += bias[p, h]
                else:
                    e = math.exp(logits[p, h] - mx)
                sims[p, h] = e
                tot += e
            denom[s, h] = tot
            safe = tot
            if abs(safe) < eps:
                safe = eps if safe >= 0.0 else -eps
            for j in range(lo, hi):
                p = perm[j]
                wv = sims[p, h] / safe
                weights[p, h] = wv
                y = ki[p]
                for c in range(dv):
                    out[s, h, c] += wv * v[y, h, c]
    return logits, sims, weights, denom, out
