"""Sparse proxy attention.

Attention between points and proxies restricted to an association list,
computed as a segmented map-reduce: per-pair exponential similarity, a
per-segment sum, division, then a per-query weighted sum of values. The
same machinery runs proxy self-attention when given the complete pair set.

Bias handling has three modes:

* no bias: max-subtracted softmax over each query's partners;
* ``bias_in_logit``: softmax over ``q.k / sqrt(d) + b``;
* default with bias: ``exp(q.k / sqrt(d)) + b`` (bias after the
  exponential, logits clamped to +-40), divided by its segment sum. Such
  weights still sum to one per segment but may be negative.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels as K
from .core import AssociationList, ProxyError
from .layers import glorot, linear_backward
from .trb import TrbTable, trb_backward_batch, trb_lookup_batch

DENOM_EPS = 1e-12
LOGIT_CLAMP = 40.0
ORACLE_MAX_ENTRIES = 10**6

# flop constants per pair, head and channel: 2 for the q.k dot, 2 for w * v
FLOPS_PER_PAIR_CHANNEL = 4


class Direction(enum.Enum):
    POINT_TO_PROXY = "point_to_proxy"   # proxies query, points supply keys/values
    PROXY_TO_POINT = "proxy_to_point"   # points query, proxies supply keys/values


@dataclass(frozen=True)
class PairLayout:
    """Index arrays for one attention call, all referring to the base pair order."""

    qi: np.ndarray
    ki: np.ndarray
    perm_q: np.ndarray
    off_q: np.ndarray
    perm_k: np.ndarray
    off_k: np.ndarray
    perm_n: np.ndarray
    off_n: np.ndarray
    nseg: np.ndarray

    @property
    def n_queries(self) -> int:
        return self.off_q.size - 1

    @property
    def n_keys(self) -> int:
        return self.off_k.size - 1


def pair_layout(assoc: AssociationList, direction: Direction,
                literal_eq2: bool = False) -> PairLayout:
    """Map an association list onto query/key roles.

    Weights are normalized over each query's partners; with
    ``literal_eq2`` they are normalized over pairs sharing a proxy instead.
    """
    if direction is Direction.PROXY_TO_POINT:
        qi, ki = assoc.pt, assoc.px
        perm_q, off_q, perm_k, off_k = assoc.by_pt, assoc.offsets_pt, assoc.by_px, assoc.offsets_px
    else:
        qi, ki = assoc.px, assoc.pt
        perm_q, off_q, perm_k, off_k = assoc.by_px, assoc.offsets_px, assoc.by_pt, assoc.offsets_pt
    if literal_eq2:
        perm_n, off_n, nseg = assoc.by_px, assoc.offsets_px, assoc.px
    else:
        perm_n, off_n, nseg = perm_q, off_q, qi
    return PairLayout(qi, ki, perm_q, off_q, perm_k, off_k, perm_n, off_n, nseg)


def full_layout(m: int, active: Optional[np.ndarray] = None) -> tuple[AssociationList, PairLayout]:
    """All ordered pairs among ``active`` rows of an ``m``-row set (self-attention)."""
    idx = np.arange(m) if active is None else np.flatnonzero(active)
    qi = np.repeat(idx, idx.size)
    ki = np.tile(idx, idx.size)
    assoc = AssociationList.from_pairs(qi, ki, m, m)
    return assoc, pair_layout(assoc, Direction.PROXY_TO_POINT)


def _mode(bias, bias_in_logit: bool) -> int:
    if bias is None:
        return K.SOFTMAX
    return K.IN_LOGIT if bias_in_logit else K.POST_EXP


def _split_heads(x, heads):
    return np.ascontiguousarray(x.reshape(x.shape[0], heads, -1))


@dataclass
class AttentionCore:
    """Saved state of one parameter-free attention call."""

    layout: PairLayout
    mode: int
    scale: float
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    bias: Optional[np.ndarray]
    logits: np.ndarray
    sims: np.ndarray
    weights: np.ndarray
    denom: np.ndarray
    out: np.ndarray
    empty: np.ndarray


def attention_core(q, k, v, layout: PairLayout, bias=None, bias_in_logit=False) -> AttentionCore:
    """Segmented attention on head-split ``q`` (Lq x H x d), ``k``, ``v`` (Lk x H x d).

    ``bias`` is A x H in base pair order. Queries without partners get zero rows.
    """
    if q.shape[1:] != k.shape[1:] or k.shape != v.shape:
        raise ProxyError(f"dimension mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if q.shape[0] != layout.n_queries or k.shape[0] != layout.n_keys:
        raise ProxyError(
            f"dimension mismatch: layout expects {layout.n_queries} queries and "
            f"{layout.n_keys} keys, got {q.shape[0]} and {k.shape[0]}")
    A = layout.qi.size
    H = q.shape[1]
    mode = _mode(bias, bias_in_logit)
    scale = 1.0 / math.sqrt(q.shape[2])
    b = np.zeros((0, H)) if bias is None else np.ascontiguousarray(bias, dtype=np.float64)
    if bias is not None and b.shape != (A, H):
        raise ProxyError(f"bias must be {A} x {H}, got {b.shape}")
    q = np.ascontiguousarray(q, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if layout.off_n is layout.off_q:
        logits, sims, weights, denom, out = K.attend_segments(
            q, k, v, layout.qi, layout.ki, layout.perm_q, layout.off_q, b, mode, scale,
            LOGIT_CLAMP, DENOM_EPS)
    else:
        logits, sims, weights, denom = K.normalize_segments(
            q, k, layout.qi, layout.ki, layout.perm_n, layout.off_n, b, mode, scale,
            LOGIT_CLAMP, DENOM_EPS)
        out = K.segment_gather_sum(weights, v, layout.ki, layout.perm_q, layout.off_q)
    empty = np.diff(layout.off_q) == 0
    return AttentionCore(layout, mode, scale, q, k, v, None if bias is None else b,
                         logits, sims, weights, denom, out, empty)


def attention_core_backward(core: AttentionCore, d_out):
    """Returns ``(dq, dk, dv, dbias)``; ``dbias`` is None when no bias was used."""
    L = core.layout
    d_out = np.ascontiguousarray(d_out, dtype=np.float64)
    dW = K.pair_dot(d_out, L.qi, core.v, L.ki)
    dv = K.segment_gather_sum(core.weights, d_out, L.qi, L.perm_k, L.off_k)
    wdw = K.segment_sum(core.weights * dW, L.perm_n, L.off_n)[L.nseg]
    dbias = None
    if core.mode == K.POST_EXP:
        denom = core.denom
        guarded = np.abs(denom) < DENOM_EPS
        safe = np.where(guarded, np.where(denom >= 0, DENOM_EPS, -DENOM_EPS), denom)
        dS = (dW - np.where(guarded[L.nseg], 0.0, wdw)) / safe[L.nseg]
        clipped = np.clip(core.logits, -LOGIT_CLAMP, LOGIT_CLAMP)
        dlogit = dS * np.exp(clipped) * (np.abs(core.logits) < LOGIT_CLAMP)
        dbias = dS
    else:
        dlogit = core.weights * (dW - wdw)
        if core.mode == K.IN_LOGIT:
            dbias = dlogit
    ds = np.ascontiguousarray(dlogit * core.scale)
    dq = K.segment_gather_sum(ds, core.k, L.ki, L.perm_q, L.off_q)
    dk = K.segment_gather_sum(ds, core.q, L.qi, L.perm_k, L.off_k)
    return dq, dk, dv, dbias


def init_attention_params(rng: np.random.Generator, channels: int, prefix: str = "",
                          out_gain: float = 1.0) -> dict:
    """Weights for the q, k, v and output projections."""
    p = {}
    for name in ("q", "k", "v", "o"):
        gain = out_gain if name == "o" else 1.0
        p[f"{prefix}w{name}"] = glorot(rng, channels, channels, gain)
        p[f"{prefix}b{name}"] = np.zeros(channels)
    return p


def association_displacements(assoc: AssociationList, point_pos, proxy_pos) -> np.ndarray:
    """Point position minus proxy position for every pair (base order)."""
    return np.asarray(point_pos)[assoc.pt] - np.asarray(proxy_pos)[assoc.px]


def association_bias(trb: TrbTable, assoc: AssociationList, point_pos, proxy_pos) -> np.ndarray:
    return trb_lookup_batch(trb, association_displacements(assoc, point_pos, proxy_pos))


def _sides(point_feat, proxy_feat, direction):
    if direction is Direction.PROXY_TO_POINT:
        return point_feat, proxy_feat
    return proxy_feat, point_feat


@dataclass
class SpaWorkspace:
    core: AttentionCore
    direction: Direction
    heads: int
    xq: np.ndarray
    xkv: np.ndarray
    params: dict
    prefix: str
    trb: Optional[TrbTable] = None
    displacements: Optional[np.ndarray] = None

    @property
    def empty_count(self) -> int:
        return int(self.core.empty.sum())

    @property
    def weights(self) -> np.ndarray:
        return self.core.weights


def spa_similarity(q, k, assoc: AssociationList, direction: Direction, heads: int,
                   trb: Optional[TrbTable] = None, point_pos=None, proxy_pos=None,
                   bias_in_logit: bool = False) -> np.ndarray:
    """Raw per-pair similarities ``S`` (A x H) in base pair order.

    Without a table ``S = exp(q.k / sqrt(d))``; with one, the bias is added
    after the exponential (or inside it with ``bias_in_logit``).
    """
    q = _split_heads(np.asarray(q, dtype=np.float64), heads)
    k = _split_heads(np.asarray(k, dtype=np.float64), heads)
    if q.shape[2] != k.shape[2]:
        raise ProxyError(f"dimension mismatch: {q.shape} vs {k.shape}")
    layout = pair_layout(assoc, direction)
    logits = K.pair_dot(q, layout.qi, k, layout.ki) / math.sqrt(q.shape[2])
    if trb is None:
        return np.exp(logits)
    bias = association_bias(trb, assoc, point_pos, proxy_pos)
    if bias_in_logit:
        return np.exp(logits + bias)
    return np.exp(np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)) + bias


def sparse_softmax(sims, assoc: AssociationList, direction: Direction,
                   literal_eq2: bool = False) -> np.ndarray:
    """Divide each similarity by the sum over its segment (guarded by 1e-12)."""
    layout = pair_layout(assoc, direction, literal_eq2)
    sims = np.ascontiguousarray(sims, dtype=np.float64)
    denom = K.segment_sum(sims, layout.perm_n, layout.off_n)
    safe = np.where(np.abs(denom) < DENOM_EPS, np.where(denom >= 0, DENOM_EPS, -DENOM_EPS), denom)
    return sims / safe[layout.nseg]


def spa_forward(point_feat, proxy_feat, assoc: AssociationList, direction: Direction,
                params: dict, heads: int, *, trb: Optional[TrbTable] = None,
                point_pos=None, proxy_pos=None, bias=None, bias_in_logit: bool = False,
                literal_eq2: bool = False, prefix: str = "", layout: Optional[PairLayout] = None):
    """Projected sparse attention; returns ``(query-side output, workspace)``.

    ``bias`` may be passed precomputed (A x H, base order); otherwise it is
    looked up from ``trb`` when a table is given.
    """
    xq, xkv = _sides(np.asarray(point_feat, dtype=np.float64),
                     np.asarray(proxy_feat, dtype=np.float64), direction)
    p = params
    disp = None
    if bias is None and trb is not None:
        disp = association_displacements(assoc, point_pos, proxy_pos)
        bias = trb_lookup_batch(trb, disp)
    elif trb is not None:
        disp = association_displacements(assoc, point_pos, proxy_pos)
    if layout is None:
        layout = pair_layout(assoc, direction, literal_eq2)
    q = _split_heads(xq @ p[prefix + "wq"] + p[prefix + "bq"], heads)
    k = _split_heads(xkv @ p[prefix + "wk"] + p[prefix + "bk"], heads)
    v = _split_heads(xkv @ p[prefix + "wv"] + p[prefix + "bv"], heads)
    core = attention_core(q, k, v, layout, bias, bias_in_logit)
    o = core.out.reshape(core.out.shape[0], -1)
    y = o @ p[prefix + "wo"] + p[prefix + "bo"]
    y[core.empty] = 0.0
    ws = SpaWorkspace(core, direction, heads, xq, xkv, p, prefix, trb, disp)
    return y, ws


def spa_backward(ws: SpaWorkspace, d_out) -> dict:
    """Gradients of ``sum(d_out * spa_forward(...))``.

    Keys: ``d_query_in``, ``d_kv_in``, ``d_point``, ``d_proxy``, ``d_bias``
    (or None), ``d_trb`` (when a table was used) and the projection
    parameter names.
    """
    p, pre, core = ws.params, ws.prefix, ws.core
    d_out = np.array(d_out, dtype=np.float64)
    d_out[core.empty] = 0.0
    o = core.out.reshape(core.out.shape[0], -1)
    do, dwo, dbo = linear_backward(d_out, o, p[pre + "wo"])
    dq, dk, dv, dbias = attention_core_backward(core, _split_heads(do, ws.heads))
    dq = dq.reshape(dq.shape[0], -1)
    dk = dk.reshape(dk.shape[0], -1)
    dv = dv.reshape(dv.shape[0], -1)
    dxq, dwq, dbq = linear_backward(dq, ws.xq, p[pre + "wq"])
    dxk, dwk, dbk = linear_backward(dk, ws.xkv, p[pre + "wk"])
    dxv, dwv, dbv = linear_backward(dv, ws.xkv, p[pre + "wv"])
    g = {pre + "wq": dwq, pre + "bq": dbq, pre + "wk": dwk, pre + "bk": dbk,
         pre + "wv": dwv, pre + "bv": dbv, pre + "wo": dwo, pre + "bo": dbo,
         "d_query_in": dxq, "d_kv_in": dxk + dxv, "d_bias": dbias}
    if ws.direction is Direction.PROXY_TO_POINT:
        g["d_point"], g["d_proxy"] = g["d_query_in"], g["d_kv_in"]
    else:
        g["d_point"], g["d_proxy"] = g["d_kv_in"], g["d_query_in"]
    if ws.trb is not None and dbias is not None:
        g["d_trb"], _ = trb_backward_batch(ws.trb, ws.displacements, dbias)
    return g


def dense_oracle(point_feat, proxy_feat, assoc: AssociationList, direction: Direction,
                 params: dict, heads: int, *, trb: Optional[TrbTable] = None,
                 point_pos=None, proxy_pos=None, bias=None, bias_in_logit: bool = False,
                 literal_eq2: bool = False, prefix: str = "",
                 max_entries: int = ORACLE_MAX_ENTRIES) -> np.ndarray:
    """Reference attention over the full query x key similarity matrix.

    Entries outside the association are zeroed after exponentiation, so
    the result equals :func:`spa_forward` by construction.
    """
    p = params
    xq, xkv = _sides(np.asarray(point_feat, dtype=np.float64),
                     np.asarray(proxy_feat, dtype=np.float64), direction)
    lq, lk = xq.shape[0], xkv.shape[0]
    if lq * lk > max_entries:
        raise ProxyError(f"dense oracle size cap exceeded: {lq} x {lk} > {max_entries}")
    if direction is Direction.PROXY_TO_POINT:
        qi, ki = assoc.pt, assoc.px
    else:
        qi, ki = assoc.px, assoc.pt
    if bias is None and trb is not None:
        bias = association_bias(trb, assoc, point_pos, proxy_pos)
    q = (xq @ p[prefix + "wq"] + p[prefix + "bq"]).reshape(lq, heads, -1)
    k = (xkv @ p[prefix + "wk"] + p[prefix + "bk"]).reshape(lk, heads, -1)
    v = (xkv @ p[prefix + "wv"] + p[prefix + "bv"]).reshape(lk, heads, -1)
    # proxy-side normalization under literal_eq2 means column sums when proxies are keys
    norm_axis = 1 if (literal_eq2 and direction is Direction.PROXY_TO_POINT) else 2
    o, has = dense_attention(q, k, v, qi, ki, bias, bias_in_logit, norm_axis)
    y = o.reshape(lq, -1) @ p[prefix + "wo"] + p[prefix + "bo"]
    y[~has] = 0.0
    return y


def dense_attention(q, k, v, qi, ki, bias=None, bias_in_logit=False, norm_axis=2):
    """Masked attention on the full Lq x Lk matrix for head-split inputs.

    Returns ``(out Lq x H x d, query has a partner)``. ``norm_axis`` 2
    normalizes over keys, 1 over queries.
    """
    lq, heads, d = q.shape
    lk = k.shape[0]
    mask = np.zeros((lq, lk), dtype=bool)
    mask[qi, ki] = True
    logits = np.einsum("qhd,khd->hqk", q, k) / np.sqrt(d)
    dense_bias = np.zeros((heads, lq, lk))
    if bias is not None:
        dense_bias[:, qi, ki] = np.asarray(bias).T
    if bias is not None and not bias_in_logit:
        sims = (np.exp(np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)) + dense_bias) * mask
    else:
        z = logits + dense_bias
        zm = np.where(mask, z, -np.inf)
        mx = zm.max(axis=norm_axis, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        sims = np.where(mask, np.exp(np.where(mask, z, 0.0) - mx), 0.0)
    denom = sims.sum(axis=norm_axis, keepdims=True)
    denom = np.where(np.abs(denom) < DENOM_EPS, np.where(denom >= 0, DENOM_EPS, -DENOM_EPS), denom)
    w = sims / denom
    return np.einsum("hqk,khd->qhd", w, v), mask.any(axis=1)


def spa_flop_count(n: int, m: int, k: int, d: int, h: int,
                   include_global: bool = False) -> tuple[int, int]:
    """Analytic attention flops ``(sparse, dense)`` for one direction.

    sparse = 4 k n d h (+ 4 m^2 d h for proxy self-attention), dense = 4 n m d h.
    Projections and exponentials are excluded from both.
    """
    for name, val in (("n", n), ("m", m), ("k", k), ("d", d), ("h", h)):
        if val < 1:
            raise ProxyError(f"{name} must be positive, got {val}")
    c = FLOPS_PER_PAIR_CHANNEL
    sparse = c * k * n * d * h
    if include_global:
        sparse += c * m * m * d * h
    return sparse, c * n * m * d * h


def export_attention(workspaces, assoc: AssociationList, path=None) -> list:
    """Attention weights as ``[{direction, head, pairs: [[pt, px, w], ...]}, ...]``."""
    records = []
    for ws in workspaces:
        for h in range(ws.heads):
            pairs = [[int(a), int(b), float(w)]
                     for a, b, w in zip(assoc.pt, assoc.px, ws.core.weights[:, h])]
            records.append({"direction": ws.direction.value, "head": h, "pairs": pairs})
    if path is not None:
        Path(path).write_text(json.dumps(records))
    return records
