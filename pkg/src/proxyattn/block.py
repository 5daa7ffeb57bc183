"""One dual-stream block: local fusion, point-to-proxy attention, global
fusion over proxies, proxy-to-point attention.

All sub-layers use pre-norm residual wiring, so zeroing the output
projections of every branch turns the block into the identity.
Parameters live in a flat ``dict`` of arrays; gradients come back in a
dict with the same keys.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from typing import Optional

import numpy as np

from . import _kernels as K
from .core import AssociationList, Config, ProxyError
from .layers import (_acc, ffn_backward, ffn_forward, gelu_backward, gelu_forward, glorot,
                     layernorm_backward, layernorm_forward, linear_backward)
from .spa import (Direction, association_displacements, full_layout, init_attention_params,
                  spa_backward, spa_forward)
from .trb import BiasCache, TrbTable, trb_backward_batch, trb_init

FFN_RATIO = 4
BRANCH_OUTPUTS = ("lf_w", "lf_b", "p2x_wo", "p2x_bo", "gf_wo", "gf_bo",
                  "ffn_w2", "ffn_b2", "x2p_wo", "x2p_bo")
LAYERNORMS = ("ln_lf", "ln_p2x_q", "ln_p2x_kv", "ln_gf", "ln_ffn", "ln_x2p_q", "ln_x2p_kv")


def sinusoidal_embed(positions, channels: int, temperature: float) -> np.ndarray:
    """Interleaved sin/cos features, ``channels / 6`` frequencies per axis.

    Frequency ``j`` of ``F`` is ``temperature ** (-j / F)``; axes are
    concatenated x, y, z.
    """
    if channels % 6:
        raise ProxyError(f"embedding channels must be divisible by 6, got {channels}")
    if not temperature > 0:
        raise ProxyError(f"temperature must be positive, got {temperature}")
    positions = np.asarray(positions, dtype=np.float64)
    nf = channels // 6
    freqs = float(temperature) ** (-np.arange(nf) / nf)
    phase = positions[:, :, None] * freqs[None, None, :]          # M x 3 x F
    emb = np.stack([np.sin(phase), np.cos(phase)], axis=-1)       # M x 3 x F x 2
    return emb.reshape(positions.shape[0], channels)


def init_block_params(cfg: Config, rng: np.random.Generator) -> dict:
    """Random parameters for proxy initialization and one block."""
    c = cfg.channels
    p = {}
    p["pi_w1"] = glorot(rng, c, c)
    p["pi_b1"] = np.zeros(c)
    p["pi_w2"] = glorot(rng, c, c)
    p["pi_b2"] = np.zeros(c)
    p["lf_w"] = glorot(rng, c, c)
    p["lf_b"] = np.zeros(c)
    for name in LAYERNORMS:
        p[name + "_g"] = np.ones(c)
        p[name + "_b"] = np.zeros(c)
    p.update(init_attention_params(rng, c, "p2x_"))
    p.update(init_attention_params(rng, c, "gf_"))
    p.update(init_attention_params(rng, c, "x2p_"))
    p["ffn_w1"] = glorot(rng, c, FFN_RATIO * c)
    p["ffn_b1"] = np.zeros(FFN_RATIO * c)
    p["ffn_w2"] = glorot(rng, FFN_RATIO * c, c)
    p["ffn_b2"] = np.zeros(c)
    corner, center = cfg.trb_sigma_range
    for name in ("trb_pp", "trb_px"):
        p[name] = trb_init(cfg.heads, cfg.trb_size, (center, corner), rng,
                           strength=cfg.trb_strength).values
    return p


def zero_branches(params: dict) -> dict:
    """Copy of ``params`` with every residual branch output zeroed."""
    out = {k: v.copy() for k, v in params.items()}
    for name in BRANCH_OUTPUTS:
        out[name][...] = 0.0
    return out


def _segment_mean(x, keys):
    """Mean of rows of ``x`` sharing a key, broadcast back to every row."""
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
    sums = np.add.reduceat(x[order], starts, axis=0)
    counts = np.diff(np.r_[starts, sk.size])
    group = np.empty(keys.size, dtype=np.int64)
    group[order] = np.repeat(np.arange(starts.size), counts)
    return (sums / counts[:, None])[group]


class GridMeanFusion:
    """Local fusion stub: a linear map of the mean over grid-cell co-residents.

    Any object with the same ``forward``/``backward`` signatures can be
    passed to :func:`block_forward` instead.
    """

    def forward(self, x, cells, params):
        m = _segment_mean(x, cells)
        return m @ params["lf_w"] + params["lf_b"], (m, cells)

    def backward(self, dy, cache, params, grads):
        m, cells = cache
        dm, dw, db = linear_backward(dy, m, params["lf_w"])
        _acc(grads, "lf_w", dw)
        _acc(grads, "lf_b", db)
        # the cell-mean operator is symmetric, so its adjoint is itself
        return _segment_mean(dm, cells)


def local_fusion_stub(x, cells, params):
    return GridMeanFusion().forward(x, cells, params)[0]


def _ln(x, params, name):
    return layernorm_forward(x, params[name + "_g"], params[name + "_b"])


def _ln_back(dy, cache, name, grads):
    dx, dg, db = layernorm_backward(dy, cache)
    _acc(grads, name + "_g", dg)
    _acc(grads, name + "_b", db)
    return dx


def proxy_init_forward(point_feat, assoc: AssociationList, proxy_pos, params, cfg: Config):
    """Proxy features: MLP of the mean associated point feature plus a
    sinusoidal position term. Proxies with no points keep a zero point part.
    """
    c = point_feat.shape[1]
    counts = np.diff(assoc.offsets_px)
    ones = np.ones((len(assoc), 1))
    sums = K.segment_gather_sum(ones, np.ascontiguousarray(point_feat[:, None, :]),
                                assoc.pt, assoc.by_px, assoc.offsets_px)[:, 0, :]
    has = counts > 0
    mean = sums / np.maximum(counts, 1)[:, None]
    h = mean @ params["pi_w1"] + params["pi_b1"]
    a, cg = gelu_forward(h)
    mlp = (a @ params["pi_w2"] + params["pi_b2"]) * has[:, None]
    feat = mlp + sinusoidal_embed(proxy_pos, c, cfg.embed_temperature)
    return feat, (mean, a, cg, has, counts)


def proxy_init_backward(d_feat, cache, assoc: AssociationList, params, grads):
    mean, a, cg, has, counts = cache
    dmlp = d_feat * has[:, None]
    da, dw2, db2 = linear_backward(dmlp, a, params["pi_w2"])
    dh = gelu_backward(da, cg)
    dmean, dw1, db1 = linear_backward(dh, mean, params["pi_w1"])
    for k, v in (("pi_w1", dw1), ("pi_b1", db1), ("pi_w2", dw2), ("pi_b2", db2)):
        _acc(grads, k, v)
    inv = (1.0 / np.maximum(counts, 1))[assoc.px][:, None]
    d_pt = K.segment_gather_sum(np.ascontiguousarray(inv),
                                np.ascontiguousarray(dmean[:, None, :]),
                                assoc.px, assoc.by_pt, assoc.offsets_pt)[:, 0, :]
    return d_pt


def _trb(params, name, scale) -> TrbTable:
    return TrbTable(params[name], scale)


def global_fusion_forward(x_px, proxy_pos, active, params, cfg: Config,
                          bias_cache: Optional[BiasCache] = None):
    """Proxy self-attention with relative bias, then a feed-forward layer.

    Proxies outside ``active`` neither attend nor get attended and pass
    through unchanged.
    """
    m = x_px.shape[0]
    if m < 1:
        raise ProxyError("global fusion needs at least one proxy")
    cache = bias_cache or BiasCache(share=cfg.share_trb)
    active = np.ones(m, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    full, layout = full_layout(m, active)
    table = _trb(params, "trb_px", cfg.trb_scale_px)
    disp = association_displacements(full, proxy_pos, proxy_pos)
    bias = cache.get("px", table, disp)
    h, c_ln1 = _ln(x_px, params, "ln_gf")
    y, ws = spa_forward(h, h, full, Direction.PROXY_TO_POINT, params, cfg.heads,
                        bias=bias, bias_in_logit=cfg.bias_in_logit, prefix="gf_",
                        layout=layout)
    x1 = x_px + y
    h2, c_ln2 = _ln(x1, params, "ln_ffn")
    f, c_ffn = ffn_forward(h2, params, "ffn_")
    x2 = x1 + f * active[:, None]
    return x2, dict(c_ln1=c_ln1, ws=ws, c_ln2=c_ln2, c_ffn=c_ffn, active=active,
                    table=table, disp=disp)


def global_fusion_backward(d_x2, cache, params, grads):
    active = cache["active"]
    d_f = d_x2 * active[:, None]
    d_h2 = ffn_backward(d_f, cache["c_ffn"], params, "ffn_", grads)
    d_x1 = d_x2 + _ln_back(d_h2, cache["c_ln2"], "ln_ffn", grads)
    g = spa_backward(cache["ws"], d_x1)
    _collect(grads, g, "gf_")
    d_h = g["d_point"] + g["d_proxy"]
    d_x = d_x1 + _ln_back(d_h, cache["c_ln1"], "ln_gf", grads)
    if g["d_bias"] is not None:
        dt, _ = trb_backward_batch(cache["table"], cache["disp"], g["d_bias"])
        _acc(grads, "trb_px", dt)
    return d_x


def global_fusion(x_px, proxy_pos, params, cfg: Config, active=None):
    return global_fusion_forward(x_px, proxy_pos, active, params, cfg)[0]


def _collect(grads, g, prefix):
    for k, v in g.items():
        if k.startswith(prefix):
            _acc(grads, k, v)


@contextmanager
def _timed(timings, key):
    if timings is None:
        yield
        return
    t0 = time.perf_counter()
    yield
    timings[key] = timings.get(key, 0.0) + time.perf_counter() - t0


def block_forward(point_feat, proxy_feat, point_pos, proxy_pos, assoc: AssociationList,
                  params, cfg: Config, *, occupied=None, local_fusion=None,
                  bias_cache: Optional[BiasCache] = None, timings: Optional[dict] = None):
    """Run one block; returns ``(point_out, proxy_out, cache)``.

    ``occupied`` marks proxies with points; with ``include_empty_proxies``
    off, the others sit out global fusion. ``timings`` (a dict) collects
    per-stage seconds when given.
    """
    if assoc.cells is None:
        raise ProxyError("block needs an association carrying point cells")
    fusion = local_fusion or GridMeanFusion()
    bias_cache = bias_cache or BiasCache(share=cfg.share_trb)
    table_pp = _trb(params, "trb_pp", cfg.trb_scale_pp)
    disp = association_displacements(assoc, point_pos, proxy_pos)
    active = None
    if occupied is not None and not cfg.include_empty_proxies:
        active = np.asarray(occupied, dtype=bool)
    c = {"table_pp": table_pp, "disp": disp, "fusion": fusion}

    with _timed(timings, "local_fusion"):
        h, c["ln_lf"] = _ln(point_feat, params, "ln_lf")
        lf, c["lf"] = fusion.forward(h, assoc.cells, params)
        x_pt1 = point_feat + lf

    with _timed(timings, "spa_p2px"):
        bias = bias_cache.get("pp", table_pp, disp)
        qn, c["ln_p2x_q"] = _ln(proxy_feat, params, "ln_p2x_q")
        kvn, c["ln_p2x_kv"] = _ln(x_pt1, params, "ln_p2x_kv")
        y, c["ws_p2x"] = spa_forward(kvn, qn, assoc, Direction.POINT_TO_PROXY, params,
                                     cfg.heads, bias=bias, bias_in_logit=cfg.bias_in_logit,
                                     literal_eq2=cfg.literal_eq2, prefix="p2x_")
        x_px1 = proxy_feat + y

    with _timed(timings, "global_fusion"):
        x_px2, c["gf"] = global_fusion_forward(x_px1, proxy_pos, active, params, cfg,
                                               bias_cache)

    with _timed(timings, "spa_px2p"):
        bias = bias_cache.get("pp", table_pp, disp)
        qn, c["ln_x2p_q"] = _ln(x_pt1, params, "ln_x2p_q")
        kvn, c["ln_x2p_kv"] = _ln(x_px2, params, "ln_x2p_kv")
        y, c["ws_x2p"] = spa_forward(qn, kvn, assoc, Direction.PROXY_TO_POINT, params,
                                     cfg.heads, bias=bias, bias_in_logit=cfg.bias_in_logit,
                                     literal_eq2=cfg.literal_eq2, prefix="x2p_")
        x_pt2 = x_pt1 + y
    c["bias_lookups"] = bias_cache.lookups
    return x_pt2, x_px2, c


def block_backward(d_pt, d_px, cache, params):
    """Returns ``(grads, d_point_in, d_proxy_in)``."""
    grads: dict = {}
    c = cache
    d_bias_pp = 0.0

    g = spa_backward(c["ws_x2p"], d_pt)
    _collect(grads, g, "x2p_")
    d_pt1 = d_pt + _ln_back(g["d_point"], c["ln_x2p_q"], "ln_x2p_q", grads)
    d_px2 = d_px + _ln_back(g["d_proxy"], c["ln_x2p_kv"], "ln_x2p_kv", grads)
    if g["d_bias"] is not None:
        d_bias_pp = d_bias_pp + g["d_bias"]

    d_px1 = global_fusion_backward(d_px2, c["gf"], params, grads)

    g = spa_backward(c["ws_p2x"], d_px1)
    _collect(grads, g, "p2x_")
    d_px0 = d_px1 + _ln_back(g["d_proxy"], c["ln_p2x_q"], "ln_p2x_q", grads)
    d_pt1 = d_pt1 + _ln_back(g["d_point"], c["ln_p2x_kv"], "ln_p2x_kv", grads)
    if g["d_bias"] is not None:
        d_bias_pp = d_bias_pp + g["d_bias"]

    d_h = c["fusion"].backward(d_pt1, c["lf"], params, grads)
    d_pt0 = d_pt1 + _ln_back(d_h, c["ln_lf"], "ln_lf", grads)

    if isinstance(d_bias_pp, np.ndarray):
        dt, _ = trb_backward_batch(c["table_pp"], c["disp"], d_bias_pp)
        _acc(grads, "trb_pp", dt)
    for name, value in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(value)
    return grads, d_pt0, d_px0


def sp2t_block_forward(points, proxies, assoc, params, cfg: Config, **kwargs):
    """Block forward on domain types; returns ``(point_out, proxy_out)``."""
    pt, px, _ = block_forward(points.features, proxies.features, points.positions,
                              proxies.positions, assoc, params, cfg,
                              occupied=proxies.occupied, **kwargs)
    return pt, px


def proxy_init(points, proxies, assoc, params, cfg: Config):
    """Return ``proxies`` with initialized features."""
    feat, _ = proxy_init_forward(points.features, assoc, proxies.positions, params, cfg)
    return proxies.with_features(feat)
