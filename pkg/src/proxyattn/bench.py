"""Timing harness for sparse vs dense scaling and per-stage latency, plus a
sampler sweep over flat boxes.

Times are medians over repeats after one discarded warm-up, measured with
``time.perf_counter``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
import time

import numpy as np

from .association import vertex_associate
from .block import block_forward, init_block_params, proxy_init_forward
from .core import Config, PointCloud, ProxyError, compute_aabb, seeded_rng
from .sampling import (FixNumber, FixSize, Fps, ProxyBudgetError, SpatialWise, cell_count,
                       sample_proxies, spacing_anisotropy)
from .scenes import box_cloud, slab
from .spa import (Direction, attention_core, dense_oracle, init_attention_params, pair_layout,
                  spa_flop_count, spa_forward)


def median_time(fn, repeats: int = 5, warmup: int = 1) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def checksum(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def loglog_slope(ns, times) -> float:
    return float(np.polyfit(np.log(ns), np.log(times), 1)[0])


def vertex_grid_counts(m: int) -> tuple[int, int, int]:
    """Cell counts ``(a, b, c)`` with ``(a+1)(b+1)(c+1) == m``, as even as possible."""
    best = None
    for x in range(2, m + 1):
        if m % x:
            continue
        for y in range(x, m // x + 1):
            if (m // x) % y:
                continue
            z = m // x // y
            if z < y:
                continue
            spread = z / x
            if best is None or spread < best[0]:
                best = (spread, (x - 1, y - 1, z - 1))
    if best is None:
        raise ProxyError(f"{m} proxies cannot form a grid with >= 2 vertices per axis")
    return best[1]


def attention_instance(n: int, m: int, d: int, heads: int, seed: int = 0):
    """Points in a box, ``m`` grid-vertex proxies, vertex association and
    random projection weights."""
    counts = vertex_grid_counts(m)
    pts = box_cloud(n, np.asarray(counts, dtype=float), seed, channels=d * heads)
    cfg = Config(heads=heads, head_dim=d, seed=seed, proxy_budget=max(m, 1))
    proxies = sample_proxies(pts, FixNumber(counts), cfg)
    assoc = vertex_associate(pts, proxies)
    rng = seeded_rng(seed + 1)
    proxy_feat = rng.standard_normal((m, d * heads))
    params = init_attention_params(rng, d * heads)
    return pts, proxies, assoc, proxy_feat, params


def run_scaling_bench(sizes, m: int = 160, k: int = 8, d: int = 16, heads: int = 1,
                      repeats: int = 5, seed: int = 0, dense_max_entries: int = 2**14 * 160):
    """Sparse vs dense proxy-to-point attention time at each ``n``.

    ``sparse_ms`` times :func:`spa_forward` and ``dense_ms`` the masked
    :func:`dense_oracle`, both including the four projections;
    ``core_ms`` is the sparse attention operator alone on precomputed
    q, k, v. ``dense_ms`` is None (``dense_skipped`` True) above the dense
    size cap. ``checksum`` hashes the sparse output, which is identical to
    an unharnessed call.
    """
    if list(sizes) != sorted(sizes):
        raise ProxyError("sizes must be ascending")
    if repeats < 5:
        raise ProxyError("need at least 5 repeats")
    rows = []
    for n in sizes:
        pts, proxies, assoc, pfeat, params = attention_instance(n, m, d, heads, seed)
        if len(assoc) != k * n:
            raise ProxyError(f"vertex association gives {len(assoc) // n} pairs per point, not k={k}")
        layout = pair_layout(assoc, Direction.PROXY_TO_POINT)
        q, kk, v = project_qkv(pts.features, pfeat, params, heads)

        def sparse_call():
            return spa_forward(pts.features, pfeat, assoc, Direction.PROXY_TO_POINT, params,
                               heads, layout=layout)[0]

        sparse = median_time(sparse_call, repeats)
        core = median_time(lambda: attention_core(q, kk, v, layout), repeats)
        dense = None
        if n * m <= dense_max_entries:
            dense = median_time(lambda: dense_oracle(pts.features, pfeat, assoc,
                                                     Direction.PROXY_TO_POINT, params, heads,
                                                     max_entries=dense_max_entries), repeats)
        sf, df = spa_flop_count(n, m, k, d, heads)
        rows.append({"n": n, "sparse_ms": sparse * 1e3,
                     "dense_ms": None if dense is None else dense * 1e3,
                     "dense_skipped": dense is None,
                     "ratio": None if dense is None else dense / sparse,
                     "core_ms": core * 1e3,
                     "sparse_flops": sf, "dense_flops": df,
                     "checksum": checksum(sparse_call())})
    return rows


def project_qkv(point_feat, proxy_feat, params, heads, prefix=""):
    """Head-split projections for points querying proxies."""
    p = params

    def split(x):
        return np.ascontiguousarray(x.reshape(x.shape[0], heads, -1))

    return (split(point_feat @ p[prefix + "wq"] + p[prefix + "bq"]),
            split(proxy_feat @ p[prefix + "wk"] + p[prefix + "bk"]),
            split(proxy_feat @ p[prefix + "wv"] + p[prefix + "bv"]))


def run_latency_decomposition(points: PointCloud, cfg: Config, params=None,
                              local_fusion=None, sampler=None):
    """Per-stage wall time of sampling, association, proxy init and one block.

    Returns ``{"total_ms": ..., "tree": {...ms}, "percent": {...}}``; ``other``
    holds the untimed remainder so percentages sum to 100.
    """
    if params is None:
        params = init_block_params(cfg, seeded_rng(cfg.seed))
    if points.c != cfg.channels:
        raise ProxyError(f"scene has {points.c} channels, config expects {cfg.channels}")
    t_start = time.perf_counter()
    t0 = time.perf_counter()
    proxies = sample_proxies(points, sampler or SpatialWise(), cfg)
    t_sampling = time.perf_counter() - t0
    t0 = time.perf_counter()
    assoc = vertex_associate(points, proxies, cfg.assoc_dim)
    t_assoc = time.perf_counter() - t0
    t0 = time.perf_counter()
    x_px, _ = proxy_init_forward(points.features, assoc, proxies.positions, params, cfg)
    t_init = time.perf_counter() - t0
    stages: dict = {}
    block_forward(points.features, x_px, points.positions, proxies.positions, assoc, params,
                  cfg, occupied=proxies.occupied, local_fusion=local_fusion, timings=stages)
    total = time.perf_counter() - t_start
    block = {k: stages[k] * 1e3 for k in ("local_fusion", "spa_p2px", "global_fusion",
                                          "spa_px2p")}
    tree = {"sampling": t_sampling * 1e3, "association": t_assoc * 1e3,
            "proxy_init": t_init * 1e3, "block": block}
    leaves = t_sampling + t_assoc + t_init + sum(stages.values())
    tree["other"] = max(total - leaves, 0.0) * 1e3
    total_ms = total * 1e3
    percent = {k: 100.0 * v / total_ms for k, v in tree.items() if k != "block"}
    percent["block"] = {k: 100.0 * v / total_ms for k, v in block.items()}
    return {"total_ms": total_ms, "tree": tree, "percent": percent,
            "proxy_count": proxies.m, "pairs": len(assoc)}


def _sampler_report(name, kind, points, cfg):
    entry = {"sampler": name, "budget_exceeded": False, "proxy_count": None,
             "cell_count": None, "anisotropy": None, "in_range": None}
    try:
        proxies = sample_proxies(points, kind, cfg)
    except ProxyBudgetError:
        entry["budget_exceeded"] = True
        return entry
    entry["proxy_count"] = proxies.m
    if proxies.grid is not None:
        entry["cell_count"] = proxies.grid.cell_count
        entry["anisotropy"] = spacing_anisotropy(proxies.grid)
        lo, hi = cfg.proxy_count_range
        entry["in_range"] = bool(lo <= proxies.grid.cell_count <= hi)
    return entry


def run_sampler_sweep(aspects, cfg: Config | None = None, n: int = 2000,
                      fix_size: float = 0.2, fix_counts=(7, 7, 7), seed: int = 0):
    """Run every sampler over boxes ``aspect x aspect x 1``.

    The default configuration is the outdoor preset with 3D association; a
    fixed spacing tuned for the unit cube overruns the proxy budget on wide
    slabs while the bisection keeps the cell count in range.
    """
    cfg = cfg or Config.outdoor(assoc_dim=3)
    report = []
    for aspect in aspects:
        pts = slab(n, seed, aspect=aspect, thickness=1.0)
        extent = compute_aabb(pts).extent
        kinds = [("wise", SpatialWise()), ("fix-num", FixNumber(tuple(fix_counts))),
                 ("fix-size", FixSize(fix_size)),
                 ("fps", Fps(min(n, int(np.prod(fix_counts)))))]
        for name, kind in kinds:
            entry = _sampler_report(name, kind, pts, cfg)
            entry["aspect"] = aspect
            entry["extent"] = extent.tolist()
            if name == "fix-size" and entry["budget_exceeded"]:
                entry["cell_count"] = cell_count(extent, fix_size)
            report.append(entry)
    return report


def write_csv(rows, path) -> None:
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
