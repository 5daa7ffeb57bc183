import csv
import json
import time

import numpy as np
import pytest

from proxyattn.bench import (attention_instance, checksum, loglog_slope, median_time,
                             run_latency_decomposition, run_sampler_sweep, run_scaling_bench,
                             vertex_grid_counts, write_csv, write_json)
from proxyattn.block import GridMeanFusion
from proxyattn.core import Config, ProxyError
from proxyattn.sampling import FixNumber
from proxyattn.scenes import cube
from proxyattn.spa import Direction, spa_forward

CFG = Config(heads=2, head_dim=6, trb_size=4)


def test_vertex_grid_counts():
    assert vertex_grid_counts(160) == (3, 4, 7)
    assert vertex_grid_counts(8) == (1, 1, 1)
    a, b, c = vertex_grid_counts(27)
    assert (a + 1) * (b + 1) * (c + 1) == 27
    with pytest.raises(ProxyError):
        vertex_grid_counts(7)


def test_loglog_slope_exact():
    ns = np.array([1, 2, 4, 8])
    assert loglog_slope(ns, 3.0 * ns) == pytest.approx(1.0)
    assert loglog_slope(ns, ns**2) == pytest.approx(2.0)


def test_median_time_discards_warmup():
    calls = []

    def fn():
        calls.append(1)
        time.sleep(0.02 if len(calls) == 1 else 0.0)

    assert median_time(fn, repeats=5, warmup=1) < 0.01
    assert len(calls) == 6


def test_scaling_bench_structure():
    rows = run_scaling_bench([64, 128, 256], m=8, k=8, d=4, heads=2, repeats=5,
                             dense_max_entries=128 * 8)
    assert [r["n"] for r in rows] == [64, 128, 256]
    assert [r["dense_skipped"] for r in rows] == [False, False, True]
    assert rows[2]["dense_ms"] is None and rows[2]["ratio"] is None
    for r in rows:
        assert r["sparse_ms"] > 0 and r["core_ms"] > 0
    again = run_scaling_bench([64, 128, 256], m=8, k=8, d=4, heads=2, repeats=5,
                              dense_max_entries=128 * 8)
    for a, b in zip(rows, again):
        assert (a["sparse_flops"], a["dense_flops"], a["checksum"]) == (
            b["sparse_flops"], b["dense_flops"], b["checksum"])


def test_checksum_matches_unharnessed_call():
    rows = run_scaling_bench([200], m=8, k=8, d=4, heads=1, repeats=5)
    pts, _, assoc, pfeat, params = attention_instance(200, 8, 4, 1)
    y, _ = spa_forward(pts.features, pfeat, assoc, Direction.PROXY_TO_POINT, params, 1)
    assert rows[0]["checksum"] == checksum(y)


def test_degenerate_full_association_within_3x():
    rows = run_scaling_bench([8], m=8, k=8, d=4, heads=2, repeats=31)
    r = rows[0]
    assert r["sparse_flops"] == r["dense_flops"]
    assert 1 / 3 <= r["ratio"] <= 3


def test_scaling_bench_preconditions():
    with pytest.raises(ProxyError, match="ascending"):
        run_scaling_bench([128, 64], m=8, k=8, d=4)
    with pytest.raises(ProxyError, match="repeats"):
        run_scaling_bench([64], m=8, k=8, d=4, repeats=4)
    with pytest.raises(ProxyError, match="k=4"):
        run_scaling_bench([64], m=8, k=4, d=4)


def test_latency_tree_sums_to_total():
    pts = cube(600, 0, channels=CFG.channels)
    rep = run_latency_decomposition(pts, CFG)
    assert set(rep["tree"]) == {"sampling", "association", "proxy_init", "block", "other"}
    assert set(rep["tree"]["block"]) == {"local_fusion", "spa_p2px", "global_fusion", "spa_px2p"}
    flat = [v for k, v in rep["percent"].items() if k != "block"]
    flat += list(rep["percent"]["block"].values())
    assert sum(flat) == pytest.approx(100.0, abs=0.5)
    assert rep["pairs"] == 8 * 600


class SleepyFusion(GridMeanFusion):
    def forward(self, x, cells, params):
        time.sleep(0.01)
        return super().forward(x, cells, params)


def test_latency_injected_load_dominates():
    pts = cube(300, 1, channels=CFG.channels)
    run_latency_decomposition(pts, CFG, sampler=FixNumber((2, 2, 2)))
    rep = run_latency_decomposition(pts, CFG, local_fusion=SleepyFusion(),
                                    sampler=FixNumber((2, 2, 2)))
    pct = rep["percent"]["block"]
    assert rep["tree"]["block"]["local_fusion"] >= 10.0
    leaves = [v for k, v in rep["percent"].items() if k != "block"] + list(pct.values())
    assert pct["local_fusion"] == max(leaves)
    assert pct["local_fusion"] >= 100 * 10.0 / rep["total_ms"]


def test_latency_topology_stable(tmp_path):
    pts = cube(300, 2, channels=CFG.channels)
    a = run_latency_decomposition(pts, CFG)
    b = run_latency_decomposition(pts, CFG)

    def shape(d):
        return {k: shape(v) if isinstance(v, dict) else None for k, v in d.items()}

    assert shape(a) == shape(b)
    write_json(a, tmp_path / "lat.json")
    assert json.loads((tmp_path / "lat.json").read_text())["proxy_count"] == a["proxy_count"]


def test_latency_channel_mismatch():
    with pytest.raises(ProxyError, match="channels"):
        run_latency_decomposition(cube(50, 0), CFG)


def test_sampler_sweep():
    rep = run_sampler_sweep([1.0, 100.0])
    by = {(r["aspect"], r["sampler"]): r for r in rep}
    lo, hi = Config.outdoor().proxy_count_range
    for s in ("wise", "fix-num", "fix-size"):
        assert by[1.0, s]["anisotropy"] == pytest.approx(1.0, abs=1e-12)
    assert by[100.0, "fix-size"]["budget_exceeded"]
    assert by[100.0, "fix-size"]["cell_count"] > Config().proxy_budget
    wise = by[100.0, "wise"]
    assert not wise["budget_exceeded"] and lo <= wise["cell_count"] <= hi
    assert wise["anisotropy"] == 1.0
    assert by[100.0, "fix-num"]["anisotropy"] == pytest.approx(100.0)


def test_write_csv(tmp_path):
    rows = [{"n": 1, "dense_ms": None}, {"n": 2, "dense_ms": 0.5}]
    write_csv(rows, tmp_path / "t.csv")
    got = list(csv.reader(open(tmp_path / "t.csv")))
    assert got == [["n", "dense_ms"], ["1", ""], ["2", "0.5"]]


def test_sparse_times_monotone_in_n():
    run_scaling_bench([2**11], repeats=5)
    sizes = [2**12, 2**13, 2**14, 2**15, 2**16]
    times = [r["sparse_ms"] for r in run_scaling_bench(sizes, repeats=5, dense_max_entries=0)]
    inversions = sum(b < a for a, b in zip(times, times[1:]))
    assert inversions <= 1, times
