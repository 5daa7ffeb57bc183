"""
Timing the sparse path
======================

Sparse vs dense attention as n grows, and where one forward pass spends
its time. Numbers depend on the machine; the shape of the curves is what
matters.
"""

from proxyattn import Config
from proxyattn.bench import (loglog_slope, run_latency_decomposition, run_sampler_sweep,
                             run_scaling_bench)
from proxyattn.scenes import cube

# The first call compiles the kernels, so warm up before measuring.
run_scaling_bench([2**10], repeats=5)
rows = run_scaling_bench([2**12, 2**13, 2**14, 2**15], repeats=5)
for r in rows:
    dense = "skipped" if r["dense_skipped"] else "%.1f ms" % r["dense_ms"]
    print(f"n={r['n']:6d}  sparse {r['sparse_ms']:7.2f} ms  dense {dense}")
print("log-log slope: %.2f" % loglog_slope([r["n"] for r in rows], [r["sparse_ms"] for r in rows]))

cfg = Config()
report = run_latency_decomposition(cube(20000, 0, channels=cfg.channels), cfg)
print("total %.1f ms" % report["total_ms"])
for stage, pct in report["percent"]["block"].items():
    print(f"  {stage:14s} {pct:5.1f}%")

for r in run_sampler_sweep([100.0]):
    print(r["sampler"], "budget exceeded" if r["budget_exceeded"] else r["proxy_count"])
