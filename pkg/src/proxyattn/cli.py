"""Command-line entry point.

Exit codes: 0 success, 1 internal invariant violation, 2 user input error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, scenes
from .association import vertex_associate
from .block import block_forward, proxy_init_forward
from .core import Config, ProxyError
from .io import ingest_points, write_xyz
from .sampling import FixNumber, FixSize, Fps, SpatialWise, sample_proxies
from .spa import export_attention
from .train import DEFAULT_LR, build_scene, init_model, load_checkpoint, save_checkpoint, train_toy


class InvariantError(RuntimeError):
    """A result violated a property the library guarantees."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise InvariantError(msg)


# -- argument handling -------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scene and model")
    g.add_argument("--input", help="XYZ text or binary PLY point file")
    g.add_argument("--synthetic", choices=("cube", "slab", "clusters"),
                   help="generate a seeded scene instead of reading --input")
    g.add_argument("--n", type=int, help="synthetic point count")
    g.add_argument("--channels", type=int, default=3,
                   help="feature channels to zero-fill when the input has none")
    g.add_argument("--sampler", nargs="+", default=["wise"], metavar="KIND [ARGS]",
                   help="wise | fix-num NX [NY NZ] | fix-size SPACING | fps COUNT")
    g.add_argument("--target", type=int, help="target cell count; accepted range is +-25%%")
    g.add_argument("--assoc-dim", type=int, choices=(2, 3))
    g.add_argument("--heads", type=int)
    g.add_argument("--head-dim", type=int)
    g.add_argument("--trb-size", type=int)
    g.add_argument("--bias-in-logit", action="store_true", default=None)
    g.add_argument("--literal-eq2", action="store_true", default=None)
    g.add_argument("--seed", type=int)
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--workers", type=int, help="worker threads for the compute kernels")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="proxyattn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample proxies and report counts")
    _common(p)
    p.add_argument("--out", help="write proxy positions as XYZ text")

    p = sub.add_parser("forward", help="proxy init plus one block; dump outputs")
    _common(p)
    p.add_argument("--checkpoint", help="parameters saved by train-toy")
    p.add_argument("--dump-attn", help="write attention weights as JSON")
    p.add_argument("--out", help="per-point output CSV (default: stdout summary only)")

    p = sub.add_parser("train-toy", help="train on the two-cluster scene")
    _common(p)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--out", default="train_out", help="directory for log and checkpoint")

    p = sub.add_parser("bench", help="timing harness")
    _common(p)
    p.add_argument("--bench", required=True, choices=("scaling", "latency", "samplers"))
    p.add_argument("--sizes", type=int, nargs="+",
                   default=[2**14, 2**15, 2**16, 2**17, 2**18])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--aspects", type=float, nargs="+", default=[1.0, 10.0, 100.0])
    p.add_argument("--out", help="CSV (scaling, samplers) or JSON (latency) output")

    p = sub.add_parser("config", help="print the effective configuration")
    _common(p)
    p.add_argument("--out", help="write key = value text instead of printing")
    return ap


def config_from_args(args) -> Config:
    cfg = Config.from_file(args.config) if args.config else Config()
    over = {}
    if args.target is not None:
        if args.target < 1:
            raise ProxyError(f"--target must be positive, got {args.target}")
        over["proxy_count_range"] = (math.floor(0.75 * args.target),
                                     math.ceil(1.25 * args.target))
    for flag, field in (("assoc_dim", "assoc_dim"), ("heads", "heads"),
                        ("head_dim", "head_dim"), ("trb_size", "trb_size"),
                        ("bias_in_logit", "bias_in_logit"), ("literal_eq2", "literal_eq2"),
                        ("seed", "seed")):
        val = getattr(args, flag)
        if val is not None:
            over[field] = val
    return cfg.replace(**over) if over else cfg


def sampler_from_args(tokens, cfg: Config):
    kind, rest = tokens[0], tokens[1:]
    try:
        if kind == "wise":
            if rest:
                raise ProxyError("wise takes no arguments")
            return SpatialWise()
        if kind == "fix-num":
            counts = [int(t) for t in rest] or [4]
            if len(counts) == 1:
                counts *= 3
            if len(counts) != 3:
                raise ProxyError("fix-num takes 1 or 3 counts")
            return FixNumber(tuple(counts))
        if kind == "fix-size":
            if len(rest) != 1:
                raise ProxyError("fix-size takes one spacing")
            return FixSize(float(rest[0]))
        if kind == "fps":
            if len(rest) > 1:
                raise ProxyError("fps takes one count")
            lo, hi = cfg.proxy_count_range
            return Fps(int(rest[0]) if rest else (lo + hi) // 2)
    except ValueError as exc:
        if isinstance(exc, ProxyError):
            raise
        raise ProxyError(f"bad --sampler arguments {' '.join(tokens)!r}: {exc}") from None
    raise ProxyError(f"unknown sampler {kind!r}; choose wise, fix-num, fix-size or fps")


def load_scene(args, cfg: Config, default: str = "cube"):
    """Returns ``(cloud, labels or None)``."""
    if args.input and args.synthetic:
        raise ProxyError("give either --input or --synthetic, not both")
    if args.input:
        return ingest_points(args.input, channels=args.channels), None
    return scenes.synthetic(args.synthetic or default, args.n, cfg.seed)


# -- commands ----------------------------------------------------------------

def cmd_sample(args, cfg: Config, out=None) -> int:
    out = out or sys.stdout
    points, _ = load_scene(args, cfg)
    kind = sampler_from_args(args.sampler, cfg)
    proxies = sample_proxies(points, kind, cfg)
    print(f"points: {points.n}", file=out)
    print(f"sampler: {args.sampler[0]}", file=out)
    print(f"proxies: {proxies.m}", file=out)
    if proxies.grid is not None:
        g = proxies.grid
        spacing = " ".join(f"{s:.6g}" for s in g.spacing)
        print(f"cells: {g.cell_count} ({' x '.join(str(int(v)) for v in g.shape)})", file=out)
        print(f"vertices: {g.vertex_count}", file=out)
        print(f"spacing: {spacing}", file=out)
        if isinstance(kind, SpatialWise):
            lo, hi = cfg.proxy_count_range
            print(f"in range [{lo}, {hi}]: {'yes' if lo <= g.cell_count <= hi else 'no'}",
                  file=out)
    print(f"occupancy: {proxies.occupied.mean():.4f}", file=out)
    if args.out:
        write_xyz(args.out, proxies.positions)
    return 0


def cmd_forward(args, cfg: Config, out=None) -> int:
    out = out or sys.stdout
    points, labels = load_scene(args, cfg)
    kind = sampler_from_args(args.sampler, cfg)
    proxies = sample_proxies(points, kind, cfg)
    assoc = vertex_associate(points, proxies, cfg.assoc_dim)
    params = init_model(cfg, points.c, 2)
    if args.checkpoint:
        if not Path(args.checkpoint).is_file():
            raise FileNotFoundError(f"no such file: {args.checkpoint}")
        params = load_checkpoint(args.checkpoint, expected=params)
    h = points.features @ params["in_w"] + params["in_b"]
    x_px, _ = proxy_init_forward(h, assoc, proxies.positions, params, cfg)
    x_pt, x_px, cache = block_forward(h, x_px, points.positions, proxies.positions, assoc,
                                      params, cfg, occupied=proxies.occupied)
    _check(x_pt.shape[0] == points.n, "output row count differs from point count")
    _check(bool(np.all(np.isfinite(x_pt))), "non-finite block output")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point"] + [f"f{i}" for i in range(x_pt.shape[1])])
            for i, row in enumerate(x_pt):
                w.writerow([i] + [repr(float(v)) for v in row])
    if args.dump_attn:
        export_attention([cache["ws_p2x"], cache["ws_x2p"]], assoc, args.dump_attn)
    print(f"points: {points.n}  proxies: {proxies.m}  pairs: {len(assoc)}", file=out)
    print(f"output: {x_pt.shape[0]} x {x_pt.shape[1]}  checksum: {bench.checksum(x_pt)[:16]}",
          file=out)
    return 0


def cmd_train_toy(args, cfg: Config, out=None) -> int:
    out = out or sys.stdout
    if args.steps < 0:
        raise ProxyError(f"--steps must be >= 0, got {args.steps}")
    if args.input:
        raise ProxyError("train-toy uses the synthetic two-cluster scene")
    points, labels = scenes.synthetic("clusters", args.n, cfg.seed)
    scene = build_scene(points, labels, cfg, sampler_from_args(args.sampler, cfg))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    params, log, acc = train_toy(cfg, args.steps, args.lr, scene, outdir / "train_log.csv")
    save_checkpoint(params, outdir / "checkpoint.bin")
    _check(all(math.isfinite(r[1]) for r in log), "training loss became non-finite")
    print(f"steps: {args.steps}  final loss: {log[-1][1]:.6f}", file=out)
    print(f"final accuracy: {acc:.4f}", file=out)
    return 0


def cmd_bench(args, cfg: Config, out=None) -> int:
    out = out or sys.stdout
    if args.bench == "scaling":
        rows = bench.run_scaling_bench(args.sizes, repeats=args.repeats, seed=cfg.seed)
        if args.out:
            bench.write_csv(rows, args.out)
        for r in rows:
            dense = "skipped" if r["dense_skipped"] else f"{r['dense_ms']:.3f}"
            ratio = "" if r["ratio"] is None else f"  ratio {r['ratio']:.1f}"
            print(f"n={r['n']:>8}  sparse {r['sparse_ms']:.3f} ms  dense {dense}{ratio}",
                  file=out)
        if len(rows) > 1:
            slope = bench.loglog_slope([r["n"] for r in rows], [r["sparse_ms"] for r in rows])
            print(f"log-log slope: {slope:.3f}", file=out)
    elif args.bench == "latency":
        if args.input:
            points = ingest_points(args.input, channels=cfg.channels)
        else:
            points, _ = scenes.synthetic(args.synthetic or "cube", args.n or 100_000,
                                         cfg.seed, channels=cfg.channels)
        if points.c != cfg.channels:
            points = points.with_features(np.zeros((points.n, cfg.channels)))
        report = bench.run_latency_decomposition(points, cfg,
                                                 sampler=sampler_from_args(args.sampler, cfg))
        if args.out:
            bench.write_json(report, args.out)
        _print_tree(report, out)
    else:
        rows = bench.run_sampler_sweep(args.aspects, seed=cfg.seed)
        for r in rows:
            r["extent"] = " ".join(f"{v:.6g}" for v in r["extent"])
        if args.out:
            bench.write_csv(rows, args.out)
        for r in rows:
            flag = "BUDGET EXCEEDED" if r["budget_exceeded"] else f"proxies {r['proxy_count']}"
            print(f"aspect {r['aspect']:>6g}  {r['sampler']:<8} {flag}", file=out)
    return 0


def _print_tree(report, out) -> None:
    print(f"total: {report['total_ms']:.2f} ms", file=out)
    for key, val in report["tree"].items():
        if isinstance(val, dict):
            print(f"{key}:", file=out)
            for sub, ms in val.items():
                print(f"  {sub:<14} {ms:9.2f} ms  {report['percent'][key][sub]:5.1f}%", file=out)
        else:
            print(f"{key:<16} {val:9.2f} ms  {report['percent'][key]:5.1f}%", file=out)


def cmd_config(args, cfg: Config, out=None) -> int:
    out = out or sys.stdout
    text = cfg.to_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        out.write(text)
    return 0


COMMANDS = {"sample": cmd_sample, "forward": cmd_forward, "train-toy": cmd_train_toy,
            "bench": cmd_bench, "config": cmd_config}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers is not None:
            import numba
            if not 1 <= args.workers <= numba.config.NUMBA_NUM_THREADS:
                raise ProxyError(f"--workers must be in [1, {numba.config.NUMBA_NUM_THREADS}]")
            numba.set_num_threads(args.workers)
        cfg = config_from_args(args)
        return COMMANDS[args.command](args, cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ProxyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a bug, not bad input
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
