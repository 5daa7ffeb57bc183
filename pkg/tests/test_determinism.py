import json
import os
import subprocess
import sys
from pathlib import Path


HERE = Path(__file__).parent


def run_probe(threads):
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    r = subprocess.run([sys.executable, str(HERE / "determinism_probe.py")], env=env,
                       capture_output=True, text=True, check=True)
    return json.loads(r.stdout)


def run_cli(threads, *argv):
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    r = subprocess.run([sys.executable, "-m", "proxyattn.cli", *argv], env=env,
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    return r.stdout


def identical_across_threads(counts=(1, 2, 4)):
    results = [run_probe(t) for t in counts]
    assert [r.pop("threads") for r in results] == list(counts)
    return all(r == results[0] for r in results), results


def test_library_paths_bitwise_across_workers():
    same, results = identical_across_threads()
    assert same, results


def test_cli_forward_bitwise_across_workers(tmp_path):
    outs = []
    for t in (1, 3):
        out = run_cli(t, "forward", "--synthetic", "cube", "--n", "2000", "--heads", "2",
                      "--head-dim", "6", "--trb-size", "4", "--workers", str(t),
                      "--out", str(tmp_path / f"o{t}.csv"))
        outs.append(out)
    assert outs[0] == outs[1]
    assert (tmp_path / "o1.csv").read_bytes() == (tmp_path / "o3.csv").read_bytes()
