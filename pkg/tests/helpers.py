"""Shared fixtures: seeded grid scenes and a central-difference checker."""

import numpy as np

from proxyattn.association import vertex_associate
from proxyattn.core import Config, PointCloud, seeded_rng
from proxyattn.sampling import FixNumber, sample_proxies


def grid_scene(seed, n, counts, channels=4, cfg=None):
    """``n`` points in the box ``[0, counts]`` with proxies on the unit grid.

    Corner points pin the bounding box so the FixNumber grid has spacing 1.
    Returns (points, proxies, assoc).
    """
    rng = seeded_rng(seed)
    counts = np.asarray(counts, dtype=float)
    pos = rng.uniform(0.0, 1.0, size=(n, 3)) * counts
    pos[0] = 0.0
    pos[1] = counts
    pts = PointCloud(pos, rng.standard_normal((n, channels)))
    cfg = cfg or Config()
    proxies = sample_proxies(pts, FixNumber(tuple(int(c) for c in counts)), cfg)
    proxies = proxies.with_features(rng.standard_normal((proxies.m, channels)))
    return pts, proxies, vertex_associate(pts, proxies)


def central_diff(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol, atol):
    err = np.abs(analytic - numeric)
    ok = err <= np.maximum(atol, rtol * np.abs(numeric))
    assert ok.all(), f"max err {err.max():.3e} at {np.unravel_index(err.argmax(), err.shape)}"
