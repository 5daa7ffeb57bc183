"""Seeded synthetic point clouds for the tests and the CLI."""

import numpy as np

from .core import PointCloud, seeded_rng
from .train import two_cluster_scene


def box_cloud(n: int, extent, seed: int = 0, channels: int = 3) -> PointCloud:
    """``n`` uniform points in ``[0, extent]``; features are the centered coordinates
    (or random normals when ``channels != 3``).

    The first and last points sit on opposite corners, so the bounding box
    is exactly the requested extent.
    """
    rng = seeded_rng(seed)
    extent = np.asarray(extent, dtype=np.float64)
    pos = rng.uniform(0.0, 1.0, size=(n, 3)) * extent
    if n >= 2:
        pos[0] = 0.0
        pos[-1] = extent
    if channels == 3:
        feat = pos - extent / 2
    else:
        feat = rng.standard_normal((n, channels))
    return PointCloud(pos, feat)


def cube(n: int = 2000, seed: int = 0, size: float = 1.0, channels: int = 3) -> PointCloud:
    return box_cloud(n, (size, size, size), seed, channels)


def slab(n: int = 2000, seed: int = 0, aspect: float = 100.0, thickness: float = 1.0,
         channels: int = 3) -> PointCloud:
    """Flat box ``aspect * thickness`` wide on x and y."""
    w = aspect * thickness
    return box_cloud(n, (w, w, thickness), seed, channels)


def synthetic(name: str, n: int | None = None, seed: int = 0, channels: int = 3):
    """Return ``(cloud, labels or None)`` for ``cube``, ``slab`` or ``clusters``."""
    if name == "cube":
        return cube(n or 2000, seed, channels=channels), None
    if name == "slab":
        return slab(n or 2000, seed, channels=channels), None
    if name == "clusters":
        pts, labels = two_cluster_scene((n or 1000) // 2, seed)
        return pts, labels
    raise ValueError(f"unknown synthetic scene {name!r}")
