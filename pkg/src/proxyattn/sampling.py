"""Proxy placement strategies.

Three grid samplers (spatial-wise bisection, fixed cell count, fixed cell
size) put proxies on every vertex of a regular grid over the cloud's
bounding box. The farthest-point sampler picks input points instead and
has no grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association import cell_vertices
from .core import (EPS_AXIS, Aabb, Config, GridSpec, PointCloud, ProxyError,
                   ProxySet, compute_aabb, seeded_rng)


class ProxyBudgetError(ProxyError):
    pass


@dataclass(frozen=True)
class SpatialWise:
    pass


@dataclass(frozen=True)
class FixNumber:
    counts: tuple[int, int, int]

    def __post_init__(self):
        if len(self.counts) != 3 or min(self.counts) < 1:
            raise ProxyError(f"FixNumber counts must be three positive ints, got {self.counts}")


@dataclass(frozen=True)
class FixSize:
    spacing: float

    def __post_init__(self):
        if not self.spacing > 0:
            raise ProxyError(f"FixSize spacing must be positive, got {self.spacing}")


@dataclass(frozen=True)
class Fps:
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ProxyError(f"Fps count must be positive, got {self.count}")


SamplerKind = SpatialWise | FixNumber | FixSize | Fps


def _effective_extent(extent) -> np.ndarray:
    return np.maximum(np.asarray(extent, dtype=np.float64), EPS_AXIS)


def grid_shape(extent, spacing) -> np.ndarray:
    """Cells per axis needed to cover ``extent`` at ``spacing`` (at least one)."""
    e = _effective_extent(extent)
    return np.maximum(np.ceil(e / spacing), 1).astype(np.int64)


def cell_count(extent, spacing: float) -> int:
    return int(np.prod(grid_shape(extent, spacing)))


def spatial_wise_spacing(aabb: Aabb, cfg: Config) -> float:
    """Bisection for one isotropic spacing whose cell count lands in range.

    A larger spacing never yields more cells, so the search moves right
    when the grid is too dense and left when too sparse. When ``max_iter``
    runs out without a hit, the final midpoint is returned.
    """
    if np.all(aabb.extent <= 0):
        raise ProxyError("degenerate AABB")
    cnt_low, cnt_high = cfg.proxy_count_range
    lo, hi = cfg.search_bounds
    for _ in range(cfg.max_iter):
        mid = (lo + hi) / 2
        count = cell_count(aabb.extent, mid)
        if cnt_low <= count <= cnt_high:
            return mid
        if count < cnt_low:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2


def fps(positions: np.ndarray, k: int, seed: int = 0, start: int | None = None) -> np.ndarray:
    """Greedy farthest-point sampling; returns ``k`` point indices.

    The first index comes from the seeded RNG unless ``start`` is given.
    Ties go to the lowest index (``argmax`` picks the first maximum).
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if not 1 <= k <= n:
        raise ProxyError(f"fps needs 1 <= k <= N, got k={k}, N={n}")
    if start is None:
        start = int(seeded_rng(seed).integers(n))
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    mindist = np.linalg.norm(positions - positions[start], axis=1)
    mindist[start] = -1.0
    for i in range(1, k):
        nxt = int(np.argmax(mindist))
        chosen[i] = nxt
        d = np.linalg.norm(positions - positions[nxt], axis=1)
        np.minimum(mindist, d, out=mindist)
        mindist[chosen[: i + 1]] = -1.0
    return chosen


def _grid_for(kind, aabb: Aabb, cfg: Config) -> GridSpec:
    extent = aabb.extent
    if isinstance(kind, SpatialWise):
        s = spatial_wise_spacing(aabb, cfg)
        return GridSpec(aabb.min, np.full(3, s), grid_shape(extent, s))
    if isinstance(kind, FixNumber):
        counts = np.asarray(kind.counts, dtype=np.int64)
        return GridSpec(aabb.min, _effective_extent(extent) / counts, counts)
    if isinstance(kind, FixSize):
        return GridSpec(aabb.min, np.full(3, kind.spacing), grid_shape(extent, kind.spacing))
    raise ProxyError(f"not a grid sampler: {kind!r}")


def plan_grid(points: PointCloud, kind, cfg: Config) -> GridSpec:
    """Build the grid for ``kind`` and enforce the proxy budget."""
    grid = _grid_for(kind, compute_aabb(points), cfg)
    if grid.vertex_count > cfg.proxy_budget:
        raise ProxyBudgetError(
            f"proxy budget exceeded: {grid.vertex_count} vertices > {cfg.proxy_budget}")
    return grid


def sample_proxies(points: PointCloud, kind, cfg: Config) -> ProxySet:
    """Place proxies for ``points``; feature rows start at zero."""
    if points.n < 1:
        raise ProxyError("empty input")
    if isinstance(kind, Fps):
        idx = fps(points.positions, kind.count, seed=cfg.seed)
        pos = points.positions[idx]
        return ProxySet(pos, np.zeros((kind.count, points.c)), np.ones(kind.count, bool))
    grid = plan_grid(points, kind, cfg)
    _, verts = cell_vertices(points.positions, grid, cfg.assoc_dim)
    occupied = np.zeros(grid.vertex_count, dtype=bool)
    occupied[verts.ravel()] = True
    return ProxySet(grid.vertex_positions(), np.zeros((grid.vertex_count, points.c)),
                    occupied, grid)


def spacing_anisotropy(grid: GridSpec) -> float:
    return float(grid.spacing.max() / grid.spacing.min())


__all__ = [
    "SpatialWise", "FixNumber", "FixSize", "Fps", "SamplerKind", "ProxyBudgetError",
    "grid_shape", "cell_count", "spatial_wise_spacing", "fps", "plan_grid",
    "sample_proxies", "spacing_anisotropy",
]
