"""Point/proxy association by grid-vertex lookup, plus a brute-force L-inf KNN oracle."""

from __future__ import annotations

import itertools

import numpy as np

from .core import AssociationList, GridSpec, PointCloud, ProxyError, ProxySet

OUTSIDE_TOL = 1e-9


def point_cells(positions: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Integer cell index (N x 3) of every position.

    Half-open cells: an integral grid coordinate belongs to the cell on its
    positive side, except on the max face where it is clamped inward.
    """
    positions = np.asarray(positions, dtype=np.float64)
    span = grid.shape * grid.spacing
    tol = OUTSIDE_TOL * max(float(span.max()), 1.0)
    lo = grid.origin - tol
    hi = grid.origin + span + tol
    bad = np.any((positions < lo) | (positions > hi), axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ProxyError(f"point outside grid (index {i}, position {positions[i]})")
    g = (positions - grid.origin) / grid.spacing
    return np.clip(np.floor(g), 0, grid.shape - 1).astype(np.int64)


def _corner_offsets(dim: int) -> np.ndarray:
    if dim == 3:
        return np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)
    if dim == 2:
        return np.array([(a, b, 0) for a, b in itertools.product((0, 1), repeat=2)],
                        dtype=np.int64)
    raise ProxyError(f"association dim must be 2 or 3, got {dim}")


def cell_vertices(positions: np.ndarray, grid: GridSpec, dim: int = 3):
    """Return (cells, vertices): the N x 3 cell index and N x 2**dim flat vertex ids.

    With ``dim == 2`` only the x/y corners are used; the z layer is the
    vertex nearest to the point along z.
    """
    cells = point_cells(positions, grid)
    base = cells.copy()
    if dim == 2:
        gz = (positions[:, 2] - grid.origin[2]) / grid.spacing[2]
        base[:, 2] = np.clip(np.floor(gz + 0.5), 0, grid.shape[2]).astype(np.int64)
    corners = base[:, None, :] + _corner_offsets(dim)[None, :, :]
    vs = grid.vertex_shape
    flat = (corners[..., 0] * vs[1] + corners[..., 1]) * vs[2] + corners[..., 2]
    return cells, flat


def flat_cells(cells: np.ndarray, grid: GridSpec) -> np.ndarray:
    sh = grid.shape
    return (cells[:, 0] * sh[1] + cells[:, 1]) * sh[2] + cells[:, 2]


def vertex_associate(points: PointCloud, proxies: ProxySet, dim: int = 3) -> AssociationList:
    """Associate every point with the 2**dim vertices of its grid cell."""
    if proxies.grid is None:
        raise ProxyError("vertex association requires a grid-based proxy set")
    grid = proxies.grid
    cells, flat = cell_vertices(points.positions, grid, dim)
    k = flat.shape[1]
    pt = np.repeat(np.arange(points.n, dtype=np.int64), k)
    return AssociationList.from_pairs(pt, flat.ravel(), points.n, proxies.m,
                                      cells=flat_cells(cells, grid))


def knn_linf_oracle(points: PointCloud, proxies: ProxySet, k: int) -> AssociationList:
    """Brute-force O(N*M) k nearest proxies under the L-inf norm.

    Ties resolve toward the lower proxy index.
    """
    if k > proxies.m:
        raise ProxyError(f"k={k} exceeds proxy count {proxies.m}")
    pt_all, px_all = [], []
    for i, p in enumerate(points.positions):
        dist = np.abs(proxies.positions - p).max(axis=1)
        nearest = np.argsort(dist, kind="stable")[:k]
        pt_all.append(np.full(k, i))
        px_all.append(nearest)
    if not pt_all:
        return AssociationList.from_pairs([], [], points.n, proxies.m)
    return AssociationList.from_pairs(np.concatenate(pt_all), np.concatenate(px_all),
                                      points.n, proxies.m)
