"""Domain types, seeded RNG and configuration shared by every module."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

EPS_AXIS = 1e-6


class ProxyError(ValueError):
    """Raised for invalid inputs anywhere in the package."""


def _finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ProxyError(f"{name} contains non-finite entries")


def seeded_rng(seed: int) -> np.random.Generator:
    """Return a Philox-4x64 counter-based generator for ``seed``.

    Philox output depends only on the key and counter, so streams are
    identical across runs and platforms.
    """
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        feat = np.ascontiguousarray(self.features, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ProxyError(f"positions must be N x 3, got {pos.shape}")
        if feat.ndim != 2 or feat.shape[0] != pos.shape[0]:
            raise ProxyError(
                f"features must have {pos.shape[0]} rows, got {feat.shape}")
        if feat.shape[1] < 1:
            raise ProxyError("features need at least one channel")
        _finite("positions", pos)
        _finite("features", feat)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def c(self) -> int:
        return self.features.shape[1]

    def with_features(self, features: np.ndarray) -> "PointCloud":
        return PointCloud(self.positions, features)


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(hi < lo):
            raise ProxyError("Aabb max must be >= min on every axis")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min


def compute_aabb(points: PointCloud | np.ndarray) -> Aabb:
    pos = points.positions if isinstance(points, PointCloud) else np.asarray(points)
    if pos.shape[0] == 0:
        raise ProxyError("empty input")
    return Aabb(pos.min(axis=0), pos.max(axis=0))


@dataclass(frozen=True)
class GridSpec:
    """Regular grid: ``shape`` cells per axis, ``shape + 1`` vertices."""

    origin: np.ndarray
    spacing: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        spacing = np.asarray(self.spacing, dtype=np.float64).reshape(3)
        shape = np.asarray(self.shape, dtype=np.int64).reshape(3)
        if np.any(spacing <= 0):
            raise ProxyError(f"grid spacing must be positive, got {spacing}")
        if np.any(shape < 1):
            raise ProxyError(f"grid shape must be >= 1, got {shape}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "shape", shape)

    @property
    def vertex_shape(self) -> tuple[int, int, int]:
        return tuple(int(s) + 1 for s in self.shape)

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def vertex_count(self) -> int:
        return int(np.prod(self.shape + 1))

    def vertex_positions(self) -> np.ndarray:
        """All vertex coordinates in C order of (i, j, k)."""
        idx = np.indices(self.vertex_shape).reshape(3, -1).T
        return self.origin + idx * self.spacing

    def flat_vertex(self, ijk: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(ijk).T), self.vertex_shape)


@dataclass(frozen=True)
class ProxySet:
    positions: np.ndarray
    features: np.ndarray
    occupied: np.ndarray
    grid: Optional[GridSpec] = None

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        feat = np.ascontiguousarray(self.features, dtype=np.float64)
        occ = np.asarray(self.occupied, dtype=bool)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ProxyError(f"proxy positions must be M x 3, got {pos.shape}")
        if feat.shape[0] != pos.shape[0] or occ.shape != (pos.shape[0],):
            raise ProxyError("proxy features/occupancy disagree with positions")
        _finite("proxy positions", pos)
        _finite("proxy features", feat)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)
        object.__setattr__(self, "occupied", occ)

    @property
    def m(self) -> int:
        return self.positions.shape[0]

    def with_features(self, features: np.ndarray) -> "ProxySet":
        return dataclasses.replace(self, features=features)


def _offsets(keys: np.ndarray, size: int) -> np.ndarray:
    counts = np.bincount(keys, minlength=size)
    offsets = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets


@dataclass(frozen=True)
class AssociationList:
    """Point/proxy pairs sorted by ``(pt, px)``.

    ``by_pt`` and ``by_px`` are permutations of the pair list; the pairs
    ``by_px[offsets_px[j]:offsets_px[j + 1]]`` all reference proxy ``j``
    and likewise for points. ``cells`` optionally carries the flat grid
    cell index of every point.
    """

    pt: np.ndarray
    px: np.ndarray
    n: int
    m: int
    by_pt: np.ndarray = field(repr=False)
    by_px: np.ndarray = field(repr=False)
    offsets_pt: np.ndarray = field(repr=False)
    offsets_px: np.ndarray = field(repr=False)
    cells: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_pairs(cls, pt, px, n: int, m: int, cells=None) -> "AssociationList":
        pt = np.asarray(pt, dtype=np.int64).ravel()
        px = np.asarray(px, dtype=np.int64).ravel()
        if pt.shape != px.shape:
            raise ProxyError("pt and px must have equal length")
        if pt.size and (pt.min() < 0 or pt.max() >= n or px.min() < 0 or px.max() >= m):
            raise ProxyError("association index out of range")
        order = np.lexsort((px, pt))
        pt, px = pt[order], px[order]
        if pt.size > 1:
            dup = (pt[1:] == pt[:-1]) & (px[1:] == px[:-1])
            if np.any(dup):
                raise ProxyError("duplicate (pt, px) pair")
        by_pt = np.arange(pt.size, dtype=np.int64)
        by_px = np.argsort(px, kind="stable").astype(np.int64)
        if cells is not None:
            cells = np.asarray(cells, dtype=np.int64)
        return cls(pt, px, int(n), int(m), by_pt, by_px,
                   _offsets(pt, n), _offsets(px, m), cells)

    def __len__(self) -> int:
        return self.pt.size

    @property
    def pairs(self) -> np.ndarray:
        return np.stack([self.pt, self.px], axis=1)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.pairs, fmt="%d", delimiter=",", header="pt,px",
                   comments="")


@dataclass(frozen=True)
class Config:
    """Run configuration. Defaults follow the indoor model settings."""

    proxy_count_range: tuple[int, int] = (120, 200)
    search_bounds: tuple[float, float] = (0.0, 1.0)
    max_iter: int = 10
    heads: int = 3
    head_dim: int = 16
    trb_size: int = 16
    trb_scale_pp: float = 2.5
    trb_scale_px: float = 0.4
    trb_sigma_range: tuple[float, float] = (0.5, 2.5)
    trb_strength: float = 1.0
    embed_temperature: float = 10.0
    assoc_dim: int = 3
    include_empty_proxies: bool = True
    bias_in_logit: bool = False
    literal_eq2: bool = False
    share_trb: bool = True
    proxy_budget: int = 100_000
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.proxy_count_range
        if not 1 <= lo <= hi:
            raise ProxyError(f"proxy_count_range: need 1 <= N_min <= N_max, got {self.proxy_count_range}")
        s_lo, s_hi = self.search_bounds
        if not 0 <= s_lo < s_hi:
            raise ProxyError(f"search_bounds: need 0 <= s_min < s_max, got {self.search_bounds}")
        checks = [
            ("max_iter", self.max_iter >= 1),
            ("heads", self.heads >= 1),
            ("head_dim", self.head_dim >= 1),
            ("trb_size", self.trb_size >= 2),
            ("trb_scale_pp", self.trb_scale_pp > 0),
            ("trb_scale_px", self.trb_scale_px > 0),
            ("trb_sigma_range", min(self.trb_sigma_range) >= 0),
            ("trb_strength", self.trb_strength >= 0),
            ("embed_temperature", self.embed_temperature > 0),
            ("assoc_dim", self.assoc_dim in (2, 3)),
            ("proxy_budget", self.proxy_budget >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ProxyError(f"{name}: invalid value {getattr(self, name)!r}")

    @property
    def channels(self) -> int:
        return self.heads * self.head_dim

    @classmethod
    def outdoor(cls, **overrides) -> "Config":
        base = dict(proxy_count_range=(300, 500), search_bounds=(0.0, 20.0),
                    max_iter=16, embed_temperature=1.0, assoc_dim=2,
                    trb_scale_pp=0.2, trb_scale_px=0.04)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_file(cls, path) -> "Config":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        text = Path(path).read_text()
        values = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ProxyError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ProxyError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(types[key], val, f"{path}:{lineno}")
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _parse_value(typ: str, val: str, where: str):
    try:
        if typ.startswith("tuple[int"):
            return tuple(int(x) for x in val.split(","))
        if typ.startswith("tuple[float"):
            return tuple(float(x) for x in val.split(","))
        if typ == "bool":
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
    except ValueError:
        raise ProxyError(f"{where}: cannot parse {val!r} as {typ}") from None
    raise ProxyError(f"{where}: unsupported field type {typ}")
