"""Table-based relative bias.

A learnable ``H x T x T x T`` volume is sampled at the scaled and clamped
relative displacement by trilinear interpolation (align-corners: a clamped
coordinate of -1 or +1 lands exactly on a boundary node).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ._kernels import trilinear_lookup
from .core import ProxyError

# corner order matches the weight products below: bit 2 -> x, bit 1 -> y, bit 0 -> z
_CORNERS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)], dtype=np.int64)


@dataclass(frozen=True)
class TrbTable:
    values: np.ndarray
    input_scale: float = 1.0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 4 or not (v.shape[1] == v.shape[2] == v.shape[3]):
            raise ProxyError(f"TRB values must be H x T x T x T, got {v.shape}")
        if v.shape[1] < 2:
            raise ProxyError("TRB table needs at least two nodes per axis")
        if not np.all(np.isfinite(v)):
            raise ProxyError("TRB values contain non-finite entries")
        if not self.input_scale > 0:
            raise ProxyError(f"TRB input scale must be positive, got {self.input_scale}")
        object.__setattr__(self, "values", v)

    @property
    def heads(self) -> int:
        return self.values.shape[0]

    @property
    def size(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "TrbTable":
        return TrbTable(values, self.input_scale)


def node_radius(size: int) -> np.ndarray:
    """Normalized distance of every node from the table center, in [0, 1]."""
    u = np.linspace(-1.0, 1.0, size)
    ux, uy, uz = np.meshgrid(u, u, u, indexing="ij")
    return np.sqrt(ux**2 + uy**2 + uz**2) / np.sqrt(3.0)


def linear_sigma(center: float, corner: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda r: center + (corner - center) * r


def trb_init(heads: int, size: int, sigma_schedule, rng: np.random.Generator,
             input_scale: float = 1.0, strength: float = 1.0) -> TrbTable:
    """Draw each node from N(0, sigma(r)^2), r its normalized radius.

    ``sigma_schedule`` is a constant, a ``(center, corner)`` pair for a
    linear ramp, or a callable of the radius array.
    """
    if heads < 1 or size < 2:
        raise ProxyError(f"need heads >= 1 and size >= 2, got {heads}, {size}")
    r = node_radius(size)
    if callable(sigma_schedule):
        sigma = np.asarray(sigma_schedule(r), dtype=np.float64)
    elif np.ndim(sigma_schedule) == 0:
        sigma = np.full_like(r, float(sigma_schedule))
    else:
        center, corner = sigma_schedule
        sigma = linear_sigma(center, corner)(r)
    sigma = strength * np.broadcast_to(sigma, r.shape)
    values = rng.standard_normal((heads, size, size, size)) * sigma
    return TrbTable(values, input_scale)


def _interp_plan(table: TrbTable, disp: np.ndarray):
    disp = np.asarray(disp, dtype=np.float64).reshape(-1, 3)
    T = table.size
    raw = table.input_scale * disp
    u = np.clip(raw, -1.0, 1.0)
    t = (u + 1.0) * 0.5 * (T - 1)
    i0 = np.clip(np.floor(t), 0, T - 2).astype(np.int64)
    frac = t - i0
    corner = i0[:, None, :] + _CORNERS[None, :, :]
    flat = (corner[..., 0] * T + corner[..., 1]) * T + corner[..., 2]
    per_axis = np.where(_CORNERS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    weights = per_axis[..., 0] * per_axis[..., 1] * per_axis[..., 2]
    return flat, weights, per_axis, raw


def trb_weights(table: TrbTable, disp: np.ndarray):
    """Flat node indices (A x 8) and trilinear weights (A x 8)."""
    flat, weights, _, _ = _interp_plan(table, disp)
    return flat, weights


def trb_lookup_batch(table: TrbTable, disp: np.ndarray) -> np.ndarray:
    """Bias per displacement row and head, shape A x H."""
    disp = np.ascontiguousarray(np.reshape(disp, (-1, 3)), dtype=np.float64)
    nodes = table.values.reshape(table.heads, -1)
    # rows are computed independently, so results never depend on batch size
    return trilinear_lookup(nodes, disp, float(table.input_scale), table.size)


def trb_lookup(table: TrbTable, x) -> np.ndarray:
    return trb_lookup_batch(table, np.asarray(x, dtype=np.float64).reshape(1, 3))[0]


def trb_backward_batch(table: TrbTable, disp: np.ndarray, upstream: np.ndarray):
    """Gradients of ``sum(upstream * trb_lookup_batch(table, disp))``.

    Returns ``(grad_values, grad_disp)``; the displacement gradient is zero
    on any axis where the scaled input sits outside (-1, 1).
    """
    flat, weights, per_axis, raw = _interp_plan(table, disp)
    upstream = np.asarray(upstream, dtype=np.float64).reshape(flat.shape[0], table.heads)
    T, H = table.size, table.heads
    grad = np.empty((H, T**3))
    idx = flat.ravel()
    for h in range(H):
        w = (weights * upstream[:, h, None]).ravel()
        grad[h] = np.bincount(idx, weights=w, minlength=T**3)

    nodes = table.values.reshape(H, -1)
    vals = nodes[:, flat]                       # H x A x 8
    sign = np.where(_CORNERS == 1, 1.0, -1.0)   # d(per_axis)/d(frac)
    grad_disp = np.zeros((flat.shape[0], 3))
    for ax in range(3):
        others = [a for a in range(3) if a != ax]
        dw = sign[None, :, ax] * per_axis[..., others[0]] * per_axis[..., others[1]]
        dI_dt = np.einsum("hac,ac->ah", vals, dw)
        grad_disp[:, ax] = (upstream * dI_dt).sum(axis=1)
    inside = np.abs(raw) < 1.0
    grad_disp *= inside * (0.5 * (T - 1) * table.input_scale)
    return grad.reshape(table.values.shape), grad_disp


def trb_backward(table: TrbTable, x, upstream):
    g, gx = trb_backward_batch(table, np.reshape(x, (1, 3)), np.reshape(upstream, (1, -1)))
    return g, gx[0]


class BiasCache:
    """Memoizes bias lookups per key within one forward pass.

    With ``share=False`` every request hits the table again; the values are
    identical either way and only ``lookups`` differs.
    """

    def __init__(self, share: bool = True):
        self.share = share
        self.lookups = 0
        self._store: dict = {}

    def get(self, key, table: TrbTable, disp: np.ndarray) -> np.ndarray:
        if self.share and key in self._store:
            return self._store[key]
        self.lookups += 1
        bias = trb_lookup_batch(table, disp)
        self._store[key] = bias
        return bias


def save_table(table: TrbTable, path) -> None:
    """Write ``<u32 H><u32 T>`` followed by H*T^3 little-endian f64 values."""
    header = struct.pack("<II", table.heads, table.size)
    Path(path).write_bytes(header + table.values.astype("<f8").tobytes())


def load_table(path, input_scale: float = 1.0) -> TrbTable:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ProxyError(f"{path}: truncated TRB header")
    H, T = struct.unpack("<II", data[:8])
    expected = 8 + 8 * H * T**3
    if len(data) != expected:
        raise ProxyError(f"{path}: expected {expected} bytes for H={H}, T={T}, got {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=8).reshape(H, T, T, T)
    return TrbTable(values.astype(np.float64), input_scale)
