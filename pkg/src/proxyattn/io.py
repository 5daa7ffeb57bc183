"""Point cloud readers and writers: XYZ text and binary little-endian PLY."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .core import PointCloud, ProxyError

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

_SPLIT = re.compile(r"[,\s]+")


def _with_features(pos, feat, channels):
    if feat is None or feat.shape[1] == 0:
        feat = np.zeros((pos.shape[0], channels))
    return PointCloud(pos, feat)


def read_text_points(path, channels: int = 1) -> PointCloud:
    """Rows of ``x y z [f1 ... fC]``, separated by whitespace or commas.

    Blank lines and ``#`` comments are skipped. Every row must carry the
    same column count.
    """
    rows, width = [], None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [t for t in _SPLIT.split(line) if t]
            if len(parts) < 3:
                raise ProxyError(f"{path}:{lineno}: expected at least 3 columns, got {len(parts)}")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ProxyError(f"{path}:{lineno}: expected {width} columns, got {len(parts)}")
            try:
                rows.append([float(t) for t in parts])
            except ValueError:
                raise ProxyError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
    if not rows:
        raise ProxyError(f"{path}: no points")
    data = np.asarray(rows, dtype=np.float64)
    return _with_features(data[:, :3], data[:, 3:], channels)


def read_ply(path, channels: int = 1) -> PointCloud:
    """Binary little-endian PLY; scalar vertex properties besides x/y/z become features."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ProxyError(f"{path}:1: not a PLY file")
    body_start = data.index(b"\n", end) + 1
    header = data[:body_start].decode("ascii", errors="replace").splitlines()
    elements, fmt = [], None
    for lineno, line in enumerate(header, 1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ProxyError(f"{path}:{lineno}: malformed element line {line!r}")
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ProxyError(f"{path}:{lineno}: property before element")
            if len(tok) != 3 or tok[1] not in PLY_TYPES:
                raise ProxyError(f"{path}:{lineno}: unsupported property {line!r}")
            elements[-1][2].append((tok[2], "<" + PLY_TYPES[tok[1]]))
        else:
            raise ProxyError(f"{path}:{lineno}: unexpected header line {line!r}")
    if fmt != "binary_little_endian":
        raise ProxyError(f"{path}: only binary_little_endian PLY is supported, got {fmt}")
    offset = body_start
    for name, count, props in elements:
        dtype = np.dtype(props)
        if name == "vertex":
            need = offset + count * dtype.itemsize
            if len(data) < need:
                raise ProxyError(f"{path}: truncated vertex data")
            verts = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            names = [p for p, _ in props]
            if not {"x", "y", "z"} <= set(names):
                raise ProxyError(f"{path}: vertex element lacks x/y/z")
            pos = np.stack([verts[a].astype(np.float64) for a in "xyz"], axis=1)
            extra = [p for p in names if p not in "xyz"]
            feat = (np.stack([verts[p].astype(np.float64) for p in extra], axis=1)
                    if extra else None)
            return _with_features(pos, feat, channels)
        offset += count * dtype.itemsize
    raise ProxyError(f"{path}: no vertex element")


def ingest_points(path, channels: int = 1) -> PointCloud:
    """Load a cloud from text or binary PLY, chosen by the file's magic bytes."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic.startswith(b"ply"):
        return read_ply(path, channels)
    return read_text_points(path, channels)


def write_ply(path, positions, features=None) -> None:
    """Binary little-endian PLY with float32 x/y/z and optional f0..fC properties."""
    positions = np.asarray(positions)
    cols = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if features is not None:
        cols += [(f"f{i}", "<f4") for i in range(features.shape[1])]
    rec = np.empty(positions.shape[0], dtype=cols)
    for i, a in enumerate("xyz"):
        rec[a] = positions[:, i]
    if features is not None:
        for i in range(features.shape[1]):
            rec[f"f{i}"] = features[:, i]
    lines = ["ply", "format binary_little_endian 1.0",
             f"element vertex {positions.shape[0]}"]
    lines += [f"property float {name}" for name, _ in cols]
    lines.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def write_xyz(path, positions, features=None) -> None:
    data = np.asarray(positions)
    if features is not None:
        data = np.hstack([data, features])
    np.savetxt(path, data, fmt="%.9g")
