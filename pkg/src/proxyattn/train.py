"""Toy end-to-end model: linear-in, proxy initialization, one block,
linear-out, softmax cross-entropy. Trained by plain gradient descent with
the hand-written backward pass.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .association import vertex_associate
from .block import (block_backward, block_forward, init_block_params, proxy_init_backward,
                    proxy_init_forward)
from .core import AssociationList, Config, PointCloud, ProxyError, ProxySet, seeded_rng
from .layers import _acc, glorot, linear_backward, softmax_cross_entropy
from .sampling import SpatialWise, sample_proxies

DEFAULT_LR = 0.05
CLIP_NORM = 1.0


@dataclass
class Scene:
    points: PointCloud
    proxies: ProxySet
    assoc: AssociationList
    labels: np.ndarray


def two_cluster_scene(n_per_cluster: int = 500, seed: int = 0, sigma: float = 0.25) -> tuple[PointCloud, np.ndarray]:
    """Two Gaussian blobs inside a 2 x 2 x 2 box; features are the coordinates.

    Returns the cloud and the per-point cluster label.
    """
    rng = seeded_rng(seed)
    centers = np.array([[0.6, 0.6, 0.6], [1.4, 1.4, 1.4]])
    pos = np.concatenate([rng.normal(c, sigma, size=(n_per_cluster, 3)) for c in centers])
    pos = np.clip(pos, 0.0, 2.0)
    labels = np.repeat([0, 1], n_per_cluster)
    return PointCloud(pos, pos - 1.0), labels


def build_scene(points: PointCloud, labels, cfg: Config, sampler=None) -> Scene:
    proxies = sample_proxies(points, sampler or SpatialWise(), cfg)
    assoc = vertex_associate(points, proxies, cfg.assoc_dim)
    return Scene(points, proxies, assoc, np.asarray(labels, dtype=np.int64))


def init_model(cfg: Config, in_channels: int, n_classes: int, seed: int | None = None) -> dict:
    """Block parameters plus the input and output heads.

    The output head starts at zero, so an untrained model predicts every
    class with equal probability.
    """
    rng = seeded_rng(cfg.seed if seed is None else seed)
    p = {"in_w": glorot(rng, in_channels, cfg.channels), "in_b": np.zeros(cfg.channels)}
    p.update(init_block_params(cfg, rng))
    p["out_w"] = np.zeros((cfg.channels, n_classes))
    p["out_b"] = np.zeros(n_classes)
    return p


def model_forward(scene: Scene, params: dict, cfg: Config):
    pts, pxs = scene.points, scene.proxies
    h = pts.features @ params["in_w"] + params["in_b"]
    x_px, c_pi = proxy_init_forward(h, scene.assoc, pxs.positions, params, cfg)
    x_pt, x_px2, c_blk = block_forward(h, x_px, pts.positions, pxs.positions, scene.assoc,
                                       params, cfg, occupied=pxs.occupied)
    logits = x_pt @ params["out_w"] + params["out_b"]
    return logits, dict(h=h, c_pi=c_pi, c_blk=c_blk, x_pt=x_pt, x_px=x_px2)


def model_backward(d_logits, cache, scene: Scene, params: dict) -> dict:
    d_xpt, dw_out, db_out = linear_backward(d_logits, cache["x_pt"], params["out_w"])
    grads, d_h, d_xpx0 = block_backward(d_xpt, np.zeros_like(cache["x_px"]),
                                        cache["c_blk"], params)
    d_h = d_h + proxy_init_backward(d_xpx0, cache["c_pi"], scene.assoc, params, grads)
    _, dw_in, db_in = linear_backward(d_h, scene.points.features, params["in_w"])
    _acc(grads, "in_w", dw_in)
    _acc(grads, "in_b", db_in)
    _acc(grads, "out_w", dw_out)
    _acc(grads, "out_b", db_out)
    return grads


def loss_and_grads(scene: Scene, params: dict, cfg: Config):
    logits, cache = model_forward(scene, params, cfg)
    loss, d_logits = softmax_cross_entropy(logits, scene.labels)
    acc = float((logits.argmax(axis=1) == scene.labels).mean())
    return loss, acc, model_backward(d_logits, cache, scene, params)


def toy_train_step(scene: Scene, params: dict, lr: float, cfg: Config,
                   clip_norm: float | None = CLIP_NORM):
    """One gradient-descent step; returns ``(loss, accuracy, new_params)``.

    Loss and accuracy are measured before the update. The step is rescaled
    when the global gradient norm exceeds ``clip_norm``.
    """
    loss, acc, grads = loss_and_grads(scene, params, cfg)
    factor = 1.0
    if clip_norm is not None:
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > clip_norm:
            factor = clip_norm / norm
    new = {k: v - (lr * factor) * grads[k] for k, v in params.items()}
    return loss, acc, new


def evaluate(scene: Scene, params: dict, cfg: Config):
    logits, _ = model_forward(scene, params, cfg)
    loss, _ = softmax_cross_entropy(logits, scene.labels)
    return float(loss), float((logits.argmax(axis=1) == scene.labels).mean())


def train_toy(cfg: Config, steps: int = 500, lr: float = DEFAULT_LR, scene: Scene | None = None,
              log_path=None):
    """Train on the two-cluster scene; returns ``(params, log rows, final accuracy)``."""
    if scene is None:
        points, labels = two_cluster_scene(seed=cfg.seed)
        scene = build_scene(points, labels, cfg)
    params = init_model(cfg, scene.points.c, int(scene.labels.max()) + 1)
    log = []
    for step in range(steps):
        loss, acc, params = toy_train_step(scene, params, lr, cfg)
        log.append((step, float(loss), acc))
    final_loss, final_acc = evaluate(scene, params, cfg)
    log.append((steps, final_loss, final_acc))
    if log_path is not None:
        write_log(log, log_path)
    return params, log, final_acc


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "accuracy"])
        w.writerows(rows)


def save_checkpoint(params: dict, path) -> None:
    """Flat little-endian f64 blob at ``path`` plus ``path.json`` manifest."""
    path = Path(path)
    manifest, blobs, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    path.write_bytes(b"".join(blobs))
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=1))


def load_checkpoint(path, expected: dict | None = None) -> dict:
    """Read a checkpoint; with ``expected`` every shape must match."""
    path = Path(path)
    manifest = json.loads(Path(str(path) + ".json").read_text())
    flat = np.frombuffer(path.read_bytes(), dtype="<f8")
    params = {}
    for entry in manifest:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        arr = flat[entry["offset"]: entry["offset"] + size]
        params[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    if expected is not None:
        for name, ref in expected.items():
            if name not in params:
                raise ProxyError(f"checkpoint is missing parameter {name!r}")
            if params[name].shape != ref.shape:
                raise ProxyError(f"checkpoint shape mismatch for {name!r}: "
                                 f"got {params[name].shape}, expected {ref.shape}")
    return params
