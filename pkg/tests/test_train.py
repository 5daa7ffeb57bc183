import numpy as np
import pytest

from proxyattn.core import Config, PointCloud, ProxyError
from proxyattn.sampling import FixNumber
from proxyattn.train import (build_scene, evaluate, init_model, load_checkpoint, loss_and_grads,
                             save_checkpoint, toy_train_step, train_toy, two_cluster_scene,
                             write_log)

from helpers import assert_grad_close, central_diff

CFG = Config(heads=2, head_dim=6, trb_size=4)


def small_scene(n=30, seed=0, cfg=CFG, sampler=None):
    pts, labels = two_cluster_scene(n // 2, seed)
    return build_scene(pts, labels, cfg, sampler)


def test_two_cluster_scene_shape():
    pts, labels = two_cluster_scene(500, 0)
    assert pts.n == 1000 and pts.c == 3
    assert labels.sum() == 500
    assert pts.positions.min() >= 0 and pts.positions.max() <= 2


def test_lr_zero_is_flat():
    scene = small_scene()
    params = init_model(CFG, 3, 2)
    params["out_w"][:] = np.random.default_rng(0).standard_normal(params["out_w"].shape)
    losses = []
    p = params
    for _ in range(3):
        loss, _, p = toy_train_step(scene, p, 0.0, CFG)
        losses.append(loss)
    assert losses[0] == losses[1] == losses[2]
    for k in params:
        np.testing.assert_array_equal(p[k], params[k])


def test_one_point_loss_decreases():
    pts = PointCloud(np.array([[0.5, 0.5, 0.5]]), np.array([[0.2, -0.1, 0.4]]))
    scene = build_scene(pts, [1], CFG, FixNumber((1, 1, 1)))
    p = init_model(CFG, 3, 2)
    losses = []
    for _ in range(50):
        loss, _, p = toy_train_step(scene, p, 0.05, CFG)
        losses.append(loss)
    assert np.all(np.diff(losses) < 0)


def test_untrained_accuracy_is_chance():
    scene = small_scene(200)
    _, acc = evaluate(scene, init_model(CFG, 3, 2), CFG)
    assert abs(acc - 0.5) <= 0.1


def test_train_zero_steps(tmp_path):
    scene = small_scene(40)
    _, log, acc = train_toy(CFG, steps=0, scene=scene, log_path=tmp_path / "log.csv")
    assert len(log) == 1 and acc == pytest.approx(0.5, abs=0.1)
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "step,loss,accuracy"


def test_model_gradient_finite_difference():
    scene = small_scene(16, seed=3, sampler=FixNumber((1, 1, 1)))
    p = init_model(CFG, 3, 2)
    rng = np.random.default_rng(1)
    p["out_w"] = rng.standard_normal(p["out_w"].shape)
    p["out_b"] = rng.standard_normal(2)
    _, _, grads = loss_and_grads(scene, p, CFG)
    loss = lambda: float(loss_and_grads(scene, p, CFG)[0])
    for name in ("in_w", "in_b", "pi_w1", "p2x_wq", "gf_wv", "x2p_wo", "out_w", "out_b"):
        assert_grad_close(grads[name], central_diff(loss, p[name]), 1e-5, 1e-9)


def test_checkpoint_roundtrip(tmp_path):
    p = init_model(CFG, 3, 2)
    save_checkpoint(p, tmp_path / "ck.bin")
    q = load_checkpoint(tmp_path / "ck.bin", expected=p)
    assert q.keys() == p.keys()
    for k in p:
        np.testing.assert_array_equal(q[k], p[k])


def test_checkpoint_shape_mismatch(tmp_path):
    save_checkpoint(init_model(Config(heads=2, head_dim=24), 3, 2), tmp_path / "ck.bin")
    with pytest.raises(ProxyError, match=r"in_w.*\(3, 48\).*\(3, 12\)"):
        load_checkpoint(tmp_path / "ck.bin", expected=init_model(CFG, 3, 2))


def test_checkpoint_missing_param(tmp_path):
    p = init_model(CFG, 3, 2)
    del p["out_b"]
    save_checkpoint(p, tmp_path / "ck.bin")
    with pytest.raises(ProxyError, match="out_b"):
        load_checkpoint(tmp_path / "ck.bin", expected=init_model(CFG, 3, 2))


def test_write_log(tmp_path):
    write_log([(0, 1.5, 0.5), (1, 1.25, 0.75)], tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines() == [
        "step,loss,accuracy", "0,1.5,0.5", "1,1.25,0.75"]
