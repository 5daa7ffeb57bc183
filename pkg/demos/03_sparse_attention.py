"""
Sparse proxy attention
======================

Attention restricted to the association list, checked against a masked
dense implementation, with gradients from the hand-written backward pass.
"""

import numpy as np

from proxyattn import (Direction, dense_oracle, export_attention, seeded_rng, spa_backward,
                       spa_flop_count, spa_forward, trb_init)
from proxyattn.bench import attention_instance

pts, proxies, assoc, proxy_feat, params = attention_instance(4000, 160, 16, 2, seed=0)

# Proxy-to-point: every point queries its 8 proxies.
y, ws = spa_forward(pts.features, proxy_feat, assoc, Direction.PROXY_TO_POINT, params, 2)
ref = dense_oracle(pts.features, proxy_feat, assoc, Direction.PROXY_TO_POINT, params, 2)
print("points updated:", y.shape, " max diff vs dense: %.1e" % np.abs(y - ref).max())

# Point-to-proxy: every proxy gathers all points around it.
y2, ws2 = spa_forward(pts.features, proxy_feat, assoc, Direction.POINT_TO_PROXY, params, 2)
print("proxies updated:", y2.shape)

# With a relative bias table the bias is added after the exponential by
# default; bias_in_logit=True adds it to the logit instead.
table = trb_init(2, 16, (2.5, 0.5), seeded_rng(1), input_scale=0.5)
kw = dict(trb=table, point_pos=pts.positions, proxy_pos=proxies.positions)
for in_logit in (False, True):
    yb, _ = spa_forward(pts.features, proxy_feat, assoc, Direction.PROXY_TO_POINT, params, 2,
                        bias_in_logit=in_logit, **kw)
    print("bias in logit" if in_logit else "bias post exp", "-> mean |y| = %.4f" % np.abs(yb).mean())

# Gradients of sum(y * g) for every projection and both inputs.
g = spa_backward(ws, np.ones_like(y))
print("gradient keys:", sorted(k for k in g if g[k] is not None))

# Work ratio against dense attention: k / m.
sparse, dense = spa_flop_count(4000, 160, 8, 16, 2)
print("flop ratio sparse/dense = %.3f" % (sparse / dense))

# Attention weights as JSON records (one per direction and head).
recs = export_attention([ws, ws2], assoc)
print(len(recs), "records; first pair:", recs[0]["pairs"][0])
