"""Dense building blocks with hand-written backward passes.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache.
"""

import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def layernorm_forward(x, gamma, beta):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layernorm_backward(dy, cache):
    xhat, inv, gamma = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    c = xhat.shape[1]
    dx = inv / c * (c * dxhat - dxhat.sum(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
    return dx, dgamma, dbeta


def gelu_forward(x):
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    return x * cdf, (x, cdf)


def gelu_backward(dy, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return dy * (cdf + x * pdf)


def ffn_forward(x, p, prefix):
    h, c1 = linear_forward(x, p[prefix + "w1"], p[prefix + "b1"])
    a, cg = gelu_forward(h)
    y, c2 = linear_forward(a, p[prefix + "w2"], p[prefix + "b2"])
    return y, (c1, cg, c2)


def ffn_backward(dy, cache, p, prefix, grads):
    c1, cg, c2 = cache
    da, dw2, db2 = linear_backward(dy, c2, p[prefix + "w2"])
    dh = gelu_backward(da, cg)
    dx, dw1, db1 = linear_backward(dh, c1, p[prefix + "w1"])
    _acc(grads, prefix + "w1", dw1)
    _acc(grads, prefix + "b1", db1)
    _acc(grads, prefix + "w2", dw2)
    _acc(grads, prefix + "b2", db2)
    return dx


def _acc(grads, name, value):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


def glorot(rng, fan_in, fan_out, gain=1.0):
    limit = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
