"""Small forward/backward primitives shared by the branches and the block.

Every *_fwd returns (output, cache); the matching *_bwd consumes the cache
and the upstream gradient. All math is plain numpy in float64.
"""

from __future__ import annotations

import numpy as np


def matmul(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Projection matmul. Kept as a named seam so tests can count MACs."""
    return a @ w


einsum = np.einsum


def linear_fwd(x, w, b):
    return matmul(x, w) + b, (x, w)


def linear_bwd(dy, cache):
    x, w = cache
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def layernorm_fwd(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layernorm_bwd(dy, cache):
    xhat, inv, gain = cache
    n = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, n).sum(axis=0)
    dbias = dy.reshape(-1, n).sum(axis=0)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu_fwd(x):
    s = sigmoid(x)
    return x * s, (x, s)


def silu_bwd(dy, cache):
    x, s = cache
    return dy * s * (1.0 + x * (1.0 - s))


def softplus(x):
    return np.logaddexp(0.0, x)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu_fwd(x):
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    return 0.5 * x * (1.0 + t), (x, x2, t)


def gelu_bwd(dy, cache):
    x, x2, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)
