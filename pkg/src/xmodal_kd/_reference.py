"""Pure numpy implementation of the dense-layer kernels.

Used when the compiled extension is unavailable, or when forced with
``XMODAL_KD_BACKEND=python``.
"""

from __future__ import annotations

import numpy as np


def forward_batch(weights, biases, x):
    acts = [x]
    cur = x
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        out = cur @ W.T + b
        if i < last:
            np.maximum(out, 0.0, out=out)
        acts.append(out)
        cur = out
    return acts


def backward_batch(weights, acts, dlogits):
    n_layers = len(weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    delta = dlogits
    for i in range(n_layers - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i]) * (acts[i] > 0.0)
    return grads_w, grads_b


def sgd_update(params, grads, lr):
    for g in grads:
        if not np.isfinite(g).all():
            return False
    for p, g in zip(params, grads):
        p -= lr * g
    return True


def backward_sgd(weights, biases, acts, dlogits, lr):
    gw, gb = backward_batch(weights, acts, dlogits)
    params, grads = [], []
    for w, b, a, c in zip(weights, biases, gw, gb):
        params += [w, b]
        grads += [a, c]
    return sgd_update(params, grads, lr)


def ce_step(weights, biases, x, labels, lr, loss_out):
    acts = forward_batch(weights, biases, x)
    z = acts[-1]
    e = np.exp(z - z.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(len(labels))
    picked = p[rows, labels]
    loss_out[:] = -np.log(np.maximum(picked, 1e-12))
    p[rows, labels] = picked - 1.0
    return backward_sgd(weights, biases, acts, p / len(labels), lr)
