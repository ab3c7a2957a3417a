"""Small dense classifier: forward pass, softened softmax, backprop and SGD.

The batch kernels come from the compiled extension when it is importable and
from :mod:`xmodal_kd._reference` otherwise. ``XMODAL_KD_BACKEND`` may be set to
``cython`` or ``python`` to force one of them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _reference
from .errors import DomainError, NumericError, ShapeError

try:
    from . import _kernels
except ImportError:  # pragma: no cover - depends on build
    _kernels = None

BACKENDS = {"python": _reference}
if _kernels is not None:
    BACKENDS["cython"] = _kernels

_impl = _reference


def set_backend(name: str) -> str:
    """Select the kernel backend (``auto``, ``cython`` or ``python``); returns the active name."""
    global _impl
    if name == "auto":
        name = "cython" if "cython" in BACKENDS else "python"
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {sorted(BACKENDS)})")
    _impl = BACKENDS[name]
    return name


def get_backend() -> str:
    return "cython" if _impl is _kernels and _kernels is not None else "python"


set_backend(os.environ.get("XMODAL_KD_BACKEND", "auto"))


@dataclass
class MlpNetwork:
    """Feed-forward net with ReLU hidden layers and a linear output layer.

    ``weights[i]`` has shape ``(layer_dims[i + 1], layer_dims[i])``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias vector per weight matrix and at least one layer")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i} expects {w.shape[1]} inputs, previous layer gives "
                                 f"{self.weights[i - 1].shape[0]}")

    @classmethod
    def init(cls, layer_dims: Sequence[int], rng: np.random.Generator) -> "MlpNetwork":
        """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weights and biases."""
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ShapeError(f"invalid layer dims {dims}")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        """Parameters in canonical order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def equals(self, other: "MlpNetwork") -> bool:
        """Bit-exact parameter equality."""
        a, b = self.params(), other.params()
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class ForwardCache:
    """Per-layer activations of one batch, kept for the backward pass."""

    acts: list[np.ndarray] = field(repr=False)

    @property
    def logits(self) -> np.ndarray:
        return self.acts[-1]


def _as_batch(net: MlpNetwork, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ShapeError(f"input shape {x.shape} does not match input dim {net.layer_dims[0]}")
    return x


def forward_batch(net: MlpNetwork, x: np.ndarray) -> ForwardCache:
    return ForwardCache(_impl.forward_batch(net.weights, net.biases, _as_batch(net, x)))


def forward(net: MlpNetwork, x) -> np.ndarray:
    """Logits for a single input vector, or for each row of a 2-D batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return forward_batch(net, x[None, :]).logits[0]
    return forward_batch(net, x).logits


def backward_batch(net: MlpNetwork, cache: ForwardCache, dlogits: np.ndarray) -> GradientSet:
    """Gradients of ``sum_r dlogits[r] . logits[r]`` w.r.t. all parameters."""
    dlogits = np.ascontiguousarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache.logits.shape:
        raise ShapeError(f"upstream gradient {dlogits.shape} vs logits {cache.logits.shape}")
    gw, gb = _impl.backward_batch(net.weights, cache.acts, dlogits)
    return GradientSet(gw, gb)


def backward(net: MlpNetwork, x, loss_grad_wrt_logits) -> GradientSet:
    g = np.asarray(loss_grad_wrt_logits, dtype=np.float64)
    if g.ndim == 1:
        if g.shape[0] != net.num_classes:
            raise ShapeError(f"gradient length {g.shape[0]} != class count {net.num_classes}")
        x = np.asarray(x, dtype=np.float64)[None, :]
        g = g[None, :]
    return backward_batch(net, forward_batch(net, x), g)


def sgd_step(net: MlpNetwork, grads: GradientSet, lr: float) -> MlpNetwork:
    """In-place ``p <- p - lr * g`` over all parameters. Returns ``net``."""
    if not lr > 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    params, gparams = net.params(), grads.params()
    if len(params) != len(gparams) or any(p.shape != g.shape for p, g in zip(params, gparams)):
        raise ShapeError("gradient set is not shape-congruent with the network")
    gparams = [np.ascontiguousarray(g, dtype=np.float64) for g in gparams]
    if not _impl.sgd_update(params, gparams, float(lr)):
        raise NumericError("non-finite gradient encountered; aborting update")
    return net


def softened_softmax(z, tau: float = 1.0) -> np.ndarray:
    """Softmax of ``z / tau`` along the last axis, stabilised by max subtraction."""
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise DomainError("logits must be finite")
    s = z / tau
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def log_softened_softmax(z, tau: float = 1.0) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    s = z / tau
    s = s - s.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def grad_check(
    net: MlpNetwork,
    x,
    loss_fn: Callable[[np.ndarray], float],
    loss_grad: Callable[[np.ndarray], np.ndarray],
    step: float = 1e-5,
) -> float:
    """Worst relative error between backprop and central differences.

    ``loss_fn`` maps a logit vector to a scalar and ``loss_grad`` to its
    gradient. The relative error of each parameter tensor is
    ``max|a - n| / max(max|a|, max|n|)``; the network is left untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    z = forward(net, x)
    analytic = backward(net, x, loss_grad(z)).params()
    probe = net.copy()
    worst = 0.0
    for p, a in zip(probe.params(), analytic):
        numeric = np.empty_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(forward(probe, x))
            flat[i] = orig - step
            down = loss_fn(forward(probe, x))
            flat[i] = orig
            nflat[i] = (up - down) / (2 * step)
        scale = max(np.abs(a).max(), np.abs(numeric).max())
        err = np.abs(a - numeric).max()
        if err > 0:
            worst = max(worst, err / scale if scale > 0 else np.inf)
    return float(worst)


def save_model(net: MlpNetwork, path) -> None:
    """Text format: ``layers d0 ... dn`` then per layer its weight rows and bias row."""
    lines = ["layers " + " ".join(str(d) for d in net.layer_dims)]
    for w, b in zip(net.weights, net.biases):
        lines += [" ".join(f"{v:.17g}" for v in row) for row in w]
        lines.append(" ".join(f"{v:.17g}" for v in b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> MlpNetwork:
    lines = Path(path).read_text().split("\n")
    head = lines[0].split()
    if not head or head[0] != "layers":
        raise ValueError(f"{path}: missing 'layers' header")
    dims = [int(d) for d in head[1:]]
    pos = 1
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        rows = [[float(v) for v in lines[pos + r].split()] for r in range(fan_out)]
        pos += fan_out
        bias = [float(v) for v in lines[pos].split()]
        pos += 1
        w = np.array(rows, dtype=np.float64).reshape(fan_out, fan_in)
        weights.append(w)
        biases.append(np.array(bias, dtype=np.float64).reshape(fan_out))
    return MlpNetwork(weights, biases)


def backward_sgd(net: MlpNetwork, cache: ForwardCache, dlogits: np.ndarray, lr: float) -> None:
    """Fused :func:`backward_batch` + :func:`sgd_step` for the training loop."""
    if not _impl.backward_sgd(net.weights, net.biases, cache.acts, dlogits, lr):
        raise NumericError("non-finite gradient encountered; aborting update")


def ce_train_step(net: MlpNetwork, x: np.ndarray, labels: np.ndarray, lr: float,
                  loss_out: np.ndarray) -> None:
    """One mean softmax cross-entropy SGD step on a batch; per-row losses go to ``loss_out``."""
    if not _impl.ce_step(net.weights, net.biases, x, labels, lr, loss_out):
        raise NumericError("non-finite gradient encountered; aborting update")
