"""Training regimes: supervised, single-student distillation, mutual distillation.

Every regime runs the same mini-batch loop. The shuffle order depends only on
``seed``, and student ``k`` is initialised from ``(seed, k)``. So a regime with
one student and the first student of an ensemble start from the same weights
and see the same batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import TeacherCache
from .errors import ConfigError, ShapeError
from .losses import LossKind, loss_terms
from .nn_core import (MlpNetwork, backward_sgd, ce_train_step, forward, forward_batch,
                      softened_softmax)

COMBINE_MODES = ("average", "max")
_INIT_STREAM, _SHUFFLE_STREAM = 0, 1


@dataclass(frozen=True)
class Hyper:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    hidden: tuple[int, ...] = (32, 32)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True)
class DistillConfig:
    loss: LossKind = field(default_factory=LossKind.ce)
    num_students: int = 1
    combine_mode: str = "average"
    hyper: Hyper = field(default_factory=Hyper)

    def __post_init__(self):
        if self.num_students < 1:
            raise ConfigError("num_students must be >= 1")
        if self.loss.name == "mutual" and self.num_students < 2:
            raise ConfigError("mutual learning needs num_students >= 2")
        if self.combine_mode not in COMBINE_MODES:
            raise ConfigError(f"combine_mode must be one of {COMBINE_MODES}")


@dataclass
class EpochRecord:
    epoch: int
    student: int
    loss: float
    teacher_term: float
    peer_term: float


@dataclass
class TrainedEnsemble:
    students: list[MlpNetwork]
    config: DistillConfig
    history: list[EpochRecord] = field(default_factory=list)

    def predict(self, x, mode: Optional[str] = None) -> np.ndarray:
        return ensemble_predict(self.students, x, mode or self.config.combine_mode)


def init_student(layer_dims: Sequence[int], seed: int, index: int = 0) -> MlpNetwork:
    return MlpNetwork.init(layer_dims, np.random.default_rng([seed, _INIT_STREAM, index]))


def layer_dims_for(in_dim: int, classes: int, hidden: Sequence[int]) -> list[int]:
    return [in_dim, *hidden, classes]


EpochHook = Callable[[int, list[MlpNetwork]], None]
# grad_fn(k, batch_idx, logits_of_all_students) -> (teacher_term, peer_term, dloss/dlogits)
GradFn = Callable[[int, np.ndarray, list[np.ndarray]], tuple]


def _run(nets: list[MlpNetwork], x: np.ndarray, hyper: Hyper, on_epoch: Optional[EpochHook],
         grad_fn: Optional[GradFn] = None, labels: Optional[np.ndarray] = None) -> list[EpochRecord]:
    """Shared mini-batch SGD loop.

    With ``labels`` the single net takes fused cross-entropy steps; otherwise
    ``grad_fn`` supplies each net's logit gradient from the batch logits of
    all nets, and every net is updated after all gradients are known.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = len(x)
    rng = np.random.default_rng([hyper.seed, _SHUFFLE_STREAM])
    lr = hyper.learning_rate
    loss_buf = np.empty(hyper.batch_size)
    history = []
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        t_sum = np.zeros(len(nets))
        p_sum = np.zeros(len(nets))
        for start in range(0, n, hyper.batch_size):
            idx = perm[start:start + hyper.batch_size]
            xb = x[idx]
            if labels is not None:
                out = loss_buf[:len(idx)]
                ce_train_step(nets[0], xb, labels[idx], lr, out)
                t_sum[0] += out.sum()
                continue
            caches = [forward_batch(net, xb) for net in nets]
            logits = [c.logits for c in caches]
            steps = []
            for k in range(len(nets)):
                t_loss, p_loss, g = grad_fn(k, idx, logits)
                t_sum[k] += t_loss.sum()
                p_sum[k] += p_loss.sum()
                steps.append(g / len(idx))
            for net, cache, g in zip(nets, caches, steps):
                backward_sgd(net, cache, g, lr)
        for k in range(len(nets)):
            history.append(EpochRecord(epoch, k, (t_sum[k] + p_sum[k]) / n, t_sum[k] / n, p_sum[k] / n))
        if on_epoch is not None:
            on_epoch(epoch, nets)
    return history


def _check_rows(x, n, what):
    if len(x) != n:
        raise ShapeError(f"{what}: {n} rows expected, got {len(x)}")


def train_supervised(net: MlpNetwork, x, labels, hyper: Hyper,
                     on_epoch: Optional[EpochHook] = None) -> tuple[MlpNetwork, list[EpochRecord]]:
    """Softmax cross-entropy against ``labels``; trains and returns a copy of ``net``."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_rows(x, len(labels), "labels")
    net = net.copy()
    return net, _run([net], x, hyper, on_epoch, labels=labels)


def distill_single(student: MlpNetwork, x, teacher: TeacherCache, loss: LossKind, hyper: Hyper,
                   on_epoch: Optional[EpochHook] = None) -> tuple[MlpNetwork, list[EpochRecord]]:
    """Fit ``student`` on modality-B features ``x`` to the cached teacher outputs."""
    if loss.name == "mutual":
        raise ConfigError("use mutual_distill for mutual losses")
    _check_rows(x, len(teacher.logits), "teacher cache")
    student = student.copy()
    if loss.name == "ce":
        # hard-label distillation is cross entropy on the teacher's argmax
        return student, _run([student], x, hyper, on_epoch, labels=teacher.labels)
    t_logits = teacher.logits

    def grad_fn(k, idx, logits):
        return loss_terms(loss, logits[0], t_logits[idx])

    return student, _run([student], x, hyper, on_epoch, grad_fn=grad_fn)


def mutual_distill(x, teacher: TeacherCache, config: DistillConfig,
                   students: Optional[Sequence[MlpNetwork]] = None,
                   on_epoch: Optional[EpochHook] = None) -> TrainedEnsemble:
    """Train ``K`` students jointly; each sees the teacher and its peers' current predictions.

    All students are updated simultaneously from one forward pass per batch,
    with peer logits held constant. ``config.loss.peer == "none"`` trains an
    ensemble of independent students under the same schedule.
    """
    K = config.num_students
    if K < 2:
        raise ConfigError(f"mutual distillation needs K >= 2, got {K}")
    _check_rows(x, len(teacher.logits), "teacher cache")
    loss = config.loss if config.loss.name == "mutual" else LossKind.mutual(
        peer="none", tau=config.loss.tau, teacher=config.loss.name,
        reverse_kl=config.loss.reverse_kl, tau_squared=config.loss.tau_squared)
    if students is None:
        dims = layer_dims_for(np.shape(x)[1], teacher.logits.shape[1], config.hyper.hidden)
        students = [init_student(dims, config.hyper.seed, k) for k in range(K)]
    elif len(students) != K:
        raise ConfigError(f"expected {K} students, got {len(students)}")
    nets = [s.copy() for s in students]
    t_logits = teacher.logits

    def grad_fn(k, idx, logits):
        peers = [] if loss.peer == "none" else [z for l, z in enumerate(logits) if l != k]
        return loss_terms(loss, logits[k], t_logits[idx], peers)

    history = _run(nets, x, config.hyper, on_epoch, grad_fn=grad_fn)
    return TrainedEnsemble(nets, config, history)


def ensemble_predict(students: Sequence[MlpNetwork], x, mode: str = "average") -> np.ndarray:
    """Combine student class probabilities by mean or renormalised per-class max."""
    if not students:
        raise ConfigError("empty ensemble")
    if mode not in COMBINE_MODES:
        raise ConfigError(f"combine mode must be one of {COMBINE_MODES}")
    probs = np.stack([softened_softmax(forward(s, x), 1.0) for s in students])
    if len(students) == 1:
        return probs[0]
    if mode == "average":
        return probs.mean(axis=0)
    top = probs.max(axis=0)
    return top / top.sum(axis=-1, keepdims=True)


def net_predictor(net: MlpNetwork) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: softened_softmax(forward(net, x), 1.0)


def evaluate(predictor: Callable[[np.ndarray], np.ndarray], x, labels) -> float:
    """Fraction of rows whose argmax prediction (lowest index on ties) equals the label."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ConfigError("cannot evaluate on an empty set")
    scores = np.asarray(predictor(x))
    _check_rows(scores, len(labels), "predictions")
    return float(np.mean(np.argmax(scores, axis=-1) == labels))
