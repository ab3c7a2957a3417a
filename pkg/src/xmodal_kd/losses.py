"""Distillation losses and their gradients w.r.t. student logits.

Probability-space functions (:func:`kl_loss`, :func:`ce_hard_loss`,
:func:`mutual_loss`) reduce over the last axis, so they take single
distributions or ``(batch, C)`` stacks. The logit-space pair
:func:`loss_value` / :func:`loss_grad_wrt_logits` drives training; teacher and
peer inputs are constants there, so no gradient reaches them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .nn_core import log_softened_softmax, softened_softmax

PROB_FLOOR = 1e-12
LOG_FLOOR = np.log(PROB_FLOOR)
TERM_KINDS = ("kl", "ce")
PEER_KINDS = ("kl", "ce", "none")


@dataclass(frozen=True)
class LossKind:
    """Which loss a student is trained with.

    ``name`` is ``"kl"`` (softened KL against the teacher), ``"ce"`` (cross
    entropy on the teacher's argmax) or ``"mutual"`` (a teacher term plus the
    peer average). For ``mutual``, ``teacher`` picks the teacher term and
    ``peer`` the peer term; ``tau`` softens every KL term. ``peer="none"``
    drops the peer term, which gives independently trained ensembles.
    """

    name: str = "ce"
    tau: float = 1.0
    peer: str = "kl"
    teacher: str = "ce"
    reverse_kl: bool = False
    tau_squared: bool = False

    def __post_init__(self):
        if self.name not in ("kl", "ce", "mutual"):
            raise ConfigError(f"unknown loss kind {self.name!r}")
        if not self.tau > 0:
            raise DomainError(f"temperature must be positive, got {self.tau}")
        if self.peer not in PEER_KINDS:
            raise ConfigError(f"unknown peer loss {self.peer!r}")
        if self.teacher not in TERM_KINDS:
            raise ConfigError(f"unknown teacher loss {self.teacher!r}")

    @classmethod
    def kl(cls, tau: float, **kw) -> "LossKind":
        return cls("kl", tau=tau, **kw)

    @classmethod
    def ce(cls) -> "LossKind":
        return cls("ce")

    @classmethod
    def mutual(cls, peer: str = "kl", tau: float = 10.0, teacher: str = "ce", **kw) -> "LossKind":
        return cls("mutual", tau=tau, peer=peer, teacher=teacher, **kw)

    @property
    def teacher_term(self) -> str:
        return self.teacher if self.name == "mutual" else self.name


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    return p, q


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def teacher_label(p_t) -> np.ndarray:
    """Argmax class; ``np.argmax`` already resolves ties to the lowest index."""
    return np.argmax(np.asarray(p_t), axis=-1)


def kl_loss(p_s, p_t, reverse: bool = False):
    """``sum_c p_s(c) log(p_s(c) / p_t(c))`` with the student first.

    Zero entries of the first argument contribute nothing; the second is
    clamped below at 1e-12. The clamp can push the sum a few ulps below zero,
    so the result is floored at 0. ``reverse=True`` swaps the roles.
    """
    p, q = _check_pair(p_s, p_t)
    if reverse:
        p, q = q, p
    q = np.maximum(q, PROB_FLOOR)
    safe_p = np.where(p > 0, p, 1.0)
    terms = np.where(p > 0, p * np.log(safe_p / q), 0.0)
    return _scalar(np.maximum(terms.sum(axis=-1), 0.0))


def ce_hard_loss(p_s, p_t):
    """``-log p_s(argmax p_t)``, with ``p_s`` clamped below at 1e-12."""
    p, q = _check_pair(p_s, p_t)
    c = teacher_label(q)
    picked = np.take_along_axis(p, np.expand_dims(c, -1), axis=-1)[..., 0]
    return _scalar(-np.log(np.maximum(picked, PROB_FLOOR)))


def mutual_loss(
    k: int,
    p_all: Sequence,
    logits_all: Sequence,
    p_t,
    tau: float = 10.0,
    peer_kind: str = "kl",
):
    """Loss of student ``k`` in a ``K``-student ensemble.

    Hard cross entropy against the teacher plus the mean, over the other
    ``K - 1`` students, of ``KL(P_k^tau, P_l^tau)`` (or of hard cross entropy
    against peer ``l`` when ``peer_kind="ce"``). Softened peer distributions
    are recomputed from ``logits_all``.
    """
    K = len(p_all)
    if K < 2:
        raise ConfigError(f"mutual learning needs at least 2 students, got {K}")
    if len(logits_all) != K:
        raise ShapeError("p_all and logits_all must have one entry per student")
    if not 0 <= k < K:
        raise ShapeError(f"student index {k} out of range for K={K}")
    if peer_kind not in TERM_KINDS:
        raise ConfigError(f"unknown peer loss {peer_kind!r}")
    total = ce_hard_loss(p_all[k], p_t)
    peer = 0.0
    if peer_kind == "kl":
        pk = softened_softmax(logits_all[k], tau)
        for l in range(K):
            if l != k:
                peer = peer + kl_loss(pk, softened_softmax(logits_all[l], tau))
    else:
        for l in range(K):
            if l != k:
                peer = peer + ce_hard_loss(p_all[k], p_all[l])
    return _scalar(total + peer / (K - 1))


# --- logit space -----------------------------------------------------------


def _kl_logits(z, teacher_logits, tau, reverse, tau_squared):
    """Per-row KL between the softened student and a softened fixed target, plus gradient."""
    log_p = log_softened_softmax(z, tau)
    p = np.exp(log_p)
    # both sides go through the same log-softmax, so identical logits give exactly 0
    log_q = np.maximum(log_softened_softmax(teacher_logits, tau), LOG_FLOOR)
    q = np.exp(log_q)
    if reverse:
        loss = (q * (log_q - log_p)).sum(axis=-1)
        grad = (p - q) / tau
    else:
        g = log_p - log_q
        loss = (p * g).sum(axis=-1)
        grad = p * (g - loss[..., None]) / tau
    if tau_squared:
        loss = loss * tau * tau
        grad = grad * (tau * tau)
    return loss, grad


def ce_logits(z, labels):
    """Per-row ``-log softmax(z)[label]`` and its gradient ``softmax(z) - onehot``.

    The gradient ignores the 1e-12 probability clamp applied to the loss.
    """
    p = softened_softmax(z, 1.0)
    labels = np.asarray(labels)
    rows = np.arange(p.shape[0]) if p.ndim == 2 else ()
    picked = p[rows, labels] if p.ndim == 2 else p[labels]
    loss = -np.log(np.maximum(picked, PROB_FLOOR))
    grad = p.copy()
    if p.ndim == 2:
        grad[rows, labels] -= 1.0
    else:
        grad[labels] -= 1.0
    return loss, grad


def _teacher_term(kind: LossKind, z, teacher_logits):
    if kind.teacher_term == "ce":
        return ce_logits(z, teacher_label(softened_softmax(teacher_logits, 1.0)))
    return _kl_logits(z, teacher_logits, kind.tau, kind.reverse_kl, kind.tau_squared)


def loss_terms(kind: LossKind, z, teacher_logits, peer_logits: Sequence = ()):
    """Return ``(teacher_loss, peer_loss, grad)`` per row for student logits ``z``.

    ``peer_logits`` holds the other students' logits (student ``k`` excluded).
    """
    z = np.asarray(z, dtype=np.float64)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if teacher_logits.shape != z.shape:
        raise ShapeError(f"teacher logits {teacher_logits.shape} vs student {z.shape}")
    t_loss, grad = _teacher_term(kind, z, teacher_logits)
    peer_loss = np.zeros_like(t_loss)
    if kind.name != "mutual" or kind.peer == "none":
        return t_loss, peer_loss, grad
    if not peer_logits:
        raise ConfigError("mutual loss needs at least one peer")
    p_grad = np.zeros_like(grad)
    for zl in peer_logits:
        zl = np.asarray(zl, dtype=np.float64)
        if zl.shape != z.shape:
            raise ShapeError(f"peer logits {zl.shape} vs student {z.shape}")
        if kind.peer == "kl":
            l, g = _kl_logits(z, zl, kind.tau, kind.reverse_kl, kind.tau_squared)
        else:
            l, g = ce_logits(z, teacher_label(softened_softmax(zl, 1.0)))
        peer_loss = peer_loss + l
        p_grad = p_grad + g
    n = len(peer_logits)
    return t_loss, peer_loss / n, grad + p_grad / n


def loss_value(kind: LossKind, z, teacher_logits, peer_logits: Sequence = ()):
    t, p, _ = loss_terms(kind, z, teacher_logits, peer_logits)
    return _scalar(t + p)


def loss_grad_wrt_logits(kind: LossKind, z, teacher_logits, peer_logits: Sequence = ()):
    return loss_terms(kind, z, teacher_logits, peer_logits)[2]
