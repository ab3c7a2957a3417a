"""Synthetic paired two-modality data with a cross-subject split.

Modality A is class prototype + subject offset + Gaussian noise. Modality B
has its own prototypes, is squashed through ``tanh`` before the noise is
added, and shares nothing with A except the class and subject labels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .nn_core import MlpNetwork, forward, softened_softmax


@dataclass(frozen=True)
class GenConfig:
    classes: int = 10
    subjects: int = 12
    train_subjects: int = 8
    samples_per_subject_per_class: int = 30
    dim_a: int = 16
    dim_b: int = 16
    noise_sigma: float = 0.6
    subject_sigma: float = 0.3
    seed: int = 0

    def validate(self) -> "GenConfig":
        if self.classes < 2:
            raise ConfigError("classes must be >= 2")
        for name in ("subjects", "samples_per_subject_per_class", "dim_a", "dim_b"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.train_subjects < 2 or self.train_subjects % 2:
            raise ConfigError("train_subjects must be a positive even number")
        if self.train_subjects >= self.subjects:
            raise ConfigError("train_subjects must leave at least one test subject")
        if self.noise_sigma < 0 or self.subject_sigma < 0:
            raise ConfigError("sigmas must be non-negative")
        return self


class PairedSample(NamedTuple):
    modality_a: np.ndarray
    modality_b: np.ndarray
    label: int
    subject: int


@dataclass
class PairedDataset:
    """Column-oriented samples: row ``i`` of each array is one paired sample."""

    a: np.ndarray
    b: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> PairedSample:
        return PairedSample(self.a[i], self.b[i], int(self.labels[i]), int(self.subjects[i]))


@dataclass
class DatasetSplit:
    teacher_train: PairedDataset
    student_train: PairedDataset
    test: PairedDataset
    classes: int
    subjects: int

    SPLITS = ("teacher_train", "student_train", "test")

    def items(self):
        return [(name, getattr(self, name)) for name in self.SPLITS]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for _, part in self.items():
            for arr in (part.a, part.b, part.labels, part.subjects):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def generate(config: GenConfig) -> DatasetSplit:
    cfg = config.validate()
    rng = np.random.default_rng(cfg.seed)
    C, S, n = cfg.classes, cfg.subjects, cfg.samples_per_subject_per_class
    mu_a = rng.uniform(-1.0, 1.0, size=(C, cfg.dim_a))
    mu_b = rng.uniform(-1.0, 1.0, size=(C, cfg.dim_b))
    off_a = rng.normal(0.0, cfg.subject_sigma, size=(S, cfg.dim_a))
    off_b = rng.normal(0.0, cfg.subject_sigma, size=(S, cfg.dim_b))
    eps_a = rng.normal(0.0, cfg.noise_sigma, size=(S, C, n, cfg.dim_a))
    eps_b = rng.normal(0.0, cfg.noise_sigma, size=(S, C, n, cfg.dim_b))
    order = rng.permutation(S)

    a = mu_a[None, :, None, :] + off_a[:, None, None, :] + eps_a
    b = np.tanh(mu_b[None, :, None, :] + off_b[:, None, None, :]) + eps_b
    labels = np.broadcast_to(np.arange(C)[None, :, None], (S, C, n))
    subj = np.broadcast_to(np.arange(S)[:, None, None], (S, C, n))

    half = cfg.train_subjects // 2
    groups = [np.sort(order[:half]), np.sort(order[half:2 * half]), np.sort(order[2 * half:])]
    parts = [
        PairedDataset(
            a[g].reshape(-1, cfg.dim_a),
            b[g].reshape(-1, cfg.dim_b),
            labels[g].reshape(-1).astype(np.int64),
            subj[g].reshape(-1).astype(np.int64),
        )
        for g in groups
    ]
    return DatasetSplit(*parts, classes=C, subjects=S)


def inject_label_noise(labels, fraction: float, classes: int, seed) -> np.ndarray:
    """Replace ``round(fraction * N)`` labels, chosen without replacement, by wrong ones."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"noise fraction must lie in [0, 1], got {fraction}")
    if classes < 2:
        raise ConfigError("need at least 2 classes to draw a wrong label")
    labels = np.asarray(labels, dtype=np.int64)
    out = labels.copy()
    n_flip = int(round(fraction * len(labels)))
    if n_flip == 0:
        return out
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(labels), size=n_flip, replace=False)
    # shift by 1..C-1 so the new label never equals the old one
    shift = rng.integers(1, classes, size=n_flip)
    out[idx] = (labels[idx] + shift) % classes
    return out


@dataclass
class TeacherCache:
    """Frozen teacher logits for the student-train samples; probabilities are views."""

    logits: np.ndarray

    def probs(self, tau: float = 1.0) -> np.ndarray:
        return softened_softmax(self.logits, tau)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.probs(1.0), axis=-1)


def cache_teacher_predictions(teacher: MlpNetwork, features: np.ndarray) -> TeacherCache:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != teacher.layer_dims[0]:
        raise ShapeError(f"teacher expects {teacher.layer_dims[0]} features, got {features.shape}")
    logits = forward(teacher, features)
    logits.setflags(write=False)
    return TeacherCache(logits)


# --- text serialisation ---------------------------------------------------


def format_split(part: PairedDataset, classes: int, subjects: int) -> str:
    lines = [f"{classes} {subjects} {part.a.shape[1]} {part.b.shape[1]}"]
    for i in range(len(part)):
        vals = " ".join(f"{v:.9g}" for v in np.concatenate([part.a[i], part.b[i]]))
        lines.append(f"{part.subjects[i]} {part.labels[i]} {vals}")
    return "\n".join(lines) + "\n"


def parse_split(text: str) -> tuple[PairedDataset, int, int]:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 4:
        raise ConfigError("dataset file needs a 'C S D_a D_b' header")
    C, S, da, db = (int(v) for v in rows[0])
    body = rows[1:]
    if any(len(r) != 2 + da + db for r in body):
        raise ConfigError("dataset row has the wrong number of fields")
    subjects = np.array([int(r[0]) for r in body], dtype=np.int64)
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    feats = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64).reshape(-1, da + db)
    if labels.size and (labels.min() < 0 or labels.max() >= C or subjects.min() < 0 or subjects.max() >= S):
        raise ConfigError("label or subject out of range")
    part = PairedDataset(np.ascontiguousarray(feats[:, :da]), np.ascontiguousarray(feats[:, da:]),
                         labels, subjects)
    return part, C, S


def save_split(split: DatasetSplit, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, part in split.items():
        path = out_dir / f"{name}.txt"
        path.write_text(format_split(part, split.classes, split.subjects))
        paths.append(path)
    return paths


def load_split(data_dir) -> DatasetSplit:
    data_dir = Path(data_dir)
    parts, meta = [], set()
    for name in DatasetSplit.SPLITS:
        part, C, S = parse_split((data_dir / f"{name}.txt").read_text())
        parts.append(part)
        meta.add((C, S))
    if len(meta) != 1:
        raise ConfigError("split files disagree on class or subject count")
    C, S = meta.pop()
    return DatasetSplit(*parts, classes=C, subjects=S)


def quantize(split: DatasetSplit) -> DatasetSplit:
    """Round-trip through the text format so in-memory data equals what a file would hold."""
    parts = [parse_split(format_split(p, split.classes, split.subjects))[0] for _, p in split.items()]
    return DatasetSplit(*parts, classes=split.classes, subjects=split.subjects)


def gen_config_keys() -> list[str]:
    return [f.name for f in fields(GenConfig)]
