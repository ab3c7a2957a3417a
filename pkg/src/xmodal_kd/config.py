"""Flat ``key = value`` experiment configuration.

Files hold one assignment per line; ``#`` starts a comment. Command-line
flags override file values, and every key is validated before any compute.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .data import GenConfig
from .errors import ConfigError
from .losses import LossKind
from .trainer import Hyper


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: str
    help: str


KEYS: dict[str, Key] = {
    # dataset
    "classes": Key(int, "10", "number of classes C"),
    "subjects": Key(int, "12", "number of subjects S"),
    "train_subjects": Key(int, "8", "subjects shared by teacher-train and student-train (even)"),
    "samples_per_subject_per_class": Key(int, "30", "samples per (subject, class) cell"),
    "dim_a": Key(int, "16", "modality-A feature dimension"),
    "dim_b": Key(int, "16", "modality-B feature dimension"),
    "noise_sigma": Key(float, "0.6", "per-sample Gaussian noise"),
    "subject_sigma": Key(float, "0.3", "per-subject offset scale"),
    "data_seed": Key(int, "0", "dataset generator seed"),
    # networks and optimisation
    "hidden": Key(_ints, "32,32", "hidden layer widths"),
    "epochs": Key(int, "30", "epochs for every student regime"),
    "batch_size": Key(int, "32", "mini-batch size"),
    "learning_rate": Key(float, "0.05", "SGD learning rate"),
    "teacher_epochs": Key(int, "30", "epochs for the teacher"),
    "teacher_seed": Key(int, "1000", "teacher initialisation/shuffle seed"),
    # distillation
    "tau": Key(float, "10", "temperature of the peer KL term (and of a KL teacher term in sweep-students)"),
    "teacher_loss": Key(str, "ce", "teacher term for sweep-students: ce or kl"),
    "kl_reverse": Key(_bool, "false", "use KL(teacher || student) instead of KL(student || teacher)"),
    "tau_squared": Key(_bool, "false", "multiply softened KL terms by tau^2"),
    # sweeps
    "seeds": Key(_ints, "0,1,2,3,4,5,6,7,8,9", "training seeds"),
    "fractions": Key(_floats, "0,0.05,0.1,0.14,0.2,0.25", "label-noise fractions"),
    "taus": Key(_floats, "1,2,5,10,20,50", "KL temperatures"),
    "ks": Key(_ints, "1,2,3,4", "student counts"),
    "modes": Key(_words, "average,max", "ensemble combination modes"),
}


def read_config_file(path) -> dict[str, str]:
    """Raw ``key -> text`` pairs from a config file."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(overrides: dict[str, str] | None = None, path=None) -> dict[str, Any]:
    """Defaults, then file values, then ``overrides``; parsed and validated."""
    raw = {k: spec.default for k, spec in KEYS.items()}
    if path is not None:
        raw.update(read_config_file(path))
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        if value is not None:
            raw[key] = str(value)
    cfg = {}
    for key, text in raw.items():
        try:
            cfg[key] = KEYS[key].parse(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
    validate(cfg)
    return cfg


def validate(cfg: dict[str, Any]) -> None:
    gen_config(cfg).validate()
    hyper(cfg, 0)
    Hyper(epochs=cfg["teacher_epochs"], batch_size=cfg["batch_size"],
          learning_rate=cfg["learning_rate"], hidden=cfg["hidden"])
    if not cfg["hidden"] or min(cfg["hidden"]) < 1:
        raise ConfigError("hidden must list positive widths")
    if not cfg["seeds"]:
        raise ConfigError("seeds must not be empty")
    if len(set(cfg["seeds"])) != len(cfg["seeds"]):
        raise ConfigError("seeds must be distinct")
    if any(not 0 <= f <= 1 for f in cfg["fractions"]):
        raise ConfigError("fractions must lie in [0, 1]")
    if any(not t > 0 for t in cfg["taus"]) or not cfg["tau"] > 0:
        raise ConfigError("temperatures must be positive")
    if any(k < 1 for k in cfg["ks"]):
        raise ConfigError("ks must be >= 1")
    if any(m not in ("average", "max") for m in cfg["modes"]) or not cfg["modes"]:
        raise ConfigError("modes must be drawn from average,max")
    if cfg["teacher_loss"] not in ("ce", "kl"):
        raise ConfigError("teacher_loss must be ce or kl")
    LossKind.kl(cfg["tau"])


def gen_config(cfg: dict[str, Any]) -> GenConfig:
    return GenConfig(
        classes=cfg["classes"], subjects=cfg["subjects"], train_subjects=cfg["train_subjects"],
        samples_per_subject_per_class=cfg["samples_per_subject_per_class"],
        dim_a=cfg["dim_a"], dim_b=cfg["dim_b"], noise_sigma=cfg["noise_sigma"],
        subject_sigma=cfg["subject_sigma"], seed=cfg["data_seed"],
    )


def hyper(cfg: dict[str, Any], seed: int) -> Hyper:
    return Hyper(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                 learning_rate=cfg["learning_rate"], seed=seed, hidden=cfg["hidden"])


def teacher_hyper(cfg: dict[str, Any]) -> Hyper:
    return Hyper(epochs=cfg["teacher_epochs"], batch_size=cfg["batch_size"],
                 learning_rate=cfg["learning_rate"], seed=cfg["teacher_seed"], hidden=cfg["hidden"])


def canonical(cfg: dict[str, Any]) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ",".join(fmt(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v).lower() if isinstance(v, bool) else str(v)

    return "\n".join(f"{k} = {fmt(cfg[k])}" for k in sorted(cfg))


def fingerprint(cfg: dict[str, Any], *extra: str) -> str:
    h = hashlib.sha256(canonical(cfg).encode())
    for item in extra:
        h.update(b"\0" + item.encode())
    return h.hexdigest()[:12]
