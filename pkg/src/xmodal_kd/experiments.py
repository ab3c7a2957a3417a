"""Sweeps behind the CLI subcommands, and CSV / summary reporting."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import statistics
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from . import config as cfgmod
from .data import (DatasetSplit, TeacherCache, cache_teacher_predictions, generate, inject_label_noise,
                   load_split, quantize)
from .errors import ConfigError, ShapeError
from .losses import LossKind
from .nn_core import MlpNetwork
from .trainer import (DistillConfig, distill_single, evaluate, init_student, layer_dims_for,
                      mutual_distill, net_predictor, train_supervised)

log = logging.getLogger(__name__)

# label-noise draws get their own stream, independent of init and shuffling
_NOISE_STREAM = 7


@dataclass
class Row:
    experiment_id: str
    config_fingerprint: str
    seed: int
    regime: str
    K: int
    tau: Optional[float]
    loss_kind: str
    combine_mode: str
    noise_fraction: Optional[float]
    teacher_acc_on_student_train: float
    test_accuracy: float
    wall_time_s: float


COLUMNS = [f.name for f in fields(Row)]


@dataclass
class Context:
    """Resolved config plus the shared dataset and frozen teacher of one experiment."""

    cfg: dict[str, Any]
    split: DatasetSplit
    teacher: MlpNetwork
    cache: TeacherCache
    teacher_acc: float
    fingerprint: str

    @property
    def student_dims(self) -> list[int]:
        return layer_dims_for(self.split.student_train.b.shape[1], self.split.classes, self.cfg["hidden"])

    def test_acc(self, predictor: Callable) -> float:
        return evaluate(predictor, self.split.test.b, self.split.test.labels)


def _param_digest(net: MlpNetwork) -> str:
    h = hashlib.sha256()
    for p in net.params():
        h.update(p.tobytes())
    return h.hexdigest()[:16]


def train_teacher(cfg: dict[str, Any], split: DatasetSplit) -> MlpNetwork:
    part = split.teacher_train
    dims = layer_dims_for(part.a.shape[1], split.classes, cfg["hidden"])
    hyper = cfgmod.teacher_hyper(cfg)
    net, _ = train_supervised(init_student(dims, hyper.seed), part.a, part.labels, hyper)
    return net


def load_or_generate(cfg: dict[str, Any], data_dir=None) -> DatasetSplit:
    if data_dir is not None:
        return load_split(data_dir)
    # round-trip through the text format so results match a gen-data + --data run
    return quantize(generate(cfgmod.gen_config(cfg)))


def prepare(cfg: dict[str, Any], split: DatasetSplit, teacher: Optional[MlpNetwork] = None) -> Context:
    if teacher is None:
        teacher = train_teacher(cfg, split)
    st = split.student_train
    if teacher.layer_dims[0] != st.a.shape[1] or teacher.num_classes != split.classes:
        raise ShapeError(f"teacher dims {teacher.layer_dims} do not fit the dataset")
    cache = cache_teacher_predictions(teacher, st.a)
    acc = evaluate(lambda _: cache.probs(), st.a, st.labels)
    fp = cfgmod.fingerprint(cfg, split.fingerprint(), _param_digest(teacher))
    return Context(cfg, split, teacher, cache, acc, fp)


def _row(ctx: Context, exp: str, seed: int, regime: str, K: int, acc: float, t0: float, *,
         tau=None, loss_kind="", mode="", noise=None) -> Row:
    return Row(exp, ctx.fingerprint, seed, regime, K, tau, loss_kind, mode, noise,
               ctx.teacher_acc, acc, time.perf_counter() - t0)


def teacher_row(ctx: Context) -> Row:
    t0 = time.perf_counter()
    acc = evaluate(net_predictor(ctx.teacher), ctx.split.test.a, ctx.split.test.labels)
    return _row(ctx, "teacher", ctx.cfg["teacher_seed"], "teacher", 1, acc, t0, loss_kind="ce")


def run_noise(ctx: Context, fractions: Iterable[float], seeds: Iterable[int]) -> list[Row]:
    st = ctx.split.student_train
    rows = []
    for fraction in fractions:
        for seed in seeds:
            t0 = time.perf_counter()
            labels = inject_label_noise(st.labels, fraction, ctx.split.classes, [seed, _NOISE_STREAM])
            net, _ = train_supervised(init_student(ctx.student_dims, seed), st.b, labels,
                                      cfgmod.hyper(ctx.cfg, seed))
            rows.append(_row(ctx, "noise", seed, "supervised", 1, ctx.test_acc(net_predictor(net)), t0,
                             loss_kind="ce", noise=fraction))
            log.info("noise %.2f seed %d: %.4f", fraction, seed, rows[-1].test_accuracy)
    return rows


def _kl_kind(ctx: Context, tau: float) -> LossKind:
    return LossKind.kl(tau, reverse_kl=ctx.cfg["kl_reverse"], tau_squared=ctx.cfg["tau_squared"])


def _single(ctx: Context, seed: int, loss: LossKind) -> float:
    net, _ = distill_single(init_student(ctx.student_dims, seed), ctx.split.student_train.b,
                            ctx.cache, loss, cfgmod.hyper(ctx.cfg, seed))
    return ctx.test_acc(net_predictor(net))


def _ensemble(ctx: Context, seed: int, K: int, loss: LossKind):
    config = DistillConfig(loss, K, hyper=cfgmod.hyper(ctx.cfg, seed))
    return mutual_distill(ctx.split.student_train.b, ctx.cache, config)


def run_temperature(ctx: Context, taus: Iterable[float], seeds: Iterable[int]) -> list[Row]:
    rows = []
    for tau in taus:
        for seed in seeds:
            t0 = time.perf_counter()
            acc = _single(ctx, seed, _kl_kind(ctx, tau))
            rows.append(_row(ctx, "temperature", seed, "teacher_student", 1, acc, t0, tau=tau, loss_kind="kl"))
            log.info("tau %g seed %d: %.4f", tau, seed, acc)
    return rows


def run_students(ctx: Context, ks: Iterable[int], modes: Iterable[str], seeds: Iterable[int]) -> list[Row]:
    """Single teacher-student (K=1), independent ensembles and mutual ensembles."""
    cfg = ctx.cfg
    tau = cfg["tau"]
    teacher = _kl_kind(ctx, tau) if cfg["teacher_loss"] == "kl" else LossKind.ce()
    tname = teacher.name
    rows = []
    modes = list(modes)
    for K in ks:
        for seed in seeds:
            if K == 1:
                t0 = time.perf_counter()
                acc = _single(ctx, seed, teacher)
                for mode in modes:
                    rows.append(_row(ctx, "students", seed, "teacher_student", 1, acc, t0,
                                     tau=tau if tname == "kl" else None, loss_kind=tname, mode=mode))
                continue
            for regime, peer in (("ensemble_no_mutual", "none"), ("mutual", "kl")):
                t0 = time.perf_counter()
                loss = LossKind.mutual(peer, tau, teacher=tname, reverse_kl=cfg["kl_reverse"],
                                       tau_squared=cfg["tau_squared"])
                ens = _ensemble(ctx, seed, K, loss)
                kind = f"{tname}+independent" if peer == "none" else f"{tname}+mutual(kl)"
                for mode in modes:
                    acc = ctx.test_acc(lambda x: ens.predict(x, mode))
                    rows.append(_row(ctx, "students", seed, regime, K, acc, t0, tau=tau, loss_kind=kind, mode=mode))
                log.info("K=%d %s seed %d: %s", K, regime, seed, [r.test_accuracy for r in rows[-len(modes):]])
    return rows


LOSS_TABLE = [
    # (regime, K, label) in the order of the summary table
    ("full_supervision", 1, "Full supervision"),
    ("kl", 1, "KL"),
    ("ce", 1, "Cross-entropy"),
    ("ce_mutual", 2, "Cross-entropy + Mutual"),
    ("ce_mutual", 3, "Cross-entropy + Mutual"),
    ("ce_mutual_ce_peer", 2, "Cross-entropy + Mutual (CE peer)"),
]


def run_losses(ctx: Context, seeds: Iterable[int], taus: Iterable[float]) -> list[Row]:
    st = ctx.split.student_train
    tau = ctx.cfg["tau"]
    rows = []
    for seed in seeds:
        first = len(rows)
        t0 = time.perf_counter()
        net, _ = train_supervised(init_student(ctx.student_dims, seed), st.b, st.labels, cfgmod.hyper(ctx.cfg, seed))
        rows.append(_row(ctx, "losses", seed, "full_supervision", 1, ctx.test_acc(net_predictor(net)), t0,
                         loss_kind="ce"))
        for t in taus:
            t0 = time.perf_counter()
            rows.append(_row(ctx, "losses", seed, "kl", 1, _single(ctx, seed, _kl_kind(ctx, t)), t0,
                             tau=t, loss_kind="kl"))
        t0 = time.perf_counter()
        rows.append(_row(ctx, "losses", seed, "ce", 1, _single(ctx, seed, LossKind.ce()), t0, loss_kind="ce"))
        for regime, K, peer in (("ce_mutual", 2, "kl"), ("ce_mutual", 3, "kl"), ("ce_mutual_ce_peer", 2, "ce")):
            t0 = time.perf_counter()
            ens = _ensemble(ctx, seed, K, LossKind.mutual(peer, tau, reverse_kl=ctx.cfg["kl_reverse"],
                                                          tau_squared=ctx.cfg["tau_squared"]))
            rows.append(_row(ctx, "losses", seed, regime, K, ctx.test_acc(lambda x: ens.predict(x, "average")),
                             t0, tau=tau, loss_kind=f"ce+mutual({peer})", mode="average"))
        log.info("seed %d: %s", seed, " ".join(f"{r.regime}={r.test_accuracy:.4f}" for r in rows[first:]))
    return rows


# --- CSV and summaries ------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def rows_to_csv(rows: Iterable[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        d = asdict(r)
        d["wall_time_s"] = f"{r.wall_time_s:.3f}"
        w.writerow([_fmt(d[c]) if c != "wall_time_s" else d[c] for c in COLUMNS])
    return buf.getvalue()


def read_csv(path) -> list[Row]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise ConfigError(f"{path}: unexpected CSV header {reader.fieldnames}")
        for d in reader:
            opt = lambda s: float(s) if s else None
            rows.append(Row(d["experiment_id"], d["config_fingerprint"], int(d["seed"]), d["regime"],
                            int(d["K"]), opt(d["tau"]), d["loss_kind"], d["combine_mode"],
                            opt(d["noise_fraction"]), float(d["teacher_acc_on_student_train"]),
                            float(d["test_accuracy"]), float(d["wall_time_s"])))
    return rows


def group_key(r: Row) -> tuple:
    return (r.experiment_id, r.regime, r.K, r.tau, r.loss_kind, r.combine_mode, r.noise_fraction)


def aggregate(rows: Iterable[Row]) -> dict[tuple, list[float]]:
    """Accuracies per configuration (everything but the seed), in first-seen order."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault(group_key(r), []).append(r.test_accuracy)
    return groups


def mean_std(values: list[float]) -> tuple[float, float]:
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return statistics.fmean(values), sd


def best_kl_tau(rows: Iterable[Row]) -> Optional[float]:
    """Temperature with the highest mean single-student KL accuracy (lowest tau on ties)."""
    means = {k[3]: mean_std(v)[0] for k, v in aggregate(r for r in rows if r.regime == "kl").items()}
    if not means:
        return None
    return min(means, key=lambda t: (-means[t], t))


def summarize(rows: list[Row]) -> str:
    out = []
    exps = list(dict.fromkeys(r.experiment_id for r in rows))
    for exp in exps:
        sub = [r for r in rows if r.experiment_id == exp]
        out.append(f"== {exp} ==")
        if exp == "losses":
            out += _loss_table(sub)
            out.append("")
        out.append(f"{'regime':<20} {'K':>2} {'tau':>6} {'loss':<18} {'mode':<8} {'noise':>6} "
                   f"{'mean':>7} {'std':>7} {'n':>3}")
        for key, vals in aggregate(sub).items():
            _, regime, K, tau, loss, mode, noise = key
            m, s = mean_std(vals)
            out.append(f"{regime:<20} {K:>2} {_fmt(tau):>6} {loss:<18} {mode:<8} {_fmt(noise):>6} "
                       f"{m:>7.4f} {s:>7.4f} {len(vals):>3}")
        teacher_acc = sorted({r.teacher_acc_on_student_train for r in sub})
        out.append(f"teacher accuracy on student-train: {', '.join(f'{a:.4f}' for a in teacher_acc)}")
        out.append("")
    return "\n".join(out)


def _loss_table(rows: list[Row]) -> list[str]:
    best = best_kl_tau(rows)
    groups = {(k[1], k[2]): v for k, v in aggregate(r for r in rows if r.regime != "kl").items()}
    kl = [r.test_accuracy for r in rows if r.regime == "kl" and r.tau == best]
    lines = [f"{'Loss':<34} {'# students':>10} {'Accuracy':>9} {'std':>7}"]
    for regime, K, label in LOSS_TABLE:
        vals = kl if regime == "kl" else groups.get((regime, K))
        if not vals:
            continue
        if regime == "kl":
            label = f"KL (tau={best:g})"
        m, s = mean_std(vals)
        lines.append(f"{label:<34} {('-' if regime == 'full_supervision' else K):>10} {m:>9.4f} {s:>7.4f}")
    return lines


def write_outputs(rows: list[Row], out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, summary_path = out_dir / "results.csv", out_dir / "summary.txt"
    csv_path.write_text(rows_to_csv(rows))
    summary_path.write_text(summarize(rows))
    return csv_path, summary_path
