"""Acceptance criteria 1-10, one test each.

Every test records a PASS/FAIL line with the measured numbers; the lines are
printed together in the terminal summary (see ``conftest.py``) and, with
``-s``, as each test finishes. Run just this suite with
``pytest tests/test_acceptance.py -v``.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

import oracles
from xmodal_kd import config as cfgmod
from xmodal_kd import experiments as ex
from xmodal_kd.cli import main
from xmodal_kd.experiments import aggregate, best_kl_tau, mean_std
from xmodal_kd.losses import LossKind, ce_hard_loss, kl_loss, loss_grad_wrt_logits, loss_value, mutual_loss
from xmodal_kd.nn_core import MlpNetwork, grad_check, softened_softmax
from xmodal_kd.trainer import Hyper, distill_single, init_student, train_supervised

RESULTS: list[str] = []
SUITE_START = time.perf_counter()
PP = 0.005  # half a percentage point
STAT_SEEDS = tuple(range(10))


@contextmanager
def criterion(number, title):
    """Record PASS/FAIL for one criterion; ``detail`` collects the evidence."""
    detail = []
    t0 = time.perf_counter()
    try:
        yield detail
    except BaseException:
        status = "FAIL"
        raise
    else:
        status = "PASS"
    finally:
        line = f"criterion {number:>2} {status}  {title} [{time.perf_counter() - t0:.1f}s] {'; '.join(detail)}"
        RESULTS.append(line)
        print(line)


@pytest.fixture(scope="module")
def default_ctx():
    cfg = cfgmod.resolve({"seeds": ",".join(map(str, STAT_SEEDS))})
    return ex.prepare(cfg, ex.load_or_generate(cfg))


def rand_dist(rng, c, sharp):
    return softened_softmax(rng.normal(0, sharp, size=c))


# --- 1 -----------------------------------------------------------------------


def test_c01_loss_math_matches_brute_force():
    rng = np.random.default_rng(101)
    with criterion(1, "loss math vs brute-force scripts, 1000 inputs each, abs err < 1e-10") as d:
        t0 = time.perf_counter()
        worst = {"kl": 0.0, "ce": 0.0, "mutual": 0.0}
        for _ in range(1000):
            c = int(rng.integers(2, 12))
            p, q = rand_dist(rng, c, rng.uniform(0.1, 6)), rand_dist(rng, c, rng.uniform(0.1, 6))
            if rng.random() < 0.1:
                p[rng.integers(c)] = 0.0
                p /= p.sum()
            worst["kl"] = max(worst["kl"], abs(kl_loss(p, q) - oracles.kl(list(p), list(q))))
            worst["ce"] = max(worst["ce"], abs(ce_hard_loss(p, q) - oracles.ce_hard(list(p), list(q))))
            K = int(rng.integers(2, 6))
            logits = rng.normal(0, rng.uniform(0.5, 4), size=(K, c))
            probs = softened_softmax(logits)
            tau = float(rng.choice([1.0, 2.0, 5.0, 10.0, 20.0]))
            peer = "kl" if rng.random() < 0.7 else "ce"
            k = int(rng.integers(K))
            got = mutual_loss(k, list(probs), list(logits), q, tau=tau, peer_kind=peer)
            want = oracles.mutual(k, [list(z) for z in logits], list(q), tau, peer)
            worst["mutual"] = max(worst["mutual"], abs(got - want))
        elapsed = time.perf_counter() - t0
        d += [f"max abs err {k}={v:.1e}" for k, v in worst.items()] + [f"{elapsed:.2f}s"]
        assert max(worst.values()) < 1e-10
        assert elapsed < 5


# --- 2 -----------------------------------------------------------------------

LOSS_KINDS = [
    LossKind.ce(),
    LossKind.kl(1.0), LossKind.kl(4.0), LossKind.kl(20.0),
    LossKind.kl(2.0, reverse_kl=True), LossKind.kl(5.0, tau_squared=True),
    LossKind.mutual("kl", 10.0), LossKind.mutual("ce", 10.0), LossKind.mutual("kl", 3.0, teacher="kl"),
    LossKind.mutual("none", 10.0),
]


def _fd(f, z, h=1e-5):
    g = np.empty_like(z)
    for idx in np.ndindex(z.shape):
        up, dn = z.copy(), z.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (f(up) - f(dn)) / (2 * h)
    return g


def _rel(a, n):
    scale = max(np.abs(a).max(), np.abs(n).max())
    return 0.0 if scale == 0 else float(np.abs(a - n).max() / scale)


def test_c02_gradients_match_finite_differences():
    rng = np.random.default_rng(202)
    with criterion(2, "logit and backprop gradients vs central differences, 100 draws, rel 1e-4") as d:
        t0 = time.perf_counter()
        worst_logit, worst_net = 0.0, 0.0
        for draw in range(100):
            kind = LOSS_KINDS[draw % len(LOSS_KINDS)]
            c = int(rng.integers(2, 7))
            dims = [int(rng.integers(2, 6))] + [int(rng.integers(2, 7)) for _ in range(rng.integers(0, 3))] + [c]
            net = MlpNetwork.init(dims, rng)
            x = rng.normal(size=(int(rng.integers(1, 4)), dims[0]))
            t_logits = rng.normal(0, 2, size=(len(x), c))
            peers = [rng.normal(0, 2, size=(len(x), c)) for _ in range(int(rng.integers(1, 4)))]
            if kind.name != "mutual":
                peers = []
            f = lambda z: float(np.sum(loss_value(kind, z, t_logits, peers)))
            g = lambda z: loss_grad_wrt_logits(kind, z, t_logits, peers)
            z0 = rng.normal(0, 2, size=(len(x), c))
            worst_logit = max(worst_logit, _rel(g(z0), _fd(f, z0)))
            worst_net = max(worst_net, grad_check(net, x, f, g, step=1e-5))
        elapsed = time.perf_counter() - t0
        d += [f"worst logit rel err {worst_logit:.1e}", f"worst backprop rel err {worst_net:.1e}",
              f"{len(LOSS_KINDS)} loss kinds", f"{elapsed:.1f}s"]
        assert worst_logit < 1e-4 and worst_net < 1e-4
        assert elapsed < 30


# --- 3 -----------------------------------------------------------------------


def test_c03_ce_distillation_equals_pseudo_label_training(default_ctx):
    st = default_ctx.split.student_train
    pseudo = np.argmax(default_ctx.cache.logits, axis=1)
    with criterion(3, "hard-label distillation bit-identical to pseudo-label training every epoch, 3 seeds") as d:
        compared = 0
        for seed in (0, 1, 2):
            hyper = cfgmod.hyper(default_ctx.cfg, seed)
            start = init_student(default_ctx.student_dims, seed)
            a, b = [], []
            distill_single(start, st.b, default_ctx.cache, LossKind.ce(), hyper,
                           on_epoch=lambda e, n: a.append([p.copy() for p in n[0].params()]))
            train_supervised(start, st.b, pseudo, hyper,
                             on_epoch=lambda e, n: b.append([p.copy() for p in n[0].params()]))
            assert len(a) == len(b) == hyper.epochs
            for pa, pb in zip(a, b):
                assert all(np.array_equal(u, v) for u, v in zip(pa, pb))
                compared += 1
        d.append(f"{compared} epoch snapshots identical")


# --- 4 -----------------------------------------------------------------------


def test_c04_mutual_loss_structure():
    rng = np.random.default_rng(404)
    with criterion(4, "mutual loss: K=2 composition, 1/(K-1) peer weight for K=2..5, identical peers give 0") as d:
        for _ in range(50):
            c = int(rng.integers(2, 8))
            p_t = rand_dist(rng, c, 2.0)
            for K in (2, 3, 4, 5):
                logits = rng.normal(0, 2, size=(K, c))
                probs = softened_softmax(logits)
                for k in range(K):
                    soft = [softened_softmax(z, 10.0) for z in logits]
                    peer_sum = sum(kl_loss(soft[k], soft[l]) for l in range(K) if l != k)
                    expected = ce_hard_loss(probs[k], p_t) + peer_sum / (K - 1)
                    got = mutual_loss(k, list(probs), list(logits), p_t)
                    if K == 2:
                        assert got == ce_hard_loss(probs[k], p_t) + kl_loss(soft[k], soft[1 - k])
                    assert got == pytest.approx(expected, abs=1e-12)
            same = np.tile(rng.normal(size=c), (3, 1))
            for k in range(3):
                assert mutual_loss(k, list(softened_softmax(same)), list(same), p_t) == ce_hard_loss(
                    softened_softmax(same[k]), p_t)
        d.append("50 draws x K in {2,3,4,5}")


# --- 5 -----------------------------------------------------------------------


def test_c05_softmax_temperature_properties():
    rng = np.random.default_rng(505)
    grid = [0.5, 1, 2, 5, 10, 20, 50]
    with criterion(5, "softened softmax: simplex, shift invariance, entropy monotone in tau, uniform limit") as d:
        worst_uniform = 0.0
        for _ in range(200):
            c = int(rng.integers(2, 12))
            z = rng.normal(0, rng.uniform(0.1, 20), size=c)
            entropies = []
            for tau in grid:
                p = softened_softmax(z, tau)
                assert (p >= 0).all() and abs(p.sum() - 1) < 1e-12
                np.testing.assert_allclose(softened_softmax(z + rng.normal(0, 50), tau), p, rtol=0, atol=1e-12)
                entropies.append(-sum(v * math.log(v) for v in p if v > 0))
            assert all(b >= a - 1e-12 for a, b in zip(entropies, entropies[1:]))
            # |p - 1/C| ~ |z - mean(z)| / (tau C), so the limit is taken on moderate logits
            z_mod = rng.normal(0, 3, size=c)
            worst_uniform = max(worst_uniform, np.abs(softened_softmax(z_mod, 1e6) - 1 / c).max())
        d.append(f"max |p - 1/C| at tau=1e6: {worst_uniform:.1e}")
        assert worst_uniform < 1e-5


# --- 6 -----------------------------------------------------------------------


def test_c06_noise_degrades_accuracy(default_ctx):
    fractions = (0.0, 0.1, 0.25, 0.5)
    with criterion(6, "mean accuracy non-increasing in label noise, 10 seeds") as d:
        t0 = time.perf_counter()
        rows = ex.run_noise(default_ctx, fractions, STAT_SEEDS)
        means = [mean_std([r.test_accuracy for r in rows if r.noise_fraction == f])[0] for f in fractions]
        rises = [b - a for a, b in zip(means, means[1:]) if b > a]
        d.append("means " + " ".join(f"{f:g}:{m:.4f}" for f, m in zip(fractions, means)))
        d.append(f"{time.perf_counter() - t0:.1f}s")
        assert len(rises) <= 1 and all(r <= 0.01 for r in rises)
        assert time.perf_counter() - t0 < 180


# --- 7 and 8 -----------------------------------------------------------------


@pytest.fixture(scope="module")
def loss_rows(default_ctx):
    t0 = time.perf_counter()
    rows = ex.run_losses(default_ctx, STAT_SEEDS, default_ctx.cfg["taus"])
    return rows, time.perf_counter() - t0


def test_c07_loss_ordering(loss_rows):
    rows, elapsed = loss_rows
    with criterion(7, "full >= CE+mutual(K=2) >= CE >= KL(best tau), each within 0.5pp, 10 seeds") as d:
        groups = {(k[1], k[2], k[3]): mean_std(v)[0] for k, v in aggregate(rows).items()}
        best = best_kl_tau(rows)
        full = groups[("full_supervision", 1, None)]
        mutual = groups[("ce_mutual", 2, 10.0)]
        ce = groups[("ce", 1, None)]
        kl = groups[("kl", 1, best)]
        d.append(f"full {full:.4f} ce+mutual {mutual:.4f} ce {ce:.4f} kl(tau={best:g}) {kl:.4f}")
        d.append(f"{elapsed:.1f}s")
        assert full >= mutual - PP
        assert mutual >= ce - PP
        assert ce >= kl - PP
        assert elapsed < 600


def test_c08_mutual_learning_gain(default_ctx):
    with criterion(8, "mutual K=2 (average) >= single student, average >= max, within 0.5pp, 10 seeds") as d:
        rows = ex.run_students(default_ctx, (1, 2), ("average", "max"), STAT_SEEDS)
        means = {(k[1], k[2], k[5]): mean_std(v)[0] for k, v in aggregate(rows).items()}
        single = means[("teacher_student", 1, "average")]
        avg, mx = means[("mutual", 2, "average")], means[("mutual", 2, "max")]
        d.append(f"single {single:.4f} mutual-average {avg:.4f} mutual-max {mx:.4f}")
        assert avg >= single - PP
        assert avg >= mx - PP


# --- 9 -----------------------------------------------------------------------


def _csv_without_wall_time(path):
    lines = path.read_text().splitlines()
    return [line.rsplit(",", 1)[0] for line in lines]


@pytest.mark.parametrize("argv", [
    ["sweep-noise", "--fractions", "0,0.25"],
    ["sweep-temperature", "--taus", "1,10"],
    ["sweep-students", "--ks", "1,2"],
    ["compare-losses", "--taus", "1,2"],
], ids=lambda a: a[0])
def test_c09_reruns_are_byte_identical(tmp_path, argv):
    with criterion(9, f"identical results.csv on rerun (wall time excluded): {argv[0]}") as d:
        outs = []
        for run in ("a", "b"):
            assert main(argv + ["--seeds", "0,1", "--epochs", "10", "--quiet", "--out", str(tmp_path / run)]) == 0
            outs.append(_csv_without_wall_time(tmp_path / run / "results.csv"))
        d.append(f"{len(outs[0]) - 1} rows")
        assert outs[0] == outs[1]
        assert (tmp_path / "a" / "summary.txt").read_text() == (tmp_path / "b" / "summary.txt").read_text()


# --- 10 ----------------------------------------------------------------------


def test_c10_total_budget():
    elapsed = time.perf_counter() - SUITE_START
    with criterion(10, "acceptance criteria 1-9 inside 15 minutes") as d:
        d.append(f"{elapsed:.1f}s since the suite module loaded")
        assert elapsed < 900
