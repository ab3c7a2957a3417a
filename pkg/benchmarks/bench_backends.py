"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_backends.py [--repeat N]

Times the per-batch kernels on a default-sized student (16-32-32-10, batch 32)
and whole 30-epoch training runs on the default dataset, then checks that both
backends end a supervised run at the same parameters to rounding.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from xmodal_kd import config as cfgmod
from xmodal_kd import experiments as ex
from xmodal_kd import nn_core
from xmodal_kd.losses import LossKind
from xmodal_kd.trainer import DistillConfig, distill_single, init_student, mutual_distill, train_supervised


def kernel_cases(rng):
    net = nn_core.MlpNetwork.init([16, 32, 32, 10], rng)
    x = rng.normal(size=(32, 16))
    labels = rng.integers(0, 10, size=32)
    dlogits = rng.normal(size=(32, 10)) / 32
    loss_out = np.empty(32)

    def fwd():
        nn_core.forward_batch(net, x)

    def fwd_bwd():
        cache = nn_core.forward_batch(net, x)
        nn_core.backward_batch(net, cache, dlogits)

    def fused_ce():
        nn_core.ce_train_step(net.copy(), x, labels, 1e-3, loss_out)

    return {"forward": fwd, "forward+backward": fwd_bwd, "fused CE step": fused_ce}


def training_cases(ctx):
    st, cfg = ctx.split.student_train, ctx.cfg
    hyper = cfgmod.hyper(cfg, 0)
    start = init_student(ctx.student_dims, 0)
    return {
        "supervised (CE)": lambda: train_supervised(start, st.b, st.labels, hyper),
        "distill KL tau=2": lambda: distill_single(start, st.b, ctx.cache, LossKind.kl(2.0), hyper),
        "mutual K=3": lambda: mutual_distill(st.b, ctx.cache, DistillConfig(LossKind.mutual(), 3, hyper=hyper)),
    }


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = sorted(nn_core.BACKENDS)
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is available")

    cfg = cfgmod.resolve()
    ctx = ex.prepare(cfg, ex.load_or_generate(cfg))
    sections = [("per-batch kernels (us)", kernel_cases(np.random.default_rng(0)), 2000, 1e6),
                ("30-epoch training runs (s)", training_cases(ctx), 1, 1.0)]
    original = nn_core.get_backend()
    try:
        for title, cases, number, scale in sections:
            print(f"\n{title}")
            print(f"{'case':<22}" + "".join(f"{b:>12}" for b in backends) + ("   speed-up" if len(backends) > 1 else ""))
            for name, fn in cases.items():
                times = []
                for b in backends:
                    nn_core.set_backend(b)
                    times.append(best_of(fn, args.repeat, number) * scale)
                ratio = f"{times[1] / times[0]:>10.2f}x" if len(times) > 1 else ""
                print(f"{name:<22}" + "".join(f"{t:>12.3f}" for t in times) + ratio)

        st = ctx.split.student_train
        finals = {}
        for b in backends:
            nn_core.set_backend(b)
            net, _ = train_supervised(init_student(ctx.student_dims, 0), st.b, st.labels, cfgmod.hyper(cfg, 0))
            finals[b] = net
        if len(finals) > 1:
            diff = max(np.abs(p - q).max() for p, q in zip(*(n.params() for n in finals.values())))
            print(f"\nmax parameter difference between backends after a supervised run: {diff:.2e}")
    finally:
        nn_core.set_backend(original)


if __name__ == "__main__":
    main()
