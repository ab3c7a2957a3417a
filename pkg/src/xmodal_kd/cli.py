"""Command-line front end.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import experiments as ex
from .data import save_split
from .errors import NumericError, XmodalError
from .nn_core import load_model, save_model

log = logging.getLogger("xmodal_kd")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, data=True, teacher=False):
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--quiet", action="store_true", help="only print errors")
    if data:
        p.add_argument("--data", type=Path, help="dataset directory from gen-data (default: generate from config)")
    if teacher:
        p.add_argument("--teacher", type=Path, help="teacher model file (default: train from config)")
    for key, spec in cfgmod.KEYS.items():
        p.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, metavar="VALUE",
                       help=f"{spec.help} (default {spec.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xmodal-kd", description="Cross-modal distillation experiments on synthetic paired data.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("gen-data", help="write the three dataset split files"), data=False)
    _common(sub.add_parser("train-teacher", help="train the modality-A teacher"))
    _common(sub.add_parser("sweep-noise", help="supervised student vs label-noise fraction"), teacher=True)
    _common(sub.add_parser("sweep-temperature", help="KL distillation vs temperature"), teacher=True)
    _common(sub.add_parser("sweep-students", help="student count, mutual learning and combination mode"),
            teacher=True)
    _common(sub.add_parser("compare-losses", help="full supervision, KL, CE and CE + mutual"), teacher=True)
    rep = sub.add_parser("report", help="rebuild summary.txt from a results.csv")
    rep.add_argument("results", type=Path, help="results.csv to summarise")
    rep.add_argument("--out", type=Path, help="directory for summary.txt (default: next to the CSV)")
    rep.add_argument("--quiet", action="store_true")
    return parser


def _resolve(args) -> dict:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return cfgmod.resolve(overrides, args.config)


def _context(args, cfg):
    split = ex.load_or_generate(cfg, getattr(args, "data", None))
    teacher_path = getattr(args, "teacher", None)
    teacher = load_model(teacher_path) if teacher_path is not None else None
    return ex.prepare(cfg, split, teacher)


def _finish(args, rows):
    csv_path, summary_path = ex.write_outputs(rows, args.out)
    if not args.quiet:
        print(summary_path.read_text(), end="")
        print(f"wrote {csv_path} and {summary_path}")


def cmd_gen_data(args, cfg):
    split = ex.load_or_generate(cfg)
    paths = save_split(split, args.out)
    if not args.quiet:
        for (name, part), path in zip(split.items(), paths):
            print(f"{name}: {len(part)} samples, subjects {sorted(set(part.subjects.tolist()))} -> {path}")


def cmd_train_teacher(args, cfg):
    ctx = _context(args, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    save_model(ctx.teacher, args.out / "teacher.model")
    _finish(args, [ex.teacher_row(ctx)])


def cmd_sweep_noise(args, cfg):
    ctx = _context(args, cfg)
    _finish(args, ex.run_noise(ctx, cfg["fractions"], cfg["seeds"]))


def cmd_sweep_temperature(args, cfg):
    ctx = _context(args, cfg)
    _finish(args, ex.run_temperature(ctx, cfg["taus"], cfg["seeds"]))


def cmd_sweep_students(args, cfg):
    ctx = _context(args, cfg)
    _finish(args, ex.run_students(ctx, cfg["ks"], cfg["modes"], cfg["seeds"]))


def cmd_compare_losses(args, cfg):
    ctx = _context(args, cfg)
    _finish(args, ex.run_losses(ctx, cfg["seeds"], cfg["taus"]))


def cmd_report(args):
    rows = ex.read_csv(args.results)
    out = args.out or args.results.parent
    out.mkdir(parents=True, exist_ok=True)
    text = ex.summarize(rows)
    (out / "summary.txt").write_text(text)
    if not args.quiet:
        print(text, end="")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "sweep-noise": cmd_sweep_noise,
    "sweep-temperature": cmd_sweep_temperature,
    "sweep-students": cmd_sweep_students,
    "compare-losses": cmd_compare_losses,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "report":
            cmd_report(args)
        else:
            cfg = _resolve(args)
            COMMANDS[args.command](args, cfg)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (XmodalError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
