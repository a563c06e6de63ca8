"""Command-line entry point: ``rocket {train,gradcheck,ablate,datagen,eval}``.

Exit status: 0 success, 1 runtime failure, 2 usage or config error.  Errors
are printed as a single ``rocket: error: <Kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from rocket import gradcheck
from rocket.checkpoint import load_checkpoint
from rocket.config import ConfigError, TrainConfig, TrainMode, apply_overrides, load_config
from rocket.data import SynthSpec, generate, read_csv, write_csv
from rocket.errors import RocketError, SpecError
from rocket.harness import load_data, run_ablation_grid, train
from rocket.metrics import evaluate_scores
from rocket.model import booster_only_forward, light_only_forward

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message: str) -> None:
    print(f"rocket: error: {kind}: {message}", file=sys.stderr)


def _config(path: str, overrides: Sequence[str]) -> TrainConfig:
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = load_config(path)
    return apply_overrides(cfg, list(overrides)).validate()


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def cmd_train(args) -> int:
    cfg = _config(args.config, args.set)
    result = train(cfg)
    print(f"mode={cfg.mode.value} err_light_test={_fmt(result.err_light)} "
          f"err_booster_test={_fmt(result.err_booster)}")
    if cfg.paths.log:
        print(f"log written to {cfg.paths.log}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    checks = gradcheck.run(args.scope, args.seed)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.ok]
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_FAIL
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args.config, args.set)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    try:
        modes = [TrainMode(m).value for m in modes]
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    if any(TrainMode(m).needs_teacher for m in modes) and not cfg.paths.booster_checkpoint:
        print("note: no booster checkpoint given, pretraining a booster for each seed first")
    grid = run_ablation_grid(cfg, modes, k=args.seeds, workers=args.workers, csv_path=args.out)
    print(grid.to_csv(), end="")
    if args.logs:
        logs = Path(args.logs)
        for (mode, seed), record in grid.records.items():
            record.write(logs / f"{mode}_seed{seed}.jsonl")
    return EXIT_OK


def cmd_datagen(args) -> int:
    spec = SynthSpec(
        task=args.task, n_classes=args.classes, dim=args.dim, n_train=args.samples,
        n_val=0, n_test=0, noise=args.noise, turns=args.turns, label_noise=args.label_noise,
        pos_rate=args.pos_rate, n_groups=args.groups, user_dim=args.user_dim,
    ).validate()
    ds = generate(spec, args.seed).train
    write_csv(ds, args.out)
    counts = Counter(int(v) for v in ds.labels)
    hist = " ".join(f"{k}:{counts[k]}" for k in sorted(counts))
    line = f"wrote {len(ds)} samples ({ds.dim} features) to {args.out}; classes {hist}"
    if spec.task == "ctr":
        line += f"; positive rate {ds.labels.mean():.4f}; groups {len(np.unique(ds.groups))}"
    print(line)
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    if args.csv:
        ds = read_csv(args.csv, net.arch.n_classes, "test")
    else:
        splits = load_data(_config(args.config, args.set))
        ds = getattr(splits, args.split)
        if ds is None:
            raise SpecError(f"config has no {args.split} split")
    forward = light_only_forward if args.path == "light" else booster_only_forward
    logits = forward(net, ds.features)[0].value
    report = evaluate_scores(logits, ds.labels, ds.groups)
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                   for k, v in {"path": args.path, **report.as_dict()}.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rocket", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one mode from a config file")
    t.add_argument("config")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gradcheck", help="finite-difference and closed-form gradient checks")
    g.add_argument("--scope", choices=("all",) + gradcheck.SCOPES, default="all")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="median test errors of several modes over seeds")
    a.add_argument("config")
    a.add_argument("--modes", required=True, help="comma-separated train modes")
    a.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--out", help="CSV output path")
    a.add_argument("--logs", help="directory for per-run JSONL logs")
    a.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("datagen", help="write a synthetic dataset as CSV")
    d.add_argument("--task", choices=("blobs", "spirals", "ctr"), default="spirals")
    d.add_argument("--samples", type=int, default=1000)
    d.add_argument("--classes", type=int, default=2)
    d.add_argument("--dim", type=int, default=2)
    d.add_argument("--noise", type=float, default=0.2)
    d.add_argument("--turns", type=float, default=1.5)
    d.add_argument("--label-noise", type=float, default=0.0)
    d.add_argument("--pos-rate", type=float, default=0.1)
    d.add_argument("--groups", type=int, default=100)
    d.add_argument("--user-dim", type=int, default=4)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_datagen)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("checkpoint")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv")
    src.add_argument("--config")
    e.add_argument("--split", choices=("train", "validation", "test"), default="test")
    e.add_argument("--path", choices=("light", "booster"), default="light")
    e.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _fail("UsageError", str(exc))
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SpecError as exc:
        # covers config parse errors (with line/column) and invalid specs
        _fail(type(exc).__name__, str(exc))
        return EXIT_USAGE
    except (RocketError, OSError, ArithmeticError, ValueError, RuntimeError) as exc:
        _fail(type(exc).__name__, str(exc))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
