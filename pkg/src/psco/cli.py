"""Command-line entry point: ``psco {train,eval,gen,selfcheck,sweep}``.

Every failure exits non-zero with a single ``error: <reason>`` line on stderr
(usage problems exit 2, everything else 1).
"""
from __future__ import annotations

import argparse
import copy
import configparser
import itertools
import json
import logging
import os
import sys

from .config import load_config
from .data import generate_synthetic, load_dataset, read_synthetic_spec
from .errors import PscoError, UsageError
from .evaluation import AdaptConfig, evaluate
from .snapshot import load_model, load_trainer, save_trainer
from .trainer import Trainer

GRID_KEYS = ("K", "m", "tau_psco", "epsilon")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_text(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_metrics(path, log):
    _write_text(path, "".join(json.dumps(rec) + "\n" for rec in log))


def _eval_dataset(run):
    path = run.eval.dataset or run.dataset
    if not path:
        raise UsageError("config names no dataset for evaluation ([eval] dataset or [data] dataset)")
    return load_dataset(path)


def cmd_train(args):
    run = load_config(args.config)
    if not run.dataset:
        raise UsageError("config has no [data] dataset")
    ds = load_dataset(run.dataset)
    os.makedirs(args.out, exist_ok=True)
    if args.resume:
        trainer = load_trainer(args.resume, ds, expected_config=run.train)
    else:
        trainer = Trainer(run.train, ds)
    trainer.fit(args.until_epoch)
    save_trainer(os.path.join(args.out, "model.psco"), trainer)
    _write_metrics(os.path.join(args.out, "metrics.jsonl"), trainer.log)
    print(os.path.join(args.out, "model.psco"))
    return 0


def cmd_eval(args):
    snap = load_model(args.model)
    ds = load_dataset(args.dataset)
    adapt_cfg = None
    if args.adapt:
        tau = snap.config.tau_psco if snap.config else 1.0
        adapt_cfg = AdaptConfig(iters=args.adapt, lr=args.adapt_lr, tau_psco=tau)
    report = evaluate(ds, snap.state, args.way, args.shot, args.query, args.episodes, adapt_cfg, args.seed)
    text = json.dumps(report.to_record()) + "\n"
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_gen(args):
    spec, out_dir = read_synthetic_spec(args.spec)
    out_dir = args.out or out_dir
    if not out_dir:
        raise UsageError("no output directory: pass --out or set out_dir in the spec file")
    print(generate_synthetic(spec, out_dir))
    return 0


def cmd_selfcheck(args):
    from .selfcheck import run_selfcheck

    return 0 if run_selfcheck(sys.stdout) else 1


def read_grid(path):
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        if not parser.read(path):
            raise UsageError(f"cannot read grid file {path}")
    except configparser.Error as exc:
        raise UsageError(f"malformed grid file: {exc}".splitlines()[0]) from None
    if parser.sections() != ["grid"]:
        raise UsageError("grid file must contain exactly one [grid] section")
    grid = {}
    for key, raw in parser.items("grid"):
        if key not in GRID_KEYS:
            raise UsageError(f"unknown grid key {key!r}; allowed: {', '.join(GRID_KEYS)}")
        cast = int if key == "K" else float
        try:
            grid[key] = [cast(v) for v in raw.replace(",", " ").split()]
        except ValueError:
            raise UsageError(f"[grid] {key}: cannot parse {raw!r}") from None
    return {k: grid[k] for k in GRID_KEYS if k in grid}


def sweep_cells(base, grid):
    """Yield (cell, TrainConfig) over the Cartesian product of the grid."""
    keys = list(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = copy.deepcopy(base)
        cell = dict(zip(keys, values))
        for k, v in cell.items():
            if k == "epsilon":
                cfg.sinkhorn.epsilon = v
            else:
                setattr(cfg, k, v)
        yield cell, cfg.validate()


def cmd_sweep(args):
    run = load_config(args.config)
    grid = read_grid(args.grid)
    if not run.dataset:
        raise UsageError("config has no [data] dataset")
    train_ds = load_dataset(run.dataset)
    eval_ds = _eval_dataset(run)
    ev = run.eval
    adapt_cfg = AdaptConfig(iters=ev.adapt_iters, lr=ev.adapt_lr) if ev.adapt_iters else None
    lines = []
    for cell, cfg in sweep_cells(run.train, grid):
        state, _ = Trainer(cfg, train_ds).fit()
        if adapt_cfg:
            adapt_cfg.tau_psco = cfg.tau_psco
        report = evaluate(eval_ds, state, ev.way, ev.shot, ev.query, ev.episodes, adapt_cfg, ev.seed)
        line = json.dumps({"cell": cell, **report.to_record()}) + "\n"
        sys.stdout.write(line)
        sys.stdout.flush()
        lines.append(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_text(os.path.join(args.out, "sweep.jsonl"), "".join(lines))
    return 0


def build_parser():
    p = _Parser(prog="psco", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="meta-train on an unlabeled dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="snapshot to continue from")
    t.add_argument("--until-epoch", type=int, help="stop after this many epochs in total")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="episodic few-shot evaluation")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--way", type=int, default=5)
    e.add_argument("--shot", type=int, default=5)
    e.add_argument("--query", type=int, default=15)
    e.add_argument("--episodes", type=int, default=600)
    e.add_argument("--adapt", type=int, default=0, metavar="ITERS")
    e.add_argument("--adapt-lr", type=float, default=0.01)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--spec", required=True)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("selfcheck", help="run the invariant and oracle checks")
    s.set_defaults(func=cmd_selfcheck)

    w = sub.add_parser("sweep", help="train and evaluate over a hyperparameter grid")
    w.add_argument("--config", required=True)
    w.add_argument("--grid", required=True)
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand (train, eval, gen, selfcheck, sweep)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PscoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {getattr(exc, 'filename', '') or ''}".rstrip(": "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
