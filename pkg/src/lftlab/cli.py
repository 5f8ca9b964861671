"""Command-line surface for batch experiments.

Exit codes: 0 success, 1 validation/data error, 2 internal invariant
violation.  Every command validates its inputs before touching the
filesystem; outputs are written to temporary names and renamed.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .config import load_config
from .errors import LftlabError
from . import experiment


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True):
    parser.add_argument("--config", required=config_required, metavar="PATH",
                        help="experiment config file (key = value lines)")
    parser.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="override a config key (repeatable)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the experiment seed")
    parser.add_argument("--out", default=".", metavar="DIR",
                        help="directory that relative paths resolve against")
    parser.add_argument("--precision", choices=("f32", "f64"), default=None,
                        help="override the numeric precision")


def _config_from(args) -> "experiment.ExperimentConfig":
    cfg = load_config(args.config, args.set)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "precision", None):
        overrides["precision"] = args.precision
    return cfg.with_overrides(**overrides) if overrides else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lftlab",
        description="Desk-scale lightweight fine-tuning laboratory for neural ranking")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("gen-corpus", "generate a synthetic retrieval corpus"),
        ("pretrain", "surrogate masked-token pre-training of the encoder"),
        ("train", "train a ranking model and keep the best checkpoint"),
        ("rerank", "rerank test-fold candidates into a run file"),
        ("merge-lora", "fold low-rank adapters into the encoder weights"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)

    p = sub.add_parser("count-params", help="exact and rounded trainable-parameter count")
    _add_common(p)
    p.add_argument("--convention", choices=("optimizer", "retained"), default="retained")

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    _add_common(p)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("eval", help="score a run file against judgments")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", type=int, action="append", default=[],
                   help="precision cutoff (repeatable; default 20)")
    p.add_argument("--ndcg-k", type=int, action="append", default=[],
                   help="nDCG cutoff (repeatable; default 5 and 20)")

    p = sub.add_parser("stats", help="one-tailed homoscedastic t-test between score files")
    p.add_argument("--a", required=True, help="scores of the candidate system")
    p.add_argument("--b", required=True, help="scores of the baseline system")
    return parser


def _dispatch(args) -> int:
    if args.command == "gen-corpus":
        out = experiment.run_gen_corpus(_config_from(args), args.out)
        print(f"corpus written to {out}")
    elif args.command == "pretrain":
        path = experiment.run_pretrain(_config_from(args), args.out)
        print(f"encoder checkpoint written to {path}")
    elif args.command == "train":
        result = experiment.run_train(_config_from(args), args.out)
        print(f"best epoch {result.best_epoch} val {result.best_metric:.6f} "
              f"({result.epochs_run} epochs)")
    elif args.command == "rerank":
        path = experiment.run_rerank(_config_from(args), args.out)
        print(f"run written to {path}")
    elif args.command == "eval":
        p_ks = args.k or [20]
        ndcg_ks = args.ndcg_k or [5, 20]
        for line in experiment.run_eval(args.run, args.qrels, p_ks, ndcg_ks):
            print(line)
    elif args.command == "count-params":
        print(experiment.run_count_params(_config_from(args), args.convention))
    elif args.command == "gradcheck":
        cfg = _config_from(args).with_overrides(precision="f64")
        max_rel_err, passed = experiment.run_gradcheck(cfg, tol=args.tol)
        print(f"max relative error {max_rel_err:.3e} (tolerance {args.tol:g})")
        return 0 if passed else 1
    elif args.command == "merge-lora":
        path = experiment.run_merge_lora(_config_from(args), args.out)
        print(f"merged checkpoint written to {path}")
    elif args.command == "stats":
        for line in experiment.run_stats(args.a, args.b):
            print(line)
    else:  # pragma: no cover - argparse enforces the choices
        raise AssertionError(f"unhandled command {args.command!r}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except LftlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal invariant violation
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
