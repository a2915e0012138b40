"""Command-line entry point: ``cprank {synth,extract,train,baseline,eval,sweep}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .baselines import KnnConfig, knn_complete, svd_complete
from .comparisons import ComparisonError, extract_comparisons, load_comparisons, store_comparisons
from .data import DataError, load_dataset, select_subset, synthetic_ratings, write_id_map, write_ratings
from .evaluation import count_mismatches, singular_diagnostics
from .experiment import (
    ExperimentConfig,
    ExperimentError,
    config_from_mapping,
    parse_config_file,
    run_experiment,
)
from .model import Hyperparams, load_params, recover_matrix, save_params
from .optim import DivergenceError, StoppingRule, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cprank")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_dataset_args(p):
    p.add_argument("--ratings", required=True, help="ratings file")
    p.add_argument("--format", choices=["movielens", "tsv"], default="movielens",
                   help="movielens u.data layout or the tsv written by 'synth'")
    p.add_argument("--users", type=int, default=0, help="keep the N most active users")
    p.add_argument("--items", type=int, default=0, help="keep the M most rated items")


def _add_hyper_args(p):
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--c-m", type=float, default=1.0, help="steepness for user-user comparisons")
    p.add_argument("--c-u", type=float, default=1.0, help="steepness for item-item comparisons")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1, help="prior precision")
    p.add_argument("--mu", type=float, default=0.01, help="learning rate")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--min-gain", type=float, default=None,
                   help="stop when an epoch improves the objective by less (default 1e-6*|initial|)")
    p.add_argument("--lr-decay", action="store_true", help="use mu/sqrt(epoch)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cprank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic low-rank rating matrix")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="also write the noiseless dense matrix here")

    p = sub.add_parser("extract", help="convert ratings into a comparison file")
    _add_dataset_args(p)
    p.add_argument("--expand", action="store_true", help="apply transitive closure")
    p.add_argument("--out", required=True)
    p.add_argument("--id-map", help="write the dense-to-original id map here")

    p = sub.add_parser("train", help="learn CPR factors from a comparison file")
    p.add_argument("--comparisons", required=True)
    _add_hyper_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--text", action="store_true", help="write params as text instead of binary")

    p = sub.add_parser("baseline", help="complete a rating matrix with kNN or SVD")
    _add_dataset_args(p)
    p.add_argument("--method", choices=["knn", "svd"], required=True)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", choices=["item", "user"], default="item")
    p.add_argument("--similarity", choices=["cosine", "pearson"], default="cosine")
    p.add_argument("--no-passthrough", action="store_true",
                   help="re-predict observed cells instead of copying them")
    p.add_argument("--out", required=True, help="dense matrix output (text)")

    p = sub.add_parser("eval", help="score a recovered matrix against comparisons")
    p.add_argument("--comparisons", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--params", help="params file written by 'train'")
    src.add_argument("--matrix", help="dense matrix text file")
    p.add_argument("--rank", type=int, help="singular value index (default: params rank)")

    p = sub.add_parser("sweep", help="run the rank sweep experiment")
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--dataset", help="ratings path or 'synthetic'")
    p.add_argument("--format", choices=["movielens", "tsv"])
    p.add_argument("--users", dest="num_users", type=int)
    p.add_argument("--items", dest="num_items", type=int)
    p.add_argument("--methods", help="comma list from cpr,knn,svd")
    p.add_argument("--ranks", help="e.g. 2..26 or 2,4,8")
    p.add_argument("--c-m", dest="c_m", type=float)
    p.add_argument("--c-u", dest="c_u", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--min-gain", dest="min_objective_gain", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-seeds", dest="num_seeds", type=int, help="average CPR over this many seeds")
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--synth-rank", dest="synth_rank", type=int)
    p.add_argument("--synth-users", dest="synth_users", type=int)
    p.add_argument("--synth-items", dest="synth_items", type=int)
    p.add_argument("--synth-noise", dest="synth_noise", type=float)
    p.add_argument("--synth-density", dest="synth_density", type=float)
    p.add_argument("--jobs", dest="n_jobs", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--plot", action="store_const", const=True, default=None,
                   help="render figures next to the CSV")
    return parser


def _ratings_from_args(args):
    ratings = load_dataset(args.ratings, args.format)
    if args.users or args.items:
        ratings = select_subset(ratings, args.users or ratings.num_users,
                                args.items or ratings.num_items)
    return ratings


def cmd_synth(args):
    ratings, truth = synthetic_ratings(args.users, args.items, args.rank, noise=args.noise,
                                       density=args.density, seed=args.seed)
    write_ratings(ratings, args.out)
    if args.truth:
        np.savetxt(args.truth, truth, fmt="%.17g")
    print(f"wrote {len(ratings)} ratings ({args.users}x{args.items}, rank {args.rank}) to {args.out}")


def cmd_extract(args):
    ratings = _ratings_from_args(args)
    cset = extract_comparisons(ratings, expand=args.expand)
    store_comparisons(cset, args.out)
    if args.id_map:
        write_id_map(ratings, args.id_map)
    print(f"{len(ratings)} ratings -> {len(cset.item_comparisons)} item comparisons, "
          f"{len(cset.user_comparisons)} user comparisons")


def cmd_train(args):
    cset = load_comparisons(args.comparisons)
    hyper = Hyperparams(rank=args.rank, c_m=args.c_m, c_u=args.c_u, lam=args.lam, mu=args.mu,
                        batch_size=args.batch_size, seed=args.seed, lr_decay=args.lr_decay)
    report = train(cset, hyper, StoppingRule(args.max_epochs, args.min_gain))
    os.makedirs(args.out_dir, exist_ok=True)
    name = "params.txt" if args.text else "params.bin"
    save_params(report.final_params, os.path.join(args.out_dir, name), binary=not args.text)
    with open(os.path.join(args.out_dir, "report.json"), "w") as fh:
        json.dump({**report.to_dict(), "hyperparams": vars(hyper)}, fh, indent=2)
        fh.write("\n")
    mism = count_mismatches(recover_matrix(report.final_params), cset)
    print(f"epochs={report.epochs_run} objective={report.objective_trace[-1]:.6g} "
          f"mismatches={mism}/{len(cset)}")


def cmd_baseline(args):
    ratings = _ratings_from_args(args)
    if args.method == "svd":
        matrix = svd_complete(ratings, args.rank)
    else:
        cfg = KnnConfig(args.k, args.mode, args.similarity, passthrough=not args.no_passthrough)
        matrix = knn_complete(ratings, cfg)
    np.savetxt(args.out, matrix, fmt="%.17g")
    mism = count_mismatches(matrix, extract_comparisons(ratings))
    print(f"{args.method}: wrote {matrix.shape[0]}x{matrix.shape[1]} matrix, mismatches={mism}")


def cmd_eval(args):
    cset = load_comparisons(args.comparisons)
    if args.params:
        params = load_params(args.params)
        matrix = recover_matrix(params)
        rank = args.rank or params.rank
    else:
        matrix = np.loadtxt(args.matrix, ndmin=2)
        rank = args.rank or 1
    sigma, ratio = singular_diagnostics(matrix, rank)
    mism = count_mismatches(matrix, cset)
    print(json.dumps({"rank": rank, "sigma_r_max": sigma, "sigma_ratio": ratio,
                      "mismatches": mism, "comparisons": len(cset)}))


_SWEEP_KEYS = ("dataset", "format", "num_users", "num_items", "methods", "ranks", "c_m", "c_u",
               "lam", "mu", "batch_size", "max_epochs", "min_objective_gain", "seed", "num_seeds",
               "knn_k", "synth_rank", "synth_users", "synth_items", "synth_noise", "synth_density",
               "n_jobs", "out_dir", "plot")


def cmd_sweep(args):
    values = parse_config_file(args.config) if args.config else {}
    cfg = config_from_mapping(values)
    flags = {k: getattr(args, k) for k in _SWEEP_KEYS if getattr(args, k) is not None}
    cfg = config_from_mapping(flags, cfg)
    results = run_experiment(cfg)
    for name, s in results.items():
        done = sum(v is not None for v in s.mismatches)
        print(f"{name}: {done}/{len(s.ranks)} ranks evaluated")
    print(f"artifacts in {cfg.out_dir}")


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "train": cmd_train,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ExperimentError):
        return _exit_code(exc.cause)
    if isinstance(exc, (DivergenceError, ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, ComparisonError, OSError, ValueError, IndexError)):
        return EXIT_DATA
    return EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # mapped to exit codes below
        print(f"cprank {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
