"""Command-line entry point.

Exit codes: 0 success, 2 validation or usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cli_io, evaluation, synth_gen, trainer
from .errors import NumericError, ValidationError
from .meta_adaptation import AdaptationConfig
from .relational_vi import ModelParams

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("relhawkes")


def _cmd_simulate(args):
    cfg = synth_gen.SynthConfig(n_subjects=args.nodes, K=args.communities, S=args.s,
                                t_end=args.t_end, seed=args.seed)
    seqs, graph, truth = synth_gen.generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cli_io.write_sequences(seqs, out / "sequences.jsonl")
    cli_io.write_graph(graph, out / "edges.csv")
    with open(out / "truth.json", "w") as f:
        json.dump(truth.to_dict(), f)
    print(f"wrote {len(seqs)} sequences and {graph.n_edges} edges to {out}")


def _training_data(args):
    seqs = cli_io.read_sequences(args.sequences)
    ids = [s.subject_id for s in seqs]
    train = evaluation.hold_out_last(seqs)[0] if args.holdout else seqs
    return seqs, ids, train


def _cmd_fit(args):
    _, ids, train = _training_data(args)
    use_graph = not args.no_graph
    graph = None
    if use_graph:
        if not args.graph:
            raise ValidationError("--graph is required unless --no-graph is given")
        graph = cli_io.read_graph(args.graph, ids)
    adapt = AdaptationConfig(args.variant, args.inner_lr, args.inner_steps, args.nu)
    cfg = trainer.TrainConfig(K=args.k, adaptation=adapt, outer_lr=args.outer_lr,
                              alpha_lr=args.alpha_lr, learn_alpha=args.alpha_lr > 0,
                              max_sweeps=args.max_sweeps, elbo_rel_tol=args.tol,
                              batch_size=args.batch_size, rng_seed=args.seed,
                              use_graph=use_graph, tie_adapted=args.tie_adapted,
                              n_init=args.n_init)
    if args.two_step:
        if graph is None:
            raise ValidationError("the two-step procedure needs a graph")
        res = trainer.fit_two_step(train, graph, cfg)
        kind = "two-step"
    else:
        res = trainer.fit_stochastic(train, graph, cfg)
        kind = "meta-em"
    ckpt = cli_io.Checkpoint.from_fit(res, ids, args.holdout, kind)
    cli_io.save_checkpoint(ckpt, args.out)
    print(f"{kind}: {res.n_sweeps} sweeps, converged={res.converged}, "
          f"ELBO={res.elbo_trace[-1]:.6g} -> {args.out}")


def _cmd_fit_baseline(args):
    _, ids, train = _training_data(args)
    k = 1
    cfg = {"method": args.method, "nu": args.nu}
    subject_thetas = None
    thetas = np.ones((1, 3))
    extra = {}
    if args.method == "mle-sep":
        fitted = evaluation.baseline_mle_sep(train, args.nu)
        subject_thetas = fitted.thetas
        extra["flagged"] = fitted.flagged
    elif args.method == "mle-com":
        thetas = evaluation.baseline_mle_com(train, args.nu).as_array()[None, :]
    else:
        cfg["nu_mtl"] = args.nu_mtl
        rho0, rho, ok = evaluation.baseline_mtl(train, args.nu, args.nu_mtl)
        thetas, subject_thetas = rho0[None, :], rho
        extra["converged"] = ok
    model = ModelParams(thetas, np.full((k, k), 0.5), np.ones(k))
    ckpt = cli_io.Checkpoint(args.method, model, None, cfg, args.holdout, ids, [],
                             subject_thetas, extra)
    cli_io.save_checkpoint(ckpt, args.out)
    print(f"{args.method} -> {args.out}")


def _cmd_evaluate(args):
    seqs = cli_io.read_sequences(args.sequences)
    ids = [s.subject_id for s in seqs]
    cands = []
    for j, path in enumerate(p for p in args.models.split(",") if p):
        ckpt = cli_io.load_checkpoint(path)
        if ckpt.subject_ids != ids:
            raise ValidationError(f"{path}: subjects do not match {args.sequences}")
        if not ckpt.holdout:
            raise ValidationError(
                f"{path}: model was trained on full sequences (no hold-out); refusing to evaluate")
        cands.append(ckpt.to_candidate(f"{j}:{Path(path).name}"))
    plan = evaluation.make_split_plan(seqs, args.repeats, args.seed)
    report = evaluation.multi_split_evaluate(cands, seqs, plan, args.exact_compensator)
    report.write_json(args.out)
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    report.write_csv(csv_path)
    print(f"test log-likelihood {report.mean:.6f} +/- {report.stderr:.6f} "
          f"over {args.repeats} repeats ({report.n_excluded} subjects excluded)")


def _cmd_visualize(args):
    ckpt = cli_io.load_checkpoint(args.model)
    if ckpt.state is None:
        raise ValidationError(f"{args.model}: checkpoint has no identity proportions")
    graph = cli_io.read_graph(args.graph, ckpt.subject_ids)
    cli_io.export_community_colors(ckpt.state, graph, args.out, ckpt.subject_ids, args.json)
    print(f"wrote {args.out}")


def _add_seq_args(p):
    p.add_argument("--sequences", required=True)
    p.add_argument("--nu", type=float, default=1e-2)
    p.add_argument("--no-holdout", dest="holdout", action="store_false",
                   help="train on full sequences (the result cannot be evaluated)")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relhawkes", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--nodes", type=int, default=50)
    p.add_argument("--communities", type=int, default=6)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--t-end", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="variational meta-EM fit")
    _add_seq_args(p)
    p.add_argument("--graph")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--variant", choices=("maml", "fomaml", "reptile"), default="maml")
    p.add_argument("--inner-lr", type=float, default=1e-4)
    p.add_argument("--inner-steps", type=int, default=1)
    p.add_argument("--outer-lr", type=float, default=1.0)
    p.add_argument("--alpha-lr", type=float, default=0.0)
    p.add_argument("--max-sweeps", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-init", type=int, default=1)
    p.add_argument("--no-graph", action="store_true")
    p.add_argument("--tie-adapted", action="store_true")
    p.add_argument("--two-step", action="store_true",
                   help="blockmodel identities first, then sequences with identities fixed")
    p.add_argument("--batch-size", type=int, default=0)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("fit-baseline", help="MLE-Sep, MLE-Com or MTL")
    _add_seq_args(p)
    p.add_argument("--method", choices=("mle-sep", "mle-com", "mtl"), required=True)
    p.add_argument("--nu-mtl", type=float, default=0.1)
    p.set_defaults(func=_cmd_fit_baseline)

    p = sub.add_parser("evaluate", help="multi-split hold-out evaluation")
    p.add_argument("--models", required=True, help="comma-separated checkpoints")
    p.add_argument("--sequences", required=True)
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact-compensator", action="store_true")
    p.add_argument("--csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("visualize", help="community-coloured DOT export")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_visualize)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
