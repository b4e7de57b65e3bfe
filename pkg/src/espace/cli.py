"""Command-line experiment runner.

Subcommands: synth (write a dataset + truth sidecar), run (train and
evaluate methods), sweep (run across training-set fractions), gradcheck
(finite-difference verification), auc-selftest (fast AUC vs brute force).
Progress goes to stderr; tables go to stdout or the --out directory.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .baselines import SamplingConfig
from .logio import load_config, write_log, write_truth
from .metrics import auc, auc_bruteforce
from .models import TrainConfig
from .runner import METHODS, ExperimentPlan, RunResult, run_plan, write_outputs
from .seeding import substream
from .synth import WorldConfig, gen_dataset, make_world
from .verify import run_gradcheck


def _parse_seeds(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(s) for s in text.split(",") if s != "")


def _parse_fractions(text: str) -> tuple[float, ...]:
    return tuple(float(s) for s in text.split(",") if s != "")


def _add_synth_args(p: argparse.ArgumentParser, require_out: bool):
    p.add_argument("--n", type=int, default=200_000, help="number of impressions")
    p.add_argument("--fields", type=int, default=20)
    p.add_argument("--vocab", type=int, default=500)
    p.add_argument("--dim", type=int, default=18, help="embedding dimension in the header")
    p.add_argument("--ctr", type=float, default=0.04, help="target click rate")
    p.add_argument("--cvr", type=float, default=0.005, help="target conversions per click")
    p.add_argument("--rho", type=float, default=0.8, help="click/conversion score coupling")
    p.add_argument("--weight-scale", type=float, default=0.55)
    p.add_argument("--popularity", choices=("zipf", "uniform"), default="zipf")
    p.add_argument("--seed", type=int, default=0, help="world and draw seed")
    if require_out:
        p.add_argument("--out", required=True, help="dataset path; sidecar gets .truth suffix")


def _add_train_args(p: argparse.ArgumentParser):
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden", type=str, default=None, help="comma list, e.g. 200,80")


def _add_run_args(p: argparse.ArgumentParser):
    p.add_argument("--data", type=str, default=None, help="dataset log path (else synthetic)")
    _add_synth_args(p, require_out=False)
    p.add_argument("--methods", type=str, default="BASE,ESMM",
                   help="comma list from " + ",".join(METHODS))
    p.add_argument("--seeds", type=str, default="0..9", help="comma list or lo..hi")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=str, default=None, help="output directory for tables")
    p.add_argument("--config", type=str, default=None, help="INI config merged under flags")
    p.add_argument("--aman-rates", type=str, default=None)
    p.add_argument("--oversample-rates", type=str, default=None)
    p.add_argument("--unbias-cap", type=float, default=None)
    _add_train_args(p)


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Fill unset flags from the INI file: [synth], [train], [run], [sampling]."""
    if not getattr(args, "config", None):
        return
    conf = load_config(args.config)
    synth = conf.get("synth", {})
    train = conf.get("train", {})
    run = conf.get("run", {})
    sampling = conf.get("sampling", {})

    def fill(name, section, key, cast):
        if getattr(args, name, None) in (None,) and key in section:
            setattr(args, name, cast(section[key]))

    fill("lr", train, "learning_rate", float)
    fill("batch_size", train, "batch_size", int)
    fill("epochs", train, "epochs", int)
    fill("hidden", train, "hidden_dims", str)
    fill("aman_rates", sampling, "aman_rates", str)
    fill("oversample_rates", sampling, "oversample_rates", str)
    fill("unbias_cap", sampling, "unbias_cap", float)
    fill("data", run, "data", str)
    fill("out", run, "out", str)
    for key, cast in (("n", int), ("fields", int), ("vocab", int), ("dim", int),
                      ("ctr", float), ("cvr", float), ("rho", float),
                      ("weight_scale", float), ("seed", int)):
        if key in synth and parser.get_default(key) == getattr(args, key, None):
            setattr(args, key, cast(synth[key]))
    if "methods" in run and parser.get_default("methods") == args.methods:
        args.methods = run["methods"]
    if "seeds" in run and parser.get_default("seeds") == args.seeds:
        args.seeds = run["seeds"]


def _world_from_args(args) -> WorldConfig:
    return WorldConfig(
        field_count=args.fields, vocab_size=args.vocab, embedding_dim=args.dim,
        target_ctr=args.ctr, target_cvr=args.cvr, rho=args.rho,
        weight_scale=args.weight_scale, popularity=args.popularity,
        world_seed=args.seed,
    )


def _train_from_args(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.lr is not None:
        cfg.learning_rate = args.lr
    if args.batch_size is not None:
        cfg.batch_size = args.batch_size
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.hidden is not None:
        cfg.hidden_dims = tuple(int(h) for h in args.hidden.split(","))
    return cfg


def _sampling_from_args(args) -> SamplingConfig:
    kwargs = {}
    if args.aman_rates is not None:
        kwargs["aman_rates"] = tuple(float(r) for r in args.aman_rates.split(","))
    if args.oversample_rates is not None:
        kwargs["oversample_rates"] = tuple(int(r) for r in args.oversample_rates.split(","))
    if args.unbias_cap is not None:
        kwargs["unbias_cap"] = args.unbias_cap
    return SamplingConfig(**kwargs)


def _plan_from_args(args, parser, fractions=(1.0,)) -> ExperimentPlan:
    _merge_config(args, parser)
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        parser.error("empty seed list")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    for m in methods:
        if m not in METHODS:
            parser.error(f"unknown method {m!r}; choose from {','.join(METHODS)}")
    world = None if args.data else _world_from_args(args)
    try:
        return ExperimentPlan(
            methods=methods, seeds=seeds, world=world, n=args.n, data_path=args.data,
            train=_train_from_args(args), sampling=_sampling_from_args(args),
            fractions=fractions, jobs=args.jobs,
        )
    except ValueError as exc:
        parser.error(str(exc))


def _emit(result: RunResult, out_dir):
    if out_dir:
        for path in write_outputs(result, out_dir):
            print(f"[espace] wrote {path}", file=sys.stderr)
    else:
        fractions = list(result.plan.fractions)
        if len(fractions) == 1:
            sys.stdout.write(result.reports[fractions[0]].to_tsv())
        else:
            sys.stdout.write("fraction\tmethod\ttask\tauc_mean\tauc_std\tn_seeds\n")
            for f in fractions:
                for r in result.reports[f].rows:
                    sys.stdout.write(f"{f}\t{r.method}\t{r.task}\t{r.mean:.6f}\t"
                                     f"{r.std:.6f}\t{r.n_seeds}\n")


def cmd_synth(args, parser) -> int:
    if args.n < 1:
        parser.error("--n must be >= 1")
    world = _world_from_args(args)
    gt = make_world(world)
    ds, pctr, pcvr = gen_dataset(gt, args.n, args.seed)
    write_log(ds, args.out)
    write_truth(str(args.out) + ".truth", pctr, pcvr)
    ctr = ds.y.mean()
    cvr = ds.z.sum() / max(ds.n_clicks, 1)
    print(f"[espace] wrote {args.out} (+.truth): n={len(ds)} clicks={ds.n_clicks} "
          f"conversions={ds.n_conversions}", file=sys.stderr)
    print(f"[espace] empirical ctr={ctr:.5f} (target {args.ctr}), "
          f"cvr-per-click={cvr:.5f} (target {args.cvr})", file=sys.stderr)
    return 0


def cmd_run(args, parser) -> int:
    plan = _plan_from_args(args, parser)
    result = run_plan(plan, verbose=True)
    _emit(result, args.out)
    return 0


def cmd_sweep(args, parser) -> int:
    fractions = _parse_fractions(args.fractions)
    if not fractions:
        parser.error("empty fraction grid")
    plan = _plan_from_args(args, parser, fractions=fractions)
    result = run_plan(plan, verbose=True)
    _emit(result, args.out)
    return 0


def cmd_gradcheck(args, parser) -> int:
    if args.trials < 1:
        parser.error("--trials must be >= 1")
    summary = run_gradcheck(trials=args.trials, seed=args.seed, corrupt=args.corrupt)
    print(f"single-tower graph: max rel err {summary.max_rel_err_base:.3e}")
    print(f"two-tower product graph: max rel err {summary.max_rel_err_esmm:.3e}")
    print(f"tolerance {summary.tolerance:.0e}: {'PASS' if summary.ok else 'FAIL'}")
    return 0 if summary.ok else 1


def cmd_auc_selftest(args, parser) -> int:
    if args.instances < 1:
        parser.error("--instances must be >= 1")
    rng = substream(args.seed, "auc-selftest")
    worst = 0.0
    for _ in range(args.instances):
        n = int(rng.integers(2, args.max_size + 1))
        scores = np.round(rng.random(n), 2)  # coarse grid forces ties
        labels = np.zeros(n, dtype=np.int8)
        labels[rng.choice(n, size=int(rng.integers(1, n)), replace=False)] = 1
        worst = max(worst, abs(auc(scores, labels) - auc_bruteforce(scores, labels)))
    print(f"max |fast - bruteforce| over {args.instances} instances: {worst:.3e}")
    ok = worst < 1e-12
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="espace",
                                     description="entire-space conversion modeling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic log + truth sidecar")
    _add_synth_args(p_synth, require_out=True)

    p_run = sub.add_parser("run", help="train and evaluate methods")
    _add_run_args(p_run)

    p_sweep = sub.add_parser("sweep", help="run across training-set fractions")
    _add_run_args(p_sweep)
    p_sweep.add_argument("--fractions", type=str, default="0.1,1.0")

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_gc.add_argument("--trials", type=int, default=50)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--corrupt", action="store_true",
                      help="inject a gradient bug; the check must then fail")

    p_auc = sub.add_parser("auc-selftest", help="cross-check AUC against the pairwise oracle")
    p_auc.add_argument("--instances", type=int, default=1000)
    p_auc.add_argument("--max-size", type=int, default=50)
    p_auc.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "run": cmd_run,
        "sweep": cmd_sweep,
        "gradcheck": cmd_gradcheck,
        "auc-selftest": cmd_auc_selftest,
    }
    sub_parser = {
        "synth": p_synth, "run": p_run, "sweep": p_sweep,
        "gradcheck": p_gc, "auc-selftest": p_auc,
    }[args.command]
    return handlers[args.command](args, sub_parser)


if __name__ == "__main__":
    sys.exit(main())
