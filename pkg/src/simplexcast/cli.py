"""Command-line interface tying together simulation, training, evaluation,
and the theory checks.

Exit codes: 0 success, 1 validation error (bad flags, config, or input
files), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import logging
import os
import sys

import numpy as np

from .errors import SimplexCastError
from .io import RunConfig, atomic_write_text, ingest, write_dataset, write_json

log = logging.getLogger(__name__)

OUT_ROOT_ENV = "SIMPLEXCAST_OUT"


def _out_dir(args) -> str:
    if args.out:
        return args.out
    root = os.environ.get(OUT_ROOT_ENV)
    if root:
        return root
    return "."


def _load_config(args) -> RunConfig:
    if args.config:
        return RunConfig.load(args.config)
    return RunConfig()


def _emit(args, payload, filename) -> str:
    path = os.path.join(_out_dir(args), filename)
    write_json(path, payload)
    if args.json:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        print(f"wrote {path}")
    return path


# ------------------------------------------------------------ subcommands


def _cmd_simulate_queues(args) -> int:
    from .queue_sim import generate_section, split_systems

    section = generate_section(
        args.section,
        n_systems=args.systems,
        master_seed=args.seed,
        n_arrivals=args.arrivals,
        n_replications=args.replications,
    )
    manifest = section.manifest(
        split_systems(section.systems, seed=args.seed).assignments
        if args.split
        else None
    )
    out = _out_dir(args)
    data_path = os.path.join(out, f"{args.section}.jsonl")
    write_dataset(data_path, section.systems, section_name=args.section)
    _emit(args, manifest, f"{args.section}_manifest.json")
    if not args.json:
        print(f"wrote {data_path}")
    return 0


def _predictor(method, train_seqs, args, cfg_values):
    from .baselines import (
        AnalogPredictor,
        CastPredictor,
        EtsPredictor,
        PersistencePredictor,
        VarPredictor,
        build_analog_bank,
        ets_fit,
        ilr_var_fit,
    )
    from .model import CastParams

    if method == "persistence":
        return PersistencePredictor()
    if method == "analog":
        return AnalogPredictor(build_analog_bank(train_seqs))
    if method == "var":
        return VarPredictor(ilr_var_fit(train_seqs))
    if method == "ets":
        return EtsPredictor(ets_fit(train_seqs))
    if method == "cast":
        if not args.model:
            raise SimplexCastError("--model checkpoint required for method=cast")
        return CastPredictor(CastParams.load(args.model))
    raise SimplexCastError(f"unknown method {method!r}")


def _cmd_train(args) -> int:
    from .model import ModelConfig, TrainConfig, train

    cfg_file = _load_config(args)
    train_res = ingest(args.data)
    val_res = ingest(args.val) if args.val else train_res
    mc = ModelConfig(
        dim=train_res.dim,
        ordered=train_res.ordered,
        feature_mode=cfg_file.get("feature_mode", args.feature_mode),
        variant=cfg_file.get("variant", args.variant),
    )
    tc = TrainConfig(
        iters=cfg_file.get("iters", args.iters),
        batch_size=cfg_file.get("batch_size", args.batch_size),
        lr=cfg_file.get("lr", args.lr),
        warmup=cfg_file.get("warmup", args.warmup),
        weight_decay=cfg_file.get("weight_decay", args.weight_decay),
    )
    params, train_log = train(
        train_res.sequences, val_res.sequences, mc, tc, args.seed
    )
    out = _out_dir(args)
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, "model.ckpt")
    params.save(ckpt)
    _emit(args, {"log": train_log, "checkpoint": os.path.basename(ckpt)}, "train_log.json")
    if not args.json:
        print(f"wrote {ckpt}")
    return 0


def _cmd_evaluate(args) -> int:
    from .evaluate import evaluate_offline

    data = ingest(args.data)
    train_seqs = ingest(args.train).sequences if args.train else data.sequences
    predictor = _predictor(args.method, train_seqs, args, _load_config(args))
    result = evaluate_offline(predictor, data.sequences)
    payload = {"method": args.method, "section": data.section_name, "metrics": result}
    _emit(args, payload, f"evaluate_{args.method}.json")
    return 0


def _cmd_rollout(args) -> int:
    from .evaluate import RolloutConfig, evaluate_rollout

    data = ingest(args.data)
    train_seqs = ingest(args.train).sequences if args.train else data.sequences
    predictor = _predictor(args.method, train_seqs, args, _load_config(args))
    rc = RolloutConfig(
        context_len=args.context, horizon=args.horizon, max_examples=args.max_examples
    )
    result = evaluate_rollout(
        predictor, data.sequences, rc, final_step_only=args.final_step
    )
    payload = {
        "method": args.method,
        "section": data.section_name,
        "context_len": rc.context_len,
        "horizon": rc.horizon,
        "metrics": result,
    }
    _emit(args, payload, f"rollout_{args.method}.json")
    return 0


def _cmd_aliasing_synthetic(args) -> int:
    from .theory import (
        SyntheticTrainSettings,
        default_scenario,
        run_synthetic_experiment,
    )

    seeds = [int(s) for s in args.seeds.split(",")]
    settings = SyntheticTrainSettings()
    if args.iters is not None:
        settings.iters = args.iters
        settings.anchor_iters = args.iters
    if args.sequences is not None:
        settings.n_train = args.sequences
        settings.n_val = max(args.sequences // 4, 2)
        settings.n_eval = max(args.sequences // 2, 2)
    result = run_synthetic_experiment(default_scenario(), seeds, settings)
    result.pop("logs", None)
    _emit(args, result, "aliasing_synthetic.json")
    return 0


def _cmd_theory_check(args) -> int:
    from .theory import (
        anchor_only_optimum,
        default_scenario,
        fixed_summary_optimum,
        numeric_fixed_summary_minimum,
        pinsker_separation,
        random_scenario,
        retrieval_consistency_check,
    )

    rng = np.random.default_rng(args.seed)
    checks = {}

    gaps = []
    for _ in range(args.scenarios):
        s = random_scenario(rng, int(rng.integers(2, 7)), int(rng.integers(2, 5)))
        _, analytic = fixed_summary_optimum(s)
        gaps.append(abs(numeric_fixed_summary_minimum(s, n_starts=10) - analytic))
    checks["fixed_summary_identity"] = {
        "max_gap": float(max(gaps)),
        "pass": bool(max(gaps) < 1e-6),
    }

    violations = 0
    for _ in range(args.scenarios):
        s = random_scenario(rng, int(rng.integers(3, 7)), int(rng.integers(2, 5)))
        _, excess, deltas = anchor_only_optimum(s, [s.p_star], n_starts=8)
        if excess < pinsker_separation(s, deltas) - 1e-9:
            violations += 1
    checks["pinsker_separation"] = {
        "violations": violations,
        "pass": violations == 0,
    }

    scen = default_scenario()
    _, fixed = fixed_summary_optimum(scen, verify=True)
    _, anchor_excess, deltas = anchor_only_optimum(scen, [scen.p_star], n_starts=8)
    checks["default_scenario"] = {
        "fixed_summary_excess": fixed,
        "anchor_only_excess": anchor_excess,
        "delta_positive": bool(np.all(deltas > 1e-6)),
        "pass": bool(anchor_excess >= fixed and np.all(deltas > 1e-6)),
    }

    report = retrieval_consistency_check(seed=args.seed)
    checks["retrieval_consistency"] = {
        "violations": report.violations,
        "lipschitz": report.lipschitz,
        "pass": report.violations == 0,
    }

    payload = {"checks": checks, "pass": all(c["pass"] for c in checks.values())}
    _emit(args, payload, "theory_check.json")
    return 0 if payload["pass"] else 2


def _cmd_diagnose_aliasing(args) -> int:
    from .evaluate import aliasing_diagnostic

    data = ingest(args.data)
    report = aliasing_diagnostic(
        data.sequences, n_samples=args.samples, seed=args.seed
    )
    payload = {
        "section": data.section_name,
        "neighbor_jsd": report.neighbor_jsd_quantiles,
        "successor_jsd": report.successor_jsd_quantiles,
        "history_better_rate": report.history_better_rate,
        "n_samples": report.n_samples,
        "severity": report.severity,
    }
    _emit(args, payload, "aliasing_diagnostic.json")
    return 0


def _cmd_seed_study(args) -> int:
    from .evaluate import evaluate_offline, seed_study
    from .io import RunConfig as _RC
    from .model import ModelConfig, TrainConfig, train

    train_res = ingest(args.data)
    val_res = ingest(args.val) if args.val else train_res
    test_res = ingest(args.test) if args.test else train_res
    seeds = [int(s) for s in args.seeds.split(",")]
    mc = ModelConfig(dim=train_res.dim, ordered=train_res.ordered, variant=args.variant)
    tc = TrainConfig(iters=args.iters)

    def runner(seed):
        from .baselines import CastPredictor

        params, _ = train(train_res.sequences, val_res.sequences, mc, tc, seed)
        return evaluate_offline(CastPredictor(params), test_res.sequences)

    result = seed_study(runner, seeds)
    payload = {
        "seeds": result.seeds,
        "per_seed": result.per_seed,
        "mean": result.mean,
        "sd": result.sd,
    }
    _emit(args, payload, "seed_study.json")
    return 0


def _cmd_report(args) -> int:
    from .evaluate import rank_aggregate

    table: dict = {}
    for name in sorted(os.listdir(args.results)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(args.results, name)) as fh:
            row = json.load(fh)
        if not {"method", "section", "metrics"} <= row.keys():
            continue
        table.setdefault(row["method"], {})[row["section"]] = row["metrics"][
            args.metric
        ]
    if not table:
        raise SimplexCastError(f"no result files with metrics in {args.results}")
    rm = rank_aggregate(table)

    buf = _stdio.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["method"] + rm.sections + ["average_rank", "top1"])
    for i, method in enumerate(rm.methods):
        writer.writerow(
            [method]
            + [f"{r:g}" for r in rm.ranks[i]]
            + [f"{rm.average_rank[i]:g}", str(rm.top1_counts[i])]
        )
    csv_text = buf.getvalue()
    out = _out_dir(args)
    atomic_write_text(os.path.join(out, "ranks.csv"), lambda fh: fh.write(csv_text))
    payload = {
        "metric": args.metric,
        "methods": rm.methods,
        "sections": rm.sections,
        "ranks": rm.ranks.tolist(),
        "average_rank": rm.average_rank.tolist(),
        "top1_counts": rm.top1_counts.tolist(),
    }
    _emit(args, payload, "ranks.json")
    if not args.json:
        print(f"wrote {os.path.join(out, 'ranks.csv')}")
    return 0


# --------------------------------------------------------------- parser


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--config", default=None, help="JSON run-config file")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument(
        "--json", action="store_true", help="also print the report to stdout"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simplexcast",
        description="Distribution-valued time-series forecasting toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sq = subs.add_parser("simulate-queues", help="generate a queue benchmark section")
    sq.add_argument("--section", choices=["homogeneous", "nonhomogeneous"], required=True)
    sq.add_argument("--systems", type=int, default=100)
    sq.add_argument("--arrivals", type=int, default=500)
    sq.add_argument("--replications", type=int, default=200)
    sq.add_argument("--split", action="store_true", help="include a train/val/test split")
    _add_common(sq)
    sq.set_defaults(func=_cmd_simulate_queues)

    tr = subs.add_parser("train", help="train the forecaster")
    tr.add_argument("--data", required=True)
    tr.add_argument("--val", default=None)
    tr.add_argument("--variant", default="full")
    tr.add_argument("--feature-mode", default="full", dest="feature_mode")
    tr.add_argument("--iters", type=int, default=2000)
    tr.add_argument("--batch-size", type=int, default=8)
    tr.add_argument("--lr", type=float, default=3e-4)
    tr.add_argument("--warmup", type=int, default=200)
    tr.add_argument("--weight-decay", type=float, default=0.1)
    _add_common(tr)
    tr.set_defaults(func=_cmd_train)

    ev = subs.add_parser("evaluate", help="offline teacher-forced evaluation")
    ev.add_argument("--data", required=True)
    ev.add_argument("--train", default=None, help="training data for fit-based baselines")
    ev.add_argument("--method", default="persistence",
                    choices=["persistence", "analog", "var", "ets", "cast"])
    ev.add_argument("--model", default=None, help="checkpoint for method=cast")
    _add_common(ev)
    ev.set_defaults(func=_cmd_evaluate)

    ro = subs.add_parser("rollout", help="autoregressive rollout evaluation")
    ro.add_argument("--data", required=True)
    ro.add_argument("--train", default=None)
    ro.add_argument("--method", default="persistence",
                    choices=["persistence", "analog", "var", "ets", "cast"])
    ro.add_argument("--model", default=None)
    ro.add_argument("--context", type=int, default=8)
    ro.add_argument("--horizon", type=int, default=4)
    ro.add_argument("--max-examples", type=int, default=1_000_000)
    ro.add_argument("--final-step", action="store_true", dest="final_step",
                    help="score only the last horizon step")
    _add_common(ro)
    ro.set_defaults(func=_cmd_rollout)

    al = subs.add_parser("aliasing-synthetic", help="run the synthetic aliasing experiment")
    al.add_argument("--seeds", default="0,1,2")
    al.add_argument("--iters", type=int, default=None)
    al.add_argument("--sequences", type=int, default=None)
    _add_common(al)
    al.set_defaults(func=_cmd_aliasing_synthetic)

    th = subs.add_parser("theory-check", help="numerical checks of the identifiability results")
    th.add_argument("--scenarios", type=int, default=50)
    _add_common(th)
    th.set_defaults(func=_cmd_theory_check)

    di = subs.add_parser("diagnose-aliasing", help="measure aliasing in a dataset")
    di.add_argument("--data", required=True)
    di.add_argument("--samples", type=int, default=500)
    _add_common(di)
    di.set_defaults(func=_cmd_diagnose_aliasing)

    ss = subs.add_parser("seed-study", help="multi-seed train + evaluate")
    ss.add_argument("--data", required=True)
    ss.add_argument("--val", default=None)
    ss.add_argument("--test", default=None)
    ss.add_argument("--variant", default="full")
    ss.add_argument("--iters", type=int, default=2000)
    ss.add_argument("--seeds", default="0,1")
    _add_common(ss)
    ss.set_defaults(func=_cmd_seed_study)

    rp = subs.add_parser("report", help="rank table across methods and sections")
    rp.add_argument("--results", required=True, help="directory of evaluate/rollout JSON files")
    rp.add_argument("--metric", default="kl")
    _add_common(rp)
    rp.set_defaults(func=_cmd_report)

    return parser


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags; the contract is 1 for validation errors
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (SimplexCastError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=logging.WARNING)
    sys.exit(cli_dispatch())
