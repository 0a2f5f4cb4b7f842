"""Command-line entry points.

Every subcommand takes ``--config FILE`` (INI) plus repeatable
``--set section.key=value`` overrides; outputs land in a run directory
named by the resolved config hash.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness, net, synth
from .config import load_config


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config default (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=None, help="shortcut for run.seed")
    parser.add_argument("--out", default=None, help="output root directory")


def _resolve(args) -> "harness.ExperimentConfig":
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.out_dir = args.out
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    tuning, online, heldout = harness.build_dataset(cfg)
    trials = [t for day in sorted(online) for t in online[day] + heldout[day]]
    out = harness.run_dir_for(cfg, tag="data")
    path = out / "dataset.jsonl"
    synth.write_dataset(
        trials, path, tuning=tuning, profile=cfg.data.drift_profile(), seed=cfg.run.seed
    )
    print(f"wrote {len(trials)} trials to {path}")
    return 0


def cmd_train_seed(args) -> int:
    cfg = _resolve(args)
    model, report = harness.train_seed(cfg, quiet=False)
    out = harness.run_dir_for(cfg, tag="seed")
    net.save_checkpoint(model, out / "seed.ckpt")
    with open(out / "seed_report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    print(f"seed held-out CER {report['heldout_cer']:.2%} -> {out / 'seed.ckpt'}")
    return 0


def cmd_run(args) -> int:
    cfg = _resolve(args)
    if args.method is not None:
        name = args.method.replace("-", "_")
        cfg.run.method = "fa_stabilizer" if name == "fa" else name
    out = harness.run_dir_for(cfg, tag="run")
    result = harness.run_longitudinal(cfg, include_timing=getattr(args, "timings", False))
    harness.write_rows_csv(result.rows, out / "rows.csv")
    harness.write_events_jsonl(result.records, result.events, out / "events.jsonl")
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(result.summary, f, indent=2, sort_keys=True)
    print(
        f"{cfg.run.method}: pooled CER {result.summary['cer_pooled']:.2%} "
        f"pooled WER {result.summary['wer_pooled']:.2%} -> {out}"
    )
    return 0


def cmd_sweep_threshold_lr(args) -> int:
    cfg = _resolve(args)
    thresholds = [float(x) for x in args.thresholds.split(",")]
    lrs = [float(x) for x in args.lrs.split(",")]
    if len(lrs) < 3 or len(thresholds) < 5:
        print("need at least 3 learning rates and 5 thresholds", file=sys.stderr)
        return 2
    out = harness.run_dir_for(cfg, tag="sweep-threshold-lr")
    all_rows = []
    for seed in range(args.seeds):
        cfg.run.seed = seed
        bench = harness.build_bench(cfg)
        res = harness.sweep_threshold_lr(cfg, thresholds, lrs, bench=bench)
        for row in res["rows"]:
            all_rows.append({"seed": seed, **row})
    cols = ["seed", "learning_rate", "loss_threshold", "mean_steps", "cer", "diverged"]
    harness.write_rows_csv(all_rows, out / "grid.csv", columns=cols)
    _write_grid_summary(all_rows, out / "grid_summary.csv")
    print(f"grid with {len(all_rows)} rows -> {out}")
    return 0


def _write_grid_summary(all_rows, path) -> None:
    from collections import defaultdict

    groups = defaultdict(list)
    for row in all_rows:
        groups[(row["learning_rate"], row["loss_threshold"])].append(row)
    rows = []
    for (lr_value, threshold), grp in sorted(groups.items()):
        cer_mean, cer_lo, cer_hi = harness.bootstrap_ci([g["cer"] for g in grp])
        steps_mean, steps_lo, steps_hi = harness.bootstrap_ci([g["mean_steps"] for g in grp])
        rows.append(
            {
                "learning_rate": lr_value,
                "loss_threshold": threshold,
                "cer_mean": cer_mean, "cer_lo": cer_lo, "cer_hi": cer_hi,
                "steps_mean": steps_mean, "steps_lo": steps_lo, "steps_hi": steps_hi,
                "diverged_total": sum(g["diverged"] for g in grp),
            }
        )
    harness.write_rows_csv(rows, path, columns=list(rows[0].keys()))


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    out = harness.run_dir_for(cfg, tag="ablate")
    per_seed = {name: [] for name in harness.ABLATIONS}
    for seed in range(args.seeds):
        cfg.run.seed = seed
        bench = harness.build_bench(cfg)
        results = harness.run_ablations(cfg, bench=bench)
        for name, res in results.items():
            per_seed[name].append(res.summary["cer_pooled"])
    rows = []
    for name, vals in per_seed.items():
        mean, lo, hi = harness.bootstrap_ci(vals)
        rows.append({"ablation": name, "cer_mean": mean, "cer_lo": lo, "cer_hi": hi})
    harness.write_rows_csv(rows, out / "ablations.csv", columns=["ablation", "cer_mean", "cer_lo", "cer_hi"])
    for row in rows:
        print(f"{row['ablation']:>18}: CER {row['cer_mean']:.2%} [{row['cer_lo']:.2%}, {row['cer_hi']:.2%}]")
    return 0


def cmd_sensitivity(args) -> int:
    cfg = _resolve(args)
    levels = [float(x) for x in args.levels.split(",")]
    out = harness.run_dir_for(cfg, tag="sensitivity")
    all_rows = []
    for seed in range(args.seeds):
        cfg.run.seed = seed
        res = harness.run_sensitivity(cfg, levels)
        for row in res["rows"]:
            all_rows.append({"seed": seed, **row})
    harness.write_rows_csv(
        all_rows, out / "sensitivity.csv",
        columns=["seed", "pseudo_label_cer", "cer", "wer"],
    )
    print(f"sensitivity curve -> {out}")
    return 0


def cmd_sweep_sentences(args) -> int:
    cfg = _resolve(args)
    counts = [int(x) for x in args.counts.split(",")]
    out = harness.run_dir_for(cfg, tag="sweep-sentences")
    all_rows = []
    for seed in range(args.seeds):
        cfg.run.seed = seed
        res = harness.sweep_recal_sentences(cfg, counts)
        for row in res["rows"]:
            all_rows.append({"seed": seed, **row})
        all_rows.append(
            {"seed": seed, "sentences": -1, **res["ground_truth"]}
        )
    harness.write_rows_csv(
        all_rows, out / "sentences.csv", columns=["seed", "sentences", "cer", "wer"]
    )
    print(f"data-needs curve -> {out} (sentences=-1 rows are the ground-truth reference)")
    return 0


def cmd_eval(args) -> int:
    records, events = harness.read_events_jsonl(args.log)
    c, w = harness.pooled_rates(records)
    violations = harness.audit_no_leakage(records, events)
    print(f"sentences: {len(records)}")
    print(f"pooled CER: {c:.4f}")
    print(f"pooled WER: {w:.4f}")
    print(f"leakage audit: {'clean' if not violations else f'{len(violations)} violation(s)'}")
    for v in violations:
        print(f"  {v}")
    return 0 if not violations else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="corplab",
        description="Desk-scale continual-recalibration decoding experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and store a synthetic dataset")
    _common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-seed", help="train the seed decoder")
    _common(p)
    p.set_defaults(fn=cmd_train_seed)

    p = sub.add_parser("run", help="one longitudinal run of a method")
    _common(p)
    p.add_argument(
        "--method",
        choices=["corp", "frozen", "ground-truth", "ground_truth", "fa", "fa_stabilizer"],
        default=None,
    )
    p.add_argument(
        "--timings",
        action="store_true",
        help="write measured wall times into rows.csv (breaks byte-level reproducibility)",
    )
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep-threshold-lr", help="loss-threshold x learning-rate grid")
    _common(p)
    p.add_argument("--thresholds", default="20,12,8,5,3,1")
    p.add_argument("--lrs", default="0.005,0.05,0.5")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(fn=cmd_sweep_threshold_lr)

    p = sub.add_parser("ablate", help="component ablations")
    _common(p)
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sensitivity", help="pseudo-label error-rate sensitivity")
    _common(p)
    p.add_argument("--levels", default="0,0.1,0.2,0.3")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(fn=cmd_sensitivity)

    p = sub.add_parser("sweep-sentences", help="recalibration data needs")
    _common(p)
    p.add_argument("--counts", default="0,1,2,4,6,10,14")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(fn=cmd_sweep_sentences)

    p = sub.add_parser("eval", help="offline CER/WER and audit of a run log")
    p.add_argument("log", help="events.jsonl from a run directory")
    p.set_defaults(fn=cmd_eval)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
