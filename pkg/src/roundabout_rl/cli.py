"""Command-line interface.

Subcommands
-----------
train      train a policy (single-agent, Gaussian-noise, or adversarial)
baseline   run IDM-only episodes and record them
evaluate   run recorded-weight evaluation episodes
metrics    summarize records against a baseline (CSV + stdout table)
histogram  relative-frequency histogram of a per-vehicle metric (CSV + PNG)

All subcommands exit 0 on success and 2 with a diagnostic on stderr for
configuration, format, or input errors.  The output directory can be
overridden with the ROUNDABOUT_RL_OUT environment variable.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import config as config_mod
from . import harness, plots, trainer
from .harness import HistogramSpec
from .noise import NOISE_KINDS, NOISE_MODES, NoiseProfile
from .policy import WeightFormatError
from .traffic import ConfigError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML experiment config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="output directory override")


def _load(args) -> config_mod.ExperimentConfig:
    cfg = config_mod.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    if getattr(args, "noise_kind", None):
        cfg.noise_kind = args.noise_kind
    if getattr(args, "noise_mode", None):
        cfg.noise = NoiseProfile(
            mode=args.noise_mode,
            action_std=cfg.noise.action_std,
            merge_edge_std=cfg.noise.merge_edge_std,
            absolute_pos_std=cfg.noise.absolute_pos_std,
            default_std=cfg.noise.default_std,
        )
    if getattr(args, "iterations", None) is not None:
        cfg.ppo.iterations = args.iterations
    if getattr(args, "batch_size", None) is not None:
        cfg.ppo.batch_size = args.batch_size
    if args.out is not None:
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def _outdir(cfg: config_mod.ExperimentConfig) -> str:
    path = cfg.resolved_output_dir()
    os.makedirs(path, exist_ok=True)
    return path


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    config_mod.dump_config(cfg, os.path.join(out, "resolved_config.yaml"))

    def progress(entry):
        line = (
            f"iter {entry.iteration:4d}  reward {entry.mean_episode_reward:9.3f}  "
            f"kl {entry.approx_kl:8.5f}  episodes {entry.episodes:3d}  crashes {entry.crashes}"
        )
        if entry.aborted:
            line += "  [update aborted: non-finite loss]"
        print(line)

    result = trainer.run_training(
        cfg.env, cfg.ppo, cfg.noise, cfg.noise_kind, cfg.seed, out_dir=out,
        progress=progress,
    )
    plots.reward_curve(result.entries, os.path.join(out, "reward_curve.png"))
    print(f"weights: {result.weights_path}")
    print(f"log:     {result.log_path}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    records = harness.run_baseline(cfg.env, cfg.trials, cfg.seed)
    path = os.path.join(out, "baseline_records.jsonl")
    harness.save_records(path, records)
    summary = harness.compute_metrics(records)
    print(
        f"trials {summary.trials}  mean travel time {summary.mean_travel_time:.2f} s  "
        f"mean speed {summary.mean_speed:.3f} m/s  crashes {summary.crashes}"
    )
    print(f"records: {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    records = harness.run_policy(
        cfg.env, args.weights, cfg.trials, cfg.seed,
        profile=cfg.noise, noise_kind=cfg.noise_kind,
        adversary_weights_path=args.adversary_weights,
    )
    path = os.path.join(out, "eval_records.jsonl")
    harness.save_records(path, records)
    completed = any(v["travel_time"] is not None for r in records for v in r.vehicles)
    if completed:
        summary = harness.compute_metrics(records)
        print(
            f"trials {summary.trials}  mean travel time {summary.mean_travel_time:.2f} s  "
            f"mean speed {summary.mean_speed:.3f} m/s  crashes {summary.crashes}"
        )
    else:
        crashes = sum(len(r.crashes) for r in records)
        print(f"trials {len(records)}  no vehicle completed its route  crashes {crashes}")
    print(f"records: {path}")
    return 0


def cmd_metrics(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    records = harness.load_records(args.records)
    baseline = harness.load_records(args.baseline_records)
    summary = harness.compute_metrics(records, baseline)
    base_summary = harness.compute_metrics(baseline, baseline)

    path = os.path.join(out, "metrics.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["label", "mean_travel_time_s", "mean_speed_ms", "trials", "percent_time_saved", "crashes"]
        )
        for label, s in (("baseline", base_summary), ("policy", summary)):
            writer.writerow(
                [label, f"{s.mean_travel_time:.6f}", f"{s.mean_speed:.6f}", s.trials,
                 f"{s.percent_time_saved:.6f}", s.crashes]
            )
    for label, s in (("baseline", base_summary), ("policy", summary)):
        print(
            f"{label:9s} time {s.mean_travel_time:7.2f} s  speed {s.mean_speed:6.3f} m/s  "
            f"trials {s.trials:4d}  saved {s.percent_time_saved:+6.2f}%  crashes {s.crashes}"
        )
    print(f"table: {path}")
    return 0


def cmd_histogram(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    records = harness.load_records(args.records)
    values = [
        v[args.metric]
        for rec in records
        for v in rec.vehicles
        if v[args.metric] is not None
    ]
    all_values = list(values)
    baseline = None
    if args.baseline_records:
        baseline = harness.load_records(args.baseline_records)
        all_values += [
            v[args.metric]
            for rec in baseline
            for v in rec.vehicles
            if v[args.metric] is not None
        ]
    if not all_values:
        raise ValueError("no values available for the histogram")
    lo, hi = min(all_values), max(all_values)
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, args.bins + 1)
    spec = HistogramSpec(metric=args.metric, bin_edges=edges)

    filled = {"policy": harness.histogram(records, spec)}
    if baseline is not None:
        filled = {"baseline": harness.histogram(baseline, spec), **filled}

    csv_path = os.path.join(out, f"histogram_{args.metric}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi"] + list(filled))
        for i in range(len(edges) - 1):
            writer.writerow(
                [f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}"]
                + [f"{filled[label].frequencies[i]:.6f}" for label in filled]
            )
    png_path = os.path.join(out, f"histogram_{args.metric}.png")
    plots.histogram_overlay(filled, png_path)
    print(f"table:  {csv_path}")
    print(f"figure: {png_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roundabout-rl",
        description="Roundabout mixed-autonomy traffic experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    _add_common(p)
    p.add_argument("--noise-kind", choices=NOISE_KINDS)
    p.add_argument("--noise-mode", choices=NOISE_MODES)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("baseline", help="run IDM-only episodes")
    _add_common(p)
    p.add_argument("--trials", type=int)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("evaluate", help="evaluate saved policy weights")
    _add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--adversary-weights")
    p.add_argument("--trials", type=int)
    p.add_argument("--noise-kind", choices=NOISE_KINDS)
    p.add_argument("--noise-mode", choices=NOISE_MODES)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("metrics", help="summarize records vs a baseline")
    _add_common(p)
    p.add_argument("--records", required=True)
    p.add_argument("--baseline-records", required=True)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("histogram", help="relative-frequency histogram")
    _add_common(p)
    p.add_argument("--records", required=True)
    p.add_argument("--baseline-records")
    p.add_argument("--metric", choices=harness.HISTOGRAM_METRICS, default="travel_time")
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(fn=cmd_histogram)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, WeightFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
