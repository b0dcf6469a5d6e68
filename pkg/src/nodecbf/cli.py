"""Command-line interface.

Subcommands:
  run            simulate one scenario, write trajectory CSV + metrics JSON
  train-offline  fit the residual model to a state-control dataset CSV
  benchmark      run a scenario suite across trials, write a metrics table
  metrics        recompute metrics from a trajectory CSV

Exit codes: 0 success, 1 invalid configuration, 2 integrator blow-up.
"""

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import backend
from .harness import (
    ConfigError,
    Scenario,
    benchmark,
    benchmark_json,
    default_suite,
    load_scenario,
    load_suite,
    run_scenario,
    scenario_hash,
)
from .residual import ResidualNet, save_model
from .simlog import WEDGE_DEFAULT, TrajectoryLog, compute_metrics, metrics_json
from .training import Sample, TrainerConfig, knode_loss, offline_train


def _build_parser():
    p = argparse.ArgumentParser(
        prog="nodecbf",
        description="Safety-filtered double-integrator simulation with a "
        "learned neural-ODE residual model.",
    )
    p.add_argument(
        "--mode",
        choices=("interleaved", "concurrent"),
        default="interleaved",
        help="online trainer scheduling (interleaved is deterministic)",
    )
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.add_argument("--out-dir", default=".", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one scenario")
    run_p.add_argument("scenario", help="scenario YAML file")

    tr_p = sub.add_parser("train-offline", help="train a model on a dataset CSV")
    tr_p.add_argument("dataset", help="CSV with t, r_*, v_*, u_* columns")
    tr_p.add_argument("out_model", help="output model file")
    tr_p.add_argument("--hidden", type=int, default=16)
    tr_p.add_argument("--epochs", type=int, default=400, help="total epoch budget")
    tr_p.add_argument("--lr", type=float, default=1e-3)
    tr_p.add_argument("--lam", type=float, default=1e-4)
    tr_p.add_argument("--horizon", type=int, default=1)

    b_p = sub.add_parser("benchmark", help="run a suite of scenarios")
    b_p.add_argument("suite", help="suite YAML file, or 'default'")
    b_p.add_argument("--trials", type=int, default=10)

    m_p = sub.add_parser("metrics", help="metrics from a trajectory CSV")
    m_p.add_argument("trajectory", help="trajectory CSV file")
    m_p.add_argument("--safety-radius", type=float, default=3.0)
    m_p.add_argument("--center", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    m_p.add_argument("--settle-exclude", type=float, default=20.0)
    m_p.add_argument(
        "--wedge", action="store_true", help="restrict to the default angular sectors"
    )
    return p


def load_dataset_csv(path):
    """Samples from a dataset or trajectory CSV (extra columns ignored)."""
    cols = ("t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "u_x", "u_y", "u_z")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(cols) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        samples = []
        for row in reader:
            vals = [float(row[c]) for c in cols]
            samples.append(
                Sample(vals[0], np.array(vals[1:7]), np.array(vals[7:10]))
            )
    return samples


def _cmd_run(args):
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    log = run_scenario(sc, mode=args.mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj_path = out / f"{sc.label}-seed{sc.seed}.csv"
    log.to_csv(traj_path)
    report = compute_metrics(
        log,
        settle_exclude=sc.settle_exclude,
        wedge_sectors=WEDGE_DEFAULT if sc.wedge_filter else None,
    )
    payload = metrics_json(report, sc.seed, scenario_hash(sc))
    (out / f"{sc.label}-seed{sc.seed}.metrics.json").write_text(payload)
    sys.stdout.write(payload)
    if log.blown_up:
        print(f"error: integrator blow-up: {log.note}", file=sys.stderr)
        return 2
    return 0


def _cmd_train_offline(args):
    samples = load_dataset_csv(args.dataset)
    cfg = TrainerConfig(
        learning_rate=args.lr,
        lam=args.lam,
        horizon=args.horizon,
        hidden=args.hidden,
        seed=args.seed if args.seed is not None else 0,
    )
    snap = offline_train(samples, cfg, total_epochs=args.epochs)
    save_model(args.out_model, snap.net)
    final = knode_loss(snap.net, samples, cfg)
    zero = knode_loss(ResidualNet.zeros(cfg.hidden), samples, cfg)
    print(
        f"trained {snap.net.params.size} parameters on {len(samples)} samples: "
        f"loss {zero:.3e} -> {final:.3e}"
    )
    print(f"model written to {args.out_model}")
    return 0


def _cmd_benchmark(args):
    if args.suite == "default":
        suite = default_suite(seed=args.seed if args.seed is not None else 0)
    else:
        suite = load_suite(args.suite)
        if args.seed is not None:
            suite = [replace(sc, seed=args.seed) for sc in suite]
    result = benchmark(suite, trials=args.trials, mode=args.mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = benchmark_json(result)
    (out / "benchmark.json").write_text(payload)

    fmt = "{:<32}{:>9}{:>9}{:>10}{:>10}{:>12}{:>6}"
    print(fmt.format("scenario", "h_min", "h_neg", "avg_dist", "avg_sdist",
                     "sdist_var", "inf"))
    for row in result["scenarios"]:
        m = row["mean"]
        print(
            fmt.format(
                row["name"],
                f"{m['h_min']:.2f}",
                f"{m['h_neg']:.1%}",
                f"{m['avg_dist']:.3f}",
                f"{m['avg_sdist']:.3f}",
                f"{m['s_sdist_var']:.2e}",
                f"{m['infeasible_steps']:.0f}",
            )
        )
    print(f"table written to {out / 'benchmark.json'}")
    blown = any(p["blown_up"] for row in result["scenarios"] for p in row["per_trial"])
    return 2 if blown else 0


def _cmd_metrics(args):
    log = TrajectoryLog.from_csv(
        args.trajectory, safety_radius=args.safety_radius, center=args.center
    )
    report = compute_metrics(
        log,
        settle_exclude=args.settle_exclude,
        wedge_sectors=WEDGE_DEFAULT if args.wedge else None,
    )
    sys.stdout.write(metrics_json(report, log.seed, "from-csv"))
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "train-offline":
            return _cmd_train_offline(args)
        if args.command == "benchmark":
            return _cmd_benchmark(args)
        if args.command == "metrics":
            return _cmd_metrics(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
