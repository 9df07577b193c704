"""Command-line entry points: run / suite / train / plot."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import mission
from .agents import TabularAgent, save_policy, train
from .env import MiniPlumeEnv

DEFAULT_OUT = os.environ.get("PLUMENAV_OUT", "out")


def _load_config(args, seed=None) -> mission.TrialConfig:
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if args.sensor:
        overrides["sensor_type"] = args.sensor
    if args.agent:
        overrides["agent"] = args.agent
    if args.policy:
        overrides["policy_file"] = args.policy
    if args.vision is not None:
        overrides["vision"] = args.vision
    if args.config:
        return mission.TrialConfig.from_file(args.config, **overrides)
    return mission.TrialConfig(**overrides)


def cmd_run(args) -> int:
    cfg = _load_config(args, seed=args.seed)
    record = mission.run_trial(cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"trial_seed{cfg.seed}.csv")
    record.write_csv(path)
    print(f"outcome={record.outcome} time={record.elapsed_s:.1f}s "
          f"final_distance={record.final_distance:.2f}m log={path}")
    return 0 if record.outcome != mission.OUTCOME_CRASHED else 1


def cmd_suite(args) -> int:
    cfg = _load_config(args, seed=args.seed)
    metrics, records = mission.run_suite(cfg, args.trials, args.seed,
                                         workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    for i, rec in enumerate(records):
        rec.write_csv(os.path.join(args.out, f"trial_{i:04d}_seed{rec.seed}.csv"))
    mission.write_suite_csv(os.path.join(args.out, "suite.csv"), metrics, records)
    print(f"n={metrics.n_trials} success_rate={metrics.success_rate:.2f} "
          f"mu_t={metrics.mean_time:.2f}s sigma_t={metrics.std_time:.2f}s "
          f"beta_t={metrics.best_time:.2f}s")
    return 0 if all(r.outcome != mission.OUTCOME_CRASHED for r in records) else 1


def cmd_train(args) -> int:
    env = MiniPlumeEnv(sparsity=args.sparsity)
    agent = TabularAgent(alpha=args.alpha)
    algo = "q_lambda" if args.algo == "qlambda" else "expected_sarsa"
    curve = train(agent, env, episodes=args.episodes, seed=args.seed, algo=algo)
    os.makedirs(args.out, exist_ok=True)
    policy_path = args.policy or os.path.join(args.out, f"policy_{args.algo}.json")
    th = env.thresholds
    save_policy(policy_path, agent, meta={
        "algo": algo, "episodes": args.episodes, "seed": args.seed,
        "sparsity": args.sparsity,
        "thresholds": {"off": th.off, "high": th.high,
                       "stereo_deadband": th.stereo_deadband},
    })
    curve_path = os.path.join(args.out, f"learning_curve_{args.algo}.csv")
    curve.to_csv(curve_path)
    print(f"trained {algo} for {args.episodes} episodes: "
          f"final-10% mean return={curve.tail_mean():.3f} "
          f"policy={policy_path} curve={curve_path}")
    return 0


def cmd_plot(args) -> int:
    import csv as _csv
    from .mission import LOG_COLUMNS, TrialRecord
    from .plots import emit_plots
    records = []
    for name in sorted(os.listdir(args.records)):
        if not (name.startswith("trial") and name.endswith(".csv")):
            continue
        path = os.path.join(args.records, name)
        with open(path) as f:
            header = f.readline()
            reader = _csv.reader(f)
            cols = next(reader)
            rows = [tuple(r) for r in reader if r and r[0] != "outcome"]
        seed = int(header.split("seed=")[1].strip()) if "seed=" in header else 0
        records.append(TrialRecord(
            config_digest="", seed=seed, outcome="", elapsed_s=0.0,
            final_distance=0.0, rows=rows, source_xy=(3.0, 5.0), course_meta={}))
    if not records:
        print("no trial CSVs found", file=sys.stderr)
        return 1
    created = emit_plots(records, args.out, learning_csv=args.curves)
    print("wrote: " + ", ".join(created))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="plumenav",
                                 description="UAV odor-source localization simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=7)
        p.add_argument("--sensor", choices=["MOX", "EC"])
        p.add_argument("--agent", choices=["OIO", "ExpectedSarsaLambda"])
        p.add_argument("--policy", help="policy JSON for the RL agent")
        p.add_argument("--vision", action=argparse.BooleanOptionalAction,
                       default=None)
        p.add_argument("--out", default=DEFAULT_OUT)

    p_run = sub.add_parser("run", help="run a single trial")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_suite = sub.add_parser("suite", help="run a suite of seeded trials")
    add_common(p_suite)
    p_suite.add_argument("--trials", type=int, default=5)
    p_suite.add_argument("--workers", type=int, default=1)
    p_suite.set_defaults(func=cmd_suite)

    p_train = sub.add_parser("train", help="train a tabular agent on the mini world")
    p_train.add_argument("--algo", choices=["qlambda", "esarsa"], default="esarsa")
    p_train.add_argument("--episodes", type=int, default=10_000)
    p_train.add_argument("--seed", type=int, default=7)
    p_train.add_argument("--sparsity", type=float, default=0.0)
    p_train.add_argument("--alpha", type=float, default=1e-4)
    p_train.add_argument("--policy", help="output policy path")
    p_train.add_argument("--out", default=DEFAULT_OUT)
    p_train.set_defaults(func=cmd_train)

    p_plot = sub.add_parser("plot", help="emit plots from recorded trials")
    p_plot.add_argument("--records", default=DEFAULT_OUT)
    p_plot.add_argument("--curves", help="learning-curve CSV to include")
    p_plot.add_argument("--out", default=DEFAULT_OUT)
    p_plot.set_defaults(func=cmd_plot)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
