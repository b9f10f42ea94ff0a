"""Command line entry point: ``lqrguide <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure
(CARE failure, or divergence in every simulated episode).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config
from .excitation import ExcitationInputError, generate_record, write_record_csv
from .harness import (
    POLICIES,
    episode_record,
    evaluate,
    evaluation_excitation_seed,
    kt_params,
    make_controller,
    rollout,
    summarize,
    train,
    write_metrics_csv,
)
from .lac import UsageError
from .lqr import LqrDesignError, RiccatiNumericError, design_lqr, random_assumed_plant

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML config file (see lqrguide.config)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--alpha", type=float, help="weight of the LQR force")
    p.add_argument("--episodes", type=int, help="number of training episodes")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lqrguide",
                                     description="LQR-guided Lyapunov actor-critic vibration control")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design-lqr", help="design the LQR policy on the assumed model")
    _common(p)
    p.add_argument("--randomize-assumed", action="store_true",
                   help="draw the assumed model at random (uses --seed)")

    p = sub.add_parser("gen-excitation", help="write one Kanai-Tajimi record as CSV")
    _common(p)

    p = sub.add_parser("simulate", help="uncontrolled or LQR rollout on the true plant")
    _common(p)
    p.add_argument("--policy", choices=("uncontrolled", "lqr"), default="lqr")

    p = sub.add_parser("train", help="train the RL controller")
    _common(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--guided", dest="guided", action="store_true", default=True)
    mode.add_argument("--naive", dest="guided", action="store_false")

    p = sub.add_parser("evaluate", help="roll out a policy on held-out excitation seeds")
    _common(p)
    p.add_argument("--policy", choices=POLICIES, required=True)
    p.add_argument("--run-dir", type=Path, help="training run directory holding actor.sctl")
    p.add_argument("--n-seeds", type=int, help="number of evaluation seeds")

    p = sub.add_parser("compare", help="naive/guided training plus the four-way evaluation")
    _common(p)
    p.add_argument("--n-seeds", type=int, help="number of evaluation seeds")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if args.episodes is not None:
        changes["episodes"] = args.episodes
    if getattr(args, "n_seeds", None) is not None:
        changes["eval_seeds"] = args.n_seeds
    try:
        return cfg.replace(**changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _out_dir(args, default: str) -> Path:
    out = args.out or Path("runs") / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_design_lqr(args, cfg: RunConfig) -> int:
    assumed = cfg.assumed
    if args.randomize_assumed:
        assumed = random_assumed_plant(np.random.default_rng(cfg.seed))
    policy = design_lqr(assumed, np.array(cfg.lqr.q), cfg.lqr.r)
    text = policy.provenance()
    print(text, end="")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "lqr.txt").write_text(text)
    return EXIT_OK


def cmd_gen_excitation(args, cfg: RunConfig) -> int:
    out = _out_dir(args, "excitation")
    record = generate_record(cfg.seed, kt_params(cfg))
    path = out / f"excitation_seed{cfg.seed}.csv"
    write_record_csv(path, record, cfg.dt)
    print(f"wrote {len(record)} samples to {path}")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, f"simulate-{args.policy}")
    policy = design_lqr(cfg.assumed, np.array(cfg.lqr.q), cfg.lqr.r)
    record = episode_record(cfg, evaluation_excitation_seed(cfg.seed))
    traj, metrics = rollout(cfg, record, policy, make_controller(args.policy, cfg))
    traj.write_csv(out / f"{args.policy}_trajectory.csv")
    write_metrics_csv(out / f"{args.policy}_metrics.csv", [metrics], label="run")
    print(summarize({args.policy: [metrics]}).text, end="")
    return EXIT_NUMERIC if metrics.diverged else EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    mode = "guided" if args.guided else "naive"
    out = _out_dir(args, f"train-{mode}-seed{cfg.seed}")

    def progress(ep, m):
        print(f"episode {ep:3d}  peak|a|={m.peak_a:.4g}  rms_a={m.rms_a:.4g}  "
              f"rms_x={m.rms_x:.4g}{'  DIVERGED' if m.diverged else ''}", flush=True)
    result = train(cfg, guided=args.guided, out_dir=out, progress=progress)
    print(f"run directory: {out}  ({result.elapsed:.1f} s)")
    if result.metrics and all(m.diverged for m in result.metrics):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, f"evaluate-{args.policy}")
    res = evaluate(args.policy, cfg, run_dir=args.run_dir, out_dir=out)
    table = summarize({args.policy: res.metrics})
    (out / f"{args.policy}_summary.txt").write_text(table.text)
    print(table.text, end="")
    if res.metrics and all(m.diverged for m in res.metrics):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_compare(args, cfg: RunConfig) -> int:
    out = _out_dir(args, f"compare-seed{cfg.seed}")
    naive = train(cfg, guided=False, out_dir=out / "train-naive")
    guided = train(cfg, guided=True, out_dir=out / "train-guided")
    runs = {
        "uncontrolled": evaluate("uncontrolled", cfg, out_dir=out / "eval").metrics,
        "lqr": evaluate("lqr", cfg, out_dir=out / "eval").metrics,
        "rl": evaluate("rl", cfg, actor=naive.agent.actor, out_dir=out / "eval").metrics,
        "lqr-guided-rl": evaluate("lqr-guided-rl", cfg, actor=guided.agent.actor,
                                  out_dir=out / "eval").metrics,
    }
    table = summarize(runs)
    train_table = summarize({"naive-training": naive.metrics, "guided-training": guided.metrics})
    (out / "summary.txt").write_text("evaluation\n" + table.text + "\ntraining\n" + train_table.text)
    (out / "summary.csv").write_text(table.csv)
    (out / "config.yaml").write_text(dump_config(cfg))
    print("evaluation\n" + table.text + "\ntraining\n" + train_table.text, end="")
    return EXIT_OK


COMMANDS = {
    "design-lqr": cmd_design_lqr,
    "gen-excitation": cmd_gen_excitation,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError, FileNotFoundError, LqrDesignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RiccatiNumericError, ExcitationInputError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
