"""Command-line interface.

Subcommands map one-to-one onto the harness operations:

    fedbargain sweep-reward   --out results/
    fedbargain sweep-commtime --out results/ --ue 2
    fedbargain leader-curve   --out results/
    fedbargain run            --out results/ [--theta-scale 0.5]

Exit codes: 0 success, 1 runtime failure (a report is still written when
possible), 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    RunReport,
    ScenarioConfig,
    SweepResult,
    default_config,
    leader_curve,
    load_config,
    run_end_to_end,
    sweep_commtime,
    sweep_reward,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedbargain",
        description=(
            "Deterministic simulator coupling a leader-follower incentive "
            "game to a synchronous federated-learning loop."
        ),
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=Path, default=None,
        help="JSON scenario file (default: built-in five-device scenario)",
    )
    common.add_argument(
        "--out", type=Path, default=Path("."),
        help="output directory (default: current directory)",
    )
    common.add_argument(
        "--seed", type=int, default=None, help="override the master seed"
    )
    common.add_argument(
        "--workers", type=int, default=1,
        help="concurrent sweep-point workers (results are identical for any value)",
    )
    common.add_argument(
        "--no-figures", action="store_true", help="skip PNG rendering"
    )

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser(
        "sweep-reward", parents=[common],
        help="best response of every device across the reward grid",
    )
    p_comm = sub.add_parser(
        "sweep-commtime", parents=[common],
        help="one device's best response across channel qualities",
    )
    p_comm.add_argument(
        "--ue", type=int, default=None,
        help="profile id to sweep (default: sweeps.commtime_ue from the config)",
    )
    sub.add_parser(
        "leader-curve", parents=[common],
        help="normalized server utility across the reward grid plus equilibrium",
    )
    p_run = sub.add_parser(
        "run", parents=[common],
        help="equilibrium then federated training, end to end",
    )
    p_run.add_argument(
        "--theta-scale", type=float, default=1.0,
        help="uniformly rescale equilibrium accuracies before training",
    )
    return parser


def _load(args: argparse.Namespace) -> ScenarioConfig:
    if args.seed is not None and args.seed < 0:
        raise ConfigError(f"--seed must be >= 0, got {args.seed}")
    if args.workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {args.workers}")
    if args.config is None:
        return default_config() if args.seed is None else default_config(args.seed)
    return load_config(args.config, seed_override=args.seed)


def _render_sweep(command: str, result: SweepResult, out: Path) -> None:
    from . import figures

    if command == "sweep-reward":
        figures.render_reward_sweep(result, out / "reward_sweep.png")
    elif command == "sweep-commtime":
        figures.render_commtime_sweep(result, out / "commtime_sweep.png")
    elif command == "leader-curve":
        figures.render_leader_curve(result, out / "leader_curve.png")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"fedbargain: config error: {exc}", file=sys.stderr)
        return 2

    out: Path = args.out
    try:
        if args.command == "run":
            report: RunReport = run_end_to_end(
                cfg, out_dir=out, theta_scale=args.theta_scale
            )
            if not args.no_figures and report.records:
                from . import figures

                figures.render_rounds(report, out / "rounds.png")
            if report.status != "ok":
                print(f"fedbargain: training failed: {report.error}", file=sys.stderr)
                return 1
            print(
                f"run complete: reward*={report.equilibrium.reward_star:.6g} "
                f"rounds={report.rounds_used} "
                f"accuracy={report.final_accuracy:.4f} "
                f"reached_target={report.reached_target}"
            )
            return 0

        if args.command == "sweep-reward":
            result = sweep_reward(cfg, out_dir=out, workers=args.workers)
        elif args.command == "sweep-commtime":
            result = sweep_commtime(
                cfg, ue_id=args.ue, out_dir=out, workers=args.workers
            )
        elif args.command == "leader-curve":
            result = leader_curve(cfg, out_dir=out, workers=args.workers)
        else:  # pragma: no cover - argparse enforces the choices
            raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"fedbargain: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"fedbargain: {exc}", file=sys.stderr)
        return 1

    if not args.no_figures:
        _render_sweep(args.command, result, out)
    print(f"{result.name}: {len(result.rows)} rows -> {out / (result.name + '.csv')}")
    return 0


def entrypoint() -> None:  # pragma: no cover - thin wrapper
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entrypoint()
