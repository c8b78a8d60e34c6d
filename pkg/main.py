"""
Command-line entry point for nbv-grasp-sim.

    python main.py bench --seeds 0..49 --out bench_output
    python main.py sweep-window --seeds 0..29 --T 1 6 12 24
    python main.py run-scenario scene_d --policy nbv_grasp --perturb 20
"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from src import config
from src.benchmark import (POLICY_ORDER, ExperimentConfig, generate_scene_file, load_config_overrides,
                           parse_policies, parse_seeds, profile_tick, run_bench, run_scenario,
                           run_scenario_batch, sweep_window)
from src.policy import PolicyConfig, PolicyKind
from src.report_generator import generate_report

logger = logging.getLogger("main")


def _add_experiment_arguments(parser: argparse.ArgumentParser, default_seeds: str) -> None:
    parser.add_argument("--seeds", default=default_seeds, help="Seed range A..B (inclusive) or list a,b,c")
    parser.add_argument("--objects", type=int, default=config.PACKED_OBJECT_COUNT, help="Objects per packed scene")
    parser.add_argument("--noise", type=float, default=config.NOISE_SIGMA, help="Depth noise std [m]")
    parser.add_argument("--jobs", type=int, default=config.JOBS, help="Worker threads")


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default=config.OUTPUT_DIR, help="Output directory")
    parser.add_argument("--config", help="JSON file overriding policy parameters")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nbv-grasp-sim",
                                     description="Closed-loop next-best-view grasp planning benchmark")
    commands = parser.add_subparsers(dest="command", required=True)

    bench = commands.add_parser("bench", help="Run policies over packed scenes and write metrics")
    _add_experiment_arguments(bench, "0..49")
    _add_common_arguments(bench)
    bench.add_argument("--policies", default=",".join(kind.value for kind in POLICY_ORDER),
                       help="Comma-separated policies")

    sweep = commands.add_parser("sweep-window", help="nbv_grasp success and search time per window size")
    _add_experiment_arguments(sweep, "0..29")
    _add_common_arguments(sweep)
    sweep.add_argument("--T", dest="t_values", type=int, nargs="+", default=[1, 6, 12, 24],
                       help="Window sizes to evaluate")

    profile = commands.add_parser("profile", help="Per-stage timings of nbv_grasp ticks")
    _add_experiment_arguments(profile, "0..39")
    _add_common_arguments(profile)

    scenario = commands.add_parser("run-scenario", help="Run a policy on a scenario file or bundled scene")
    scenario.add_argument("scenario", help="Scenario file path or bundled name (scene_a .. scene_d)")
    scenario.add_argument("--policy", default=PolicyKind.NBV_GRASP.value,
                          choices=[kind.value for kind in PolicyKind])
    scenario.add_argument("--policies", help="Comma-separated policies (with --perturb)")
    scenario.add_argument("--perturb", type=int, help="Run N perturbed instances and write a trials CSV")
    scenario.add_argument("--noise", type=float, default=config.NOISE_SIGMA, help="Depth noise std [m]")
    _add_common_arguments(scenario)

    gen = commands.add_parser("gen-scene", help="Write a packed scene with its selected target")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True, help="Scene file to write")
    gen.add_argument("--objects", type=int, default=config.PACKED_OBJECT_COUNT)
    gen.add_argument("--config", help="JSON file overriding policy parameters")

    report = commands.add_parser("report", help="Regenerate the Markdown report from a summary.csv")
    report.add_argument("summary_csv")
    report.add_argument("--out", required=True, help="Markdown file to write")
    report.add_argument("--config", help="JSON file overriding policy parameters")
    return parser


def _policy_config(args: argparse.Namespace) -> PolicyConfig:
    return load_config_overrides(args.config) if args.config else PolicyConfig()


def _experiment(args: argparse.Namespace, policies=POLICY_ORDER) -> ExperimentConfig:
    return ExperimentConfig(seeds=parse_seeds(args.seeds), policies=policies, n_objects=args.objects,
                            noise_sigma=args.noise, policy=_policy_config(args), output_dir=args.out,
                            jobs=args.jobs)


def dispatch(args: argparse.Namespace) -> None:
    if args.command == "bench":
        for row in run_bench(_experiment(args, parse_policies(args.policies))):
            logger.info(f"{row.policy}: SR {row.sr:.2f} FR {row.fr:.2f} AR {row.ar:.2f} "
                        f"views {row.views_mean:.1f} +- {row.views_std:.1f}")
    elif args.command == "sweep-window":
        sweep_window(_experiment(args, (PolicyKind.NBV_GRASP,)), args.t_values)
    elif args.command == "profile":
        profile_tick(_experiment(args, (PolicyKind.NBV_GRASP,)))
    elif args.command == "run-scenario":
        policy_config = replace(_policy_config(args), noise_sigma=args.noise)
        if args.perturb is not None:
            policies = parse_policies(args.policies) if args.policies else (PolicyKind(args.policy),)
            run_scenario_batch(args.scenario, policies, args.perturb, policy_config, args.out)
        else:
            run_scenario(args.scenario, PolicyKind(args.policy), policy_config, args.out)
    elif args.command == "gen-scene":
        generate_scene_file(args.seed, args.out, args.objects, _policy_config(args))
    elif args.command == "report":
        generate_report(args.summary_csv, args.out, _policy_config(args))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        dispatch(args)
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
