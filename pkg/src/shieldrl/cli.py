"""Command-line entry points: train, oversee, evaluate, export-plots, intercept-bench."""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from .orchestrator.config import RunConfig, parse_config_file


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = parse_config_file(args.config)
    else:
        cfg = RunConfig.for_env(args.env)
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args):
    from .orchestrator.training import run_training
    cfg = _load_config(args)
    summary = run_training(cfg, args.out, resume_from=args.resume)
    print(json.dumps(summary, indent=1))


def cmd_oversee(args):
    from .orchestrator.service import serve_oversight
    cfg = _load_config(args)
    cfg.oversight_source = args.source
    ui_dir = args.ui_dir or (Path(__file__).resolve().parents[2] / "frontend" / "dist")
    serve_oversight(cfg, port=args.port, fps=args.fps, ui_dir=ui_dir)


def cmd_evaluate(args):
    from .orchestrator.evaluate import evaluate
    result = evaluate(args.checkpoint, episodes=args.episodes,
                      trajectories_path=args.trajectories)
    print(json.dumps(result, indent=1))


def cmd_export_plots(args):
    from .orchestrator.exports import export_plots
    info = export_plots(args.run, args.out, bin_size=args.bin_size)
    print(json.dumps(info, indent=1))


def cmd_intercept_bench(args):
    from .orchestrator.bench import run_benchmark
    results = run_benchmark(out_path=args.out, seed=args.seed, n_runs=args.runs)
    print(json.dumps(results, indent=1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shieldrl",
        description="Safe model-based RL with imagination shielding")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the full training pipeline")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--env", default="puckworld-l")
    p.add_argument("--mode", choices=("mbhi", "hirl", "steve-unshielded"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--resume", help="checkpoint directory to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("oversee", help="serve the human-oversight session")
    p.add_argument("--config")
    p.add_argument("--env", default="puckworld-l")
    p.add_argument("--seed", type=int)
    p.add_argument("--source", choices=("oracle", "human"), default="oracle")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--fps", type=float, default=20.0)
    p.add_argument("--ui-dir", help="static UI bundle to serve at /ui")
    p.set_defaults(func=cmd_oversee)

    p = sub.add_parser("evaluate", help="greedy evaluation from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--trajectories", help="write visited transitions as JSONL")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-plots", help="aggregate run metrics into plot CSVs")
    p.add_argument("--run", action="append", required=True,
                   help="run directory (repeat for multiple seeds)")
    p.add_argument("--out", required=True)
    p.add_argument("--bin-size", type=int, default=2000)
    p.set_defaults(func=cmd_export_plots)

    p = sub.add_parser("intercept-bench", help="interception success benchmark")
    p.add_argument("--out", help="write results JSON here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=5)
    p.set_defaults(func=cmd_intercept_bench)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
