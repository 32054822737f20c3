"""Command-line driver: ``repnet {run,search,ablate,profile,report}``.

Exit codes: 0 success, 2 configuration or input error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .ablation import ablation_cells, emit_heatmap, emit_report
from .config import ConfigError, ExperimentConfig, load_config
from .data import BoundsError, ParseError, SchemaError
from .experiments import collect_reports, run_experiment, run_search
from .profiling import profile_efficiency
from .training import DivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("repnet")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="experiment YAML")
    p.add_argument("--seed", type=int, help="override model seed / search seed")
    p.add_argument("--out-dir", type=Path, default=Path("runs"))
    p.add_argument("--device", default="cpu")
    p.add_argument("--exclude-channels", default="", help="comma-separated channel names or indices")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="repnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="train and evaluate one config")
    run.add_argument("--horizon", type=int)

    search = sub.add_parser("search", parents=[common], help="random hyperparameter search")
    search.add_argument("--budget", type=int, default=10)

    ablate = sub.add_parser("ablate", parents=[common], help="ablation deltas + heatmap from run reports")
    ablate.add_argument("--runs-dir", type=Path, required=True)
    ablate.add_argument("--mean-of-k", type=int, default=1)

    prof = sub.add_parser("profile", parents=[common], help="parameter count, time/iter, peak memory")
    prof.add_argument("--batch-size", type=int, default=1)
    prof.add_argument("--iters", type=int, default=20)
    prof.add_argument("--keep-lengths", action="store_true", help="do not force lookback = horizon = 96")

    rep = sub.add_parser("report", parents=[common], help="summary table of run reports")
    rep.add_argument("--runs-dir", type=Path, required=True)
    rep.add_argument("--format", choices=("csv", "md"), default="csv")
    return parser


def _load(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config", "required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, model=replace(cfg.model, seed=args.seed))
    if args.exclude_channels:
        names = tuple(s.strip() for s in args.exclude_channels.split(",") if s.strip())
        cfg = replace(cfg, data=replace(cfg.data, exclude_channels=names))
    if getattr(args, "horizon", None):
        cfg = replace(cfg, model=replace(cfg.model, horizon=args.horizon))
    cfg.validate()
    return cfg


def _dispatch(args) -> int:
    out: Path = args.out_dir
    if args.command == "run":
        report = run_experiment(_load(args), out, args.device)
        print(json.dumps({"test_mse": report.test_mse, "test_mae": report.test_mae,
                          "n_params": report.n_params, "stop_reason": report.stop_reason}))
    elif args.command == "search":
        cfg = _load(args)
        ranked = run_search(cfg, args.budget, args.seed if args.seed is not None else 0, out, args.device)
        best = ranked[0][1]
        print(json.dumps({"best_config_hash": best.config_hash, "best_val_loss": best.best_val_loss,
                          "test_mse": best.test_mse}))
    elif args.command == "ablate":
        cells = ablation_cells(collect_reports(args.runs_dir), args.mean_of_k)
        if not cells:
            raise ConfigError("--runs-dir", "no factor has runs on both sides")
        out.mkdir(parents=True, exist_ok=True)
        png, csv_path = emit_heatmap(cells, out / "ablation.png")
        print(json.dumps({"cells": len(cells), "image": str(png), "csv": str(csv_path)}))
    elif args.command == "profile":
        cfg = _load(args)
        prof = profile_efficiency(cfg.model, args.batch_size, args.iters, device=args.device,
                                  fixed_length=None if args.keep_lengths else 96)
        out.mkdir(parents=True, exist_ok=True)
        result = {k: v for k, v in asdict(prof).items() if k != "timings"}
        (out / "profile.json").write_text(json.dumps(result, indent=1))
        print(json.dumps(result))
    elif args.command == "report":
        reports = collect_reports(args.runs_dir)
        if not reports:
            raise ConfigError("--runs-dir", f"no report.json under {args.runs_dir}")
        out.mkdir(parents=True, exist_ok=True)
        path = emit_report(reports, out / f"summary.{args.format}", args.format)
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error in {exc.field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, ParseError, BoundsError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
