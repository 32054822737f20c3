"""End-to-end experiment drivers shared by the CLI and scripts."""

from __future__ import annotations

import csv
import logging
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, config_hash, dump_config, to_dict
from .data import SplitData, prepare
from .model import build_model, save_checkpoint
from .search import SearchSpace, random_search
from .training import DivergenceError, RunReport, fit

log = logging.getLogger(__name__)


def bind_to_data(cfg: ExperimentConfig, data: SplitData) -> ExperimentConfig:
    """Take channel count and sampling frequency from the loaded series."""
    model = replace(cfg.model, dataset=cfg.data.name, n_features=data.dataset.n_channels, freq=data.dataset.freq)
    model.validate()
    return replace(cfg, model=model)


def train_on(cfg: ExperimentConfig, data: SplitData, out_dir: str | Path | None = None,
             device: str = "cpu") -> RunReport:
    """Build, train and evaluate one config on prepared data; optionally write artefacts."""
    model = build_model(cfg.model)
    report = fit(model, data, cfg.train, device=device)
    report.config = to_dict(cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.to_json(out / "report.json")
        report.write_curves(out / "curves.csv")
        dump_config(cfg, out / "config.yaml")
        save_checkpoint(model.cpu(), out / "checkpoint.npz")
    log.info("%s H=%d test MSE %.4f MAE %.4f (%s)", cfg.data.name, cfg.model.horizon,
             report.test_mse, report.test_mae, report.stop_reason)
    return report


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, device: str = "cpu") -> RunReport:
    data = prepare(cfg.data, cfg.model.lookback, cfg.model.horizon)
    cfg = bind_to_data(cfg, data)
    try:
        return train_on(cfg, data, out_dir, device)
    except DivergenceError as exc:
        if exc.report is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            exc.report.config = to_dict(cfg)
            exc.report.to_json(out / "report.json")
        raise


def run_search(cfg: ExperimentConfig, budget: int, seed: int, out_dir: str | Path,
               device: str = "cpu", space: SearchSpace | None = None) -> list[tuple]:
    """Random search around ``cfg``; one run directory per sample plus a ranking CSV."""
    out = Path(out_dir)
    data = prepare(cfg.data, cfg.model.lookback, cfg.model.horizon)
    base = bind_to_data(cfg, data)
    counter = iter(range(budget))

    def train_fn(model_cfg):
        i = next(counter)
        exp = replace(base, model=model_cfg)
        try:
            return train_on(exp, data, out / f"run_{i:03d}_{config_hash(exp)}", device)
        except DivergenceError as exc:
            log.warning("sample %d diverged: %s", i, exc)
            report = exc.report or RunReport()
            report.config = to_dict(exp)
            return report

    ranked = random_search(space or SearchSpace(), budget, seed, base.model, train_fn)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ranking.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "config_hash", "best_val_loss", "test_mse", "test_mae", "n_params"])
        for rank, (_, rep) in enumerate(ranked, start=1):
            w.writerow([rank, rep.config_hash, rep.best_val_loss, rep.test_mse, rep.test_mae, rep.n_params])
    dump_config(replace(base, model=ranked[0][0]), out / "best_config.yaml")
    return ranked


def collect_reports(runs_dir: str | Path) -> list[RunReport]:
    return [RunReport.from_json(p) for p in sorted(Path(runs_dir).rglob("report.json"))]
