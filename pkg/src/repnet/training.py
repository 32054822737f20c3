"""Loss, metrics, early stopping, plateau LR schedule and the training loop."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import resource
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import TrainConfig, config_hash
from .data import SplitData, WindowDataset
from .model import REPNet, count_parameters

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, report: "RunReport | None" = None):
        super().__init__(message)
        self.report = report


def huber_loss(pred: torch.Tensor, target: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Mean elementwise Huber loss over every (batch, step, channel) entry."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    r = pred - target
    if not torch.isfinite(r).all():
        raise ValueError("non-finite values in loss inputs")
    a = r.abs()
    return torch.where(a < delta, 0.5 * r**2, delta * (a - 0.5 * delta)).mean()


def mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def mae(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def early_stop_step(history: Sequence[float], patience: int = 3, min_rel: float = 0.01) -> bool:
    """True once ``patience`` consecutive epochs improved on the best-so-far
    validation loss by less than ``min_rel`` (relative)."""
    if not history:
        raise ValueError("empty loss history")
    best = history[0]
    stale = 0
    for loss in history[1:]:
        rel = (best - loss) / abs(best) if best else (math.inf if loss < best else 0.0)
        stale = 0 if rel >= min_rel else stale + 1
        best = min(best, loss)
    return stale >= patience


@dataclass(frozen=True)
class PlateauState:
    lr: float
    best: float = math.inf
    bad_epochs: int = 0


def plateau_lr_step(state: PlateauState, val_loss: float, patience: int = 1, factor: float = 0.5) -> PlateauState:
    """Multiply the rate by ``factor`` after ``patience`` epochs with no improvement."""
    if not 0 < factor < 1:
        raise ValueError("factor must be in (0, 1)")
    if val_loss < state.best:
        return PlateauState(state.lr, val_loss, 0)
    bad = state.bad_epochs + 1
    if bad >= patience:
        return PlateauState(state.lr * factor, state.best, 0)
    return PlateauState(state.lr, state.best, bad)


@dataclass
class RunReport:
    config_hash: str = ""
    dataset: str = ""
    horizon: int = 0
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    test_mse: float | None = None
    test_mae: float | None = None
    n_params: int = 0
    n_params_without_tables: int = 0
    seconds_per_iter: float = 0.0
    peak_memory_bytes: int = 0
    stop_reason: str = ""
    instance_norm: bool = True
    per_window_mse: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1))

    @classmethod
    def from_json(cls, path: str | Path) -> "RunReport":
        return cls(**json.loads(Path(path).read_text()))

    def write_curves(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.lr), start=1):
                w.writerow([i, *row])


def _peak_memory(device: torch.device) -> int:
    if device.type == "cuda":
        return int(torch.cuda.max_memory_allocated(device))
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss) * 1024


@torch.no_grad()
def per_window_errors(model: REPNet, windows: WindowDataset, batch_size: int = 256,
                      device: torch.device | str = "cpu") -> tuple[np.ndarray, np.ndarray]:
    """Per-window mean squared and absolute error, dropout disabled."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    sq, ab = [], []
    for x, xm, y in windows.iter_batches(batch_size):
        x, xm, y = (t.to(device, dtype) for t in (x, xm, y))
        err = model(x, xm) - y
        sq.append((err**2).mean(dim=(1, 2)).double().cpu())
        ab.append(err.abs().mean(dim=(1, 2)).double().cpu())
    model.train(was_training)
    return torch.cat(sq).numpy(), torch.cat(ab).numpy()


def evaluate(model: REPNet, windows: WindowDataset, batch_size: int = 256,
             device: torch.device | str = "cpu") -> tuple[float, float]:
    """(MSE, MAE) over all windows; every window carries equal weight."""
    sq, ab = per_window_errors(model, windows, batch_size, device)
    return float(sq.mean()), float(ab.mean())


@torch.no_grad()
def _mean_loss(model, windows, delta, batch_size, device) -> float:
    model.eval()
    dtype = next(model.parameters()).dtype
    total, n = 0.0, 0
    for x, xm, y in windows.iter_batches(batch_size):
        x, xm, y = (t.to(device, dtype) for t in (x, xm, y))
        pred = model(x, xm)
        if not torch.isfinite(pred).all():
            return math.nan
        total += float(huber_loss(pred, y, delta)) * len(x)
        n += len(x)
    return total / n


def fit(model: REPNet, data: SplitData, cfg: TrainConfig, device: torch.device | str = "cpu",
        seed: int | None = None) -> RunReport:
    """Adam on the Huber loss with plateau LR and early stopping on validation loss.

    The best-validation parameters are restored before the single test pass.
    """
    cfg.validate()
    device = torch.device(device)
    seed = model.cfg.seed if seed is None else seed
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model.to(device)
    dtype = next(model.parameters()).dtype
    if device.type == "cuda":
        torch.cuda.reset_peak_memory_stats(device)

    report = RunReport(
        config_hash=config_hash(model.cfg),
        dataset=model.cfg.dataset,
        horizon=model.cfg.horizon,
        n_params=count_parameters(model),
        n_params_without_tables=count_parameters(model, include_embedding_tables=False),
        instance_norm=model.cfg.instance_norm,
    )
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = PlateauState(cfg.lr)
    best_state = copy.deepcopy(model.state_dict())
    iter_times: list[float] = []

    for epoch in range(cfg.max_epochs):
        model.train()
        running, count = 0.0, 0
        for x, xm, y in data.train.iter_batches(cfg.batch_size, shuffle=True, generator=rng):
            t0 = time.perf_counter()
            x, xm, y = (t.to(device, dtype) for t in (x, xm, y))
            opt.zero_grad(set_to_none=True)
            pred = model(x, xm)
            if not torch.isfinite(pred).all():
                report.stop_reason = f"diverged in epoch {epoch + 1}"
                raise DivergenceError(report.stop_reason, report)
            loss = huber_loss(pred, y, cfg.delta)
            if not torch.isfinite(loss):
                report.stop_reason = f"diverged in epoch {epoch + 1}"
                raise DivergenceError(report.stop_reason, report)
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            iter_times.append(time.perf_counter() - t0)
            running += loss.item() * len(x)
            count += len(x)

        val = _mean_loss(model, data.val, cfg.delta, cfg.eval_batch_size, device)
        if not math.isfinite(val):
            report.stop_reason = f"diverged in epoch {epoch + 1}"
            raise DivergenceError(report.stop_reason, report)
        report.train_loss.append(running / count)
        report.val_loss.append(val)
        report.lr.append(sched.lr)
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch + 1, running / count, val, sched.lr)
        if val < report.best_val_loss:
            report.best_val_loss = val
            report.best_epoch = epoch + 1
            best_state = copy.deepcopy(model.state_dict())

        if early_stop_step(report.val_loss, cfg.es_patience, cfg.es_min_rel_improve):
            report.stop_reason = f"early stop after epoch {epoch + 1}"
            break
        sched = plateau_lr_step(sched, val, cfg.lr_patience, cfg.lr_factor)
        for group in opt.param_groups:
            group["lr"] = sched.lr
    else:
        report.stop_reason = f"max_epochs ({cfg.max_epochs}) reached"

    model.load_state_dict(best_state)
    sq, ab = per_window_errors(model, data.test, cfg.eval_batch_size, device)
    report.test_mse = float(sq.mean())
    report.test_mae = float(ab.mean())
    report.per_window_mse = sq.tolist()
    report.seconds_per_iter = float(np.median(iter_times)) if iter_times else 0.0
    report.peak_memory_bytes = _peak_memory(device)
    return report
