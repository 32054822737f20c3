"""Efficiency profile: parameter count, seconds per training iteration and peak
memory, measured at batch size one."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, replace

import torch
from torch.profiler import ProfilerActivity, profile

from .config import ModelConfig
from .model import build_model, count_parameters


@dataclass(frozen=True)
class EfficiencyProfile:
    n_params: int
    seconds_per_iter: float
    peak_memory_bytes: int
    timings: tuple[float, ...] = ()


def _step(model, x, xm):
    model.zero_grad(set_to_none=True)
    model(x, xm).sum().backward()


def _cpu_peak_bytes(model, x, xm) -> int:
    """Peak of the running allocation balance over one forward+backward pass."""
    with profile(activities=[ProfilerActivity.CPU], profile_memory=True) as prof:
        _step(model, x, xm)
    items = sorted((e.time_range.start, e.self_cpu_memory_usage) for e in prof.events() if e.self_cpu_memory_usage)
    cur = peak = 0
    for _, delta in items:
        cur += delta
        peak = max(peak, cur)
    return peak


def profile_efficiency(
    cfg: ModelConfig,
    batch_size: int = 1,
    iters: int = 20,
    warmup: int = 5,
    device: str | torch.device = "cpu",
    fixed_length: int | None = 96,
) -> EfficiencyProfile:
    """Median wall time of ``iters`` warm forward+backward passes.

    With ``fixed_length`` set, lookback and horizon are both forced to it.
    """
    if iters < 20:
        raise ValueError("need at least 20 timed iterations")
    if fixed_length is not None:
        cfg = replace(cfg, lookback=fixed_length, horizon=fixed_length)
    device = torch.device(device)
    model = build_model(cfg).to(device).train()
    gen = torch.Generator().manual_seed(cfg.seed)
    x = torch.randn(batch_size, cfg.lookback, cfg.n_features, generator=gen).to(device)
    xm = (torch.rand(batch_size, cfg.lookback, cfg.n_time_features, generator=gen) - 0.5).to(device)

    for _ in range(warmup):
        _step(model, x, xm)
    timings = []
    for _ in range(iters):
        if device.type == "cuda":
            torch.cuda.synchronize(device)
        t0 = time.perf_counter()
        _step(model, x, xm)
        if device.type == "cuda":
            torch.cuda.synchronize(device)
        timings.append(time.perf_counter() - t0)

    resident = sum(p.numel() * p.element_size() * 2 for p in model.parameters())  # weights + grads
    if device.type == "cuda":
        torch.cuda.reset_peak_memory_stats(device)
        _step(model, x, xm)
        peak = int(torch.cuda.max_memory_allocated(device))
    else:
        peak = resident + _cpu_peak_bytes(model, x, xm)
    return EfficiencyProfile(count_parameters(model), statistics.median(timings), peak, tuple(timings))
