"""REP-Net assembly: Representation -> Memory -> Projection, with optional
per-instance normalisation, parameter accounting and checkpoints."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, config_hash, from_dict, to_dict
from .memory import MemoryStack
from .projection import Projection
from .representation import Representation

STD_FLOOR = 1e-5


class InputError(ValueError):
    pass


class InstanceNorm(nn.Module):
    """Per-window, per-channel standardisation of the lookback, undone on the forecast."""

    def __init__(self, floor: float = STD_FLOOR):
        super().__init__()
        self.floor = floor

    def stats(self, x: torch.Tensor):
        mean = x.mean(dim=-2, keepdim=True)
        std = x.std(dim=-2, keepdim=True, unbiased=False).clamp_min(self.floor)
        return mean, std

    def normalize(self, x, mean, std):
        return (x - mean) / std

    def denormalize(self, y, mean, std):
        return y * std + mean


class REPNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.representation = Representation(cfg)
        self.segments = self.representation.segments
        width = cfg.embed_dim
        self.memory = MemoryStack(cfg.memory, cfg.n_features, self.segments.total, width)
        self.projection = Projection(self.segments, width, cfg.projection.hidden, cfg.projection.R, cfg.horizon)
        self.norm = InstanceNorm() if cfg.instance_norm else None

    def encode(self, x: torch.Tensor, x_mark: torch.Tensor) -> torch.Tensor:
        """Memory output (B, F, P, E) for already-normalised input."""
        return self.memory(self.representation(x, x_mark))

    def forward(self, x: torch.Tensor, x_mark: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if x.dim() != 3 or x.shape[1:] != (cfg.lookback, cfg.n_features):
            raise InputError(f"expected x of shape (B, {cfg.lookback}, {cfg.n_features}), got {tuple(x.shape)}")
        if x_mark.shape[:2] != x.shape[:2] or x_mark.shape[-1] != cfg.n_time_features:
            raise InputError(f"x_mark shape {tuple(x_mark.shape)} does not match x {tuple(x.shape)}")
        if not torch.isfinite(x).all():
            raise InputError("non-finite values in input window")
        if self.norm is None:
            return self.projection(self.encode(x, x_mark))
        mean, std = self.norm.stats(x)
        y = self.projection(self.encode(self.norm.normalize(x, mean, std), x_mark))
        return self.norm.denormalize(y, mean, std)

    def partition(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Parameters grouped by module; feature and time embeddings kept apart."""
        groups = {"feature_embedding": [], "time_embedding": [], "memory": [], "projection": []}
        for name, p in self.named_parameters():
            if name.startswith("representation.feature_embed"):
                groups["feature_embedding"].append((name, p))
            elif name.startswith(("representation.time_embed", "representation.calendar")):
                groups["time_embedding"].append((name, p))
            elif name.startswith("memory."):
                groups["memory"].append((name, p))
            elif name.startswith("projection."):
                groups["projection"].append((name, p))
            else:
                raise RuntimeError(f"parameter {name} belongs to no module group")
        return groups


def build_model(cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> REPNet:
    """Deterministic construction: parameters depend only on ``cfg.seed``."""
    cfg.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = REPNet(cfg)
    return model.to(dtype)


def count_parameters(model: nn.Module, include_embedding_tables: bool = True) -> int:
    """Trainable parameter count; lookup tables for calendar fields are optional."""
    total = 0
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        if not include_embedding_tables and ".calendar." in f".{name}":
            continue
        total += p.numel()
    return total


def save_checkpoint(model: REPNet, path: str | Path) -> None:
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    arrays["__config__"] = np.array(json.dumps(to_dict(model.cfg)))
    arrays["__config_hash__"] = np.array(config_hash(model.cfg))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> REPNet:
    with np.load(path, allow_pickle=False) as archive:
        cfg = from_dict(ModelConfig, json.loads(str(archive["__config__"])))
        if str(archive["__config_hash__"]) != config_hash(cfg):
            raise ValueError(f"{path}: config hash mismatch")
        state = {k: torch.from_numpy(archive[k]) for k in archive.files if not k.startswith("__")}
    dtype = next(iter(state.values())).dtype if state else torch.float32
    model = build_model(cfg, dtype)
    model.load_state_dict(state)
    return model
