"""Per-extractor projection: split the memory output back into its K patch
sequences, run each through R LSTM layers and a flatten+linear head, and add
the K forecasts."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .representation import SegmentMap, split_segments


class RecurrentEncoder(nn.Module):
    """R stacked LSTM layers along the patch axis, channel by channel; R=0 is identity."""

    def __init__(self, width: int, hidden: int, layers: int):
        super().__init__()
        self.layers = layers
        self.out_dim = hidden if layers else width
        self.lstm = nn.LSTM(width, hidden, num_layers=layers, batch_first=True) if layers else None
        if self.lstm is not None:
            for name, w in self.lstm.named_parameters():
                if name.startswith("weight_hh"):
                    for gate in w.data.chunk(4, dim=0):
                        nn.init.orthogonal_(gate)

    def forward(self, seg: torch.Tensor) -> torch.Tensor:
        if self.lstm is None:
            return seg
        b, f, n, e = seg.shape
        out, _ = self.lstm(seg.reshape(b * f, n, e))
        return out.reshape(b, f, n, -1)


class ProjectionHead(nn.Module):
    def __init__(self, n_patches: int, width: int, hidden: int, layers: int, horizon: int):
        super().__init__()
        self.n_patches = n_patches
        self.encoder = RecurrentEncoder(width, hidden, layers)
        self.linear = nn.Linear(n_patches * self.encoder.out_dim, horizon)

    def forward(self, seg: torch.Tensor) -> torch.Tensor:
        """(B, F, n, E) -> (B, H, F)."""
        if seg.shape[-2] != self.n_patches:
            raise ValueError(f"head built for {self.n_patches} patches, got {seg.shape[-2]}")
        enc = self.encoder(seg)
        return self.linear(enc.flatten(-2)).transpose(-1, -2)


def sum_forecasts(forecasts: Sequence[torch.Tensor]) -> torch.Tensor:
    if not forecasts:
        raise ValueError("nothing to sum")
    shape = forecasts[0].shape
    if any(f.shape != shape for f in forecasts):
        raise ValueError(f"forecast shapes differ: {[tuple(f.shape) for f in forecasts]}")
    out = forecasts[0]
    for f in forecasts[1:]:
        out = out + f
    return out


class Projection(nn.Module):
    def __init__(self, segments: SegmentMap, width: int, hidden: int | None, layers: int, horizon: int):
        super().__init__()
        self.segments = segments
        hidden = hidden or width
        self.heads = nn.ModuleList(ProjectionHead(n, width, hidden, layers, horizon) for n in segments.counts)

    def branch_forecasts(self, rep: torch.Tensor) -> list[torch.Tensor]:
        return [head(seg) for head, seg in zip(self.heads, split_segments(rep, self.segments))]

    def forward(self, rep: torch.Tensor) -> torch.Tensor:
        return sum_forecasts(self.branch_forecasts(rep))
