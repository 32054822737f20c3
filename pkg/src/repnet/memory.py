"""Memory stack: N mixer modules over the (B, F, P, E) patch representation.

Each module runs positional mixing, optional sparse self-attention, a
feature-level linear (optionally gated by a GLU), and feature mixing. Every
sub-block is a pre-norm residual ``x + drop(f(norm(x)))`` and the module as a
whole is wrapped in one more residual.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, MemoryConfig
from .entmax import entmax15


def glu_gate(x: torch.Tensor) -> torch.Tensor:
    """a * sigmoid(b) for the halves (a, b) of the last axis."""
    if x.shape[-1] % 2:
        raise ValueError(f"GLU needs an even last dimension, got {x.shape[-1]}")
    a, b = x.chunk(2, dim=-1)
    return a * torch.sigmoid(b)


class Residual(nn.Module):
    def __init__(self, width: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.drop = nn.Dropout(dropout)

    def branch(self, h: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.drop(self.branch(self.norm(x)))


class PositionalMix(Residual):
    """Linear map along the patch axis, shared over channels and embedding dims."""

    def __init__(self, n_patches: int, width: int, dropout: float):
        super().__init__(width, dropout)
        self.linear = nn.Linear(n_patches, n_patches)

    def branch(self, h):
        return F.gelu(self.linear(h.transpose(-1, -2))).transpose(-1, -2)


class SparseAttention(Residual):
    """Multi-head self-attention over patches, one channel at a time."""

    def __init__(self, width: int, heads: int, dropout: float, normalizer: str = "entmax15"):
        super().__init__(width, dropout)
        if width % heads:
            raise ConfigError("memory.heads", f"{heads} heads do not divide width {width}")
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.normalizer = normalizer
        self.last_weights: torch.Tensor | None = None

    def attention_weights(self, q, k):
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        if self.normalizer == "softmax":
            return torch.softmax(scores, dim=-1)
        return entmax15(scores, dim=-1)

    def branch(self, h):
        *lead, p, e = h.shape
        d = e // self.heads
        q, k, v = self.qkv(h).reshape(*lead, p, 3, self.heads, d).movedim(-3, 0).transpose(-2, -3)
        w = self.attention_weights(q, k)
        self.last_weights = w.detach()
        ctx = (w @ v).transpose(-2, -3).reshape(*lead, p, e)
        return self.out(ctx)


class GatedFeatureLinear(Residual):
    """Feature-level linear, doubled in width and halved again by a GLU when gated."""

    def __init__(self, width: int, dropout: float, use_glu: bool):
        super().__init__(width, dropout)
        self.use_glu = use_glu
        self.linear = nn.Linear(width, 2 * width if use_glu else width)

    def branch(self, h):
        h = self.linear(h)
        return glu_gate(h) if self.use_glu else F.gelu(h)


class FeatureMix(Residual):
    """Linear over the embedding axis, per channel or jointly across all channels."""

    def __init__(self, n_features: int, width: int, dropout: float, joint: bool):
        super().__init__(width, dropout)
        self.joint = joint
        size = n_features * width if joint else width
        self.linear = nn.Linear(size, size)

    def branch(self, h):
        if not self.joint:
            return F.gelu(self.linear(h))
        b, f, p, e = h.shape
        flat = h.permute(0, 2, 1, 3).reshape(b, p, f * e)
        return F.gelu(self.linear(flat)).reshape(b, p, f, e).permute(0, 2, 1, 3)


class MemoryBlock(nn.Module):
    def __init__(self, cfg: MemoryConfig, n_features: int, n_patches: int, width: int):
        super().__init__()
        blocks = [PositionalMix(n_patches, width, cfg.dropout)]
        if cfg.use_attention:
            blocks.append(SparseAttention(width, cfg.heads, cfg.dropout, cfg.attention_normalizer))
        blocks.append(GatedFeatureLinear(width, cfg.dropout, cfg.use_glu))
        blocks.append(FeatureMix(n_features, width, cfg.dropout, cfg.joint_feature_mix))
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x):
        # outer residual, averaged so that an all-identity chain stays the identity
        return 0.5 * (x + self.blocks(x))


class MemoryStack(nn.Module):
    """N independently parameterised MemoryBlocks; N=0 passes input through."""

    def __init__(self, cfg: MemoryConfig, n_features: int, n_patches: int, width: int):
        super().__init__()
        self.layers = nn.ModuleList(MemoryBlock(cfg, n_features, n_patches, width) for _ in range(cfg.N))

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

