"""Multi-scale time-informed patch representation.

A lookback window (B, T, F) is cut into patches by K extractors, each with
its own cover / stride / dilation. Every patch is embedded per channel, the
matching calendar patch gets its own embedding, and the two are concatenated
along the embedding axis. The K patch sequences are then joined along the patch
axis; a SegmentMap remembers where each one sits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from .config import MIN_COVER, ConfigError, EmbeddingStrategy, ModelConfig, PatchExtractorSpec, TimeEmbeddingMethod
from .data import FIELD_CARDINALITY, TIME_FIELDS, time_feature_codes


class GeometryError(ConfigError):
    def __init__(self, message: str):
        super().__init__("extractors", message)


def patch_count(lookback: int, spec: PatchExtractorSpec) -> int:
    if spec.extent > lookback:
        raise GeometryError(f"extent {spec.extent} exceeds lookback {lookback}")
    return (lookback - spec.extent) // spec.stride + 1


def patch_indices(lookback: int, spec: PatchExtractorSpec) -> torch.Tensor:
    """(n, cover) time indices; entry [p, j] = p * stride + j * dilation."""
    n = patch_count(lookback, spec)
    starts = torch.arange(n) * spec.stride
    return starts[:, None] + torch.arange(spec.cover)[None, :] * spec.dilation


def extract_patches(window: torch.Tensor, spec: PatchExtractorSpec) -> torch.Tensor:
    """(..., T, C) -> (..., C, n, cover), channel by channel."""
    idx = patch_indices(window.shape[-2], spec).to(window.device)
    return window.transpose(-1, -2)[..., idx]


class PatchEmbedding(nn.Module):
    """One of the seven patch embedders; maps (..., in_channels, cover) -> (..., out_dim)."""

    def __init__(self, kind: str, in_channels: int, cover: int, out_dim: int, cnn_channels: int = 8):
        super().__init__()
        if cover < MIN_COVER.get(kind, 1):
            raise ConfigError("embedding.kind", f"{kind} needs cover >= {MIN_COVER[kind]}, got {cover}")
        self.kind = kind
        self.in_channels = in_channels
        flat = in_channels * cover
        c = cnn_channels
        if kind == "linear_1":
            self.net = nn.Linear(flat, out_dim)
        elif kind == "linear_2":
            self.net = nn.Sequential(nn.Linear(flat, out_dim), nn.Linear(out_dim, out_dim))
        elif kind == "linear_gelu":
            self.net = nn.Sequential(nn.Linear(flat, out_dim), nn.GELU(), nn.Linear(out_dim, out_dim))
        elif kind == "linear_gelu_glu":
            self.net = nn.Sequential(
                nn.Linear(flat, out_dim), nn.GELU(), nn.Linear(out_dim, 2 * out_dim), nn.GLU(dim=-1)
            )
        elif kind == "cnn_linear":
            self.net = nn.Sequential(nn.Conv1d(in_channels, c, 3), nn.Flatten(), nn.Linear(c * (cover - 2), out_dim))
        elif kind == "cnn_gelu_2":
            self.net = nn.Sequential(
                nn.Conv1d(in_channels, c, 3), nn.GELU(),
                nn.Conv1d(c, c, 3), nn.GELU(),
                nn.Flatten(), nn.Linear(c * (cover - 4), out_dim),
            )
        elif kind == "cnn_maxpool_2":
            self.net = nn.Sequential(
                nn.Conv1d(in_channels, c, 3), nn.MaxPool1d(3, stride=1),
                nn.Conv1d(c, c, 3), nn.MaxPool1d(3, stride=1),
                nn.Flatten(), nn.Linear(c * (cover - 8), out_dim),
            )
        else:
            raise ConfigError("embedding.kind", f"unknown kind {kind!r}")
        self.is_cnn = kind.startswith("cnn")

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        lead = patches.shape[:-2]
        if self.is_cnn:
            out = self.net(patches.reshape(-1, *patches.shape[-2:]))
        else:
            out = self.net(patches.reshape(-1, patches.shape[-2] * patches.shape[-1]))
        return out.reshape(*lead, out.shape[-1])


def embed_feature_patches(patches: torch.Tensor, embedder: PatchEmbedding) -> torch.Tensor:
    """(..., F, n, cover) -> (..., F, n, e_f); each channel's patch embedded on its own."""
    return embedder(patches.unsqueeze(-2))


def sinusoidal_code(n: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    freq = torch.exp(-math.log(10000.0) * torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    code = torch.zeros(n, dim, dtype=torch.float64)
    code[:, 0::2] = torch.sin(pos * freq)
    code[:, 1::2] = torch.cos(pos * freq)[:, : dim // 2]
    return code


class CalendarTables(nn.Module):
    """Learned lookup vectors per discrete calendar field, summed per time step."""

    def __init__(self, freq: str, dim: int):
        super().__init__()
        self.freq = freq
        self.fields = TIME_FIELDS[freq]
        self.tables = nn.ModuleList(nn.Embedding(FIELD_CARDINALITY[f], dim) for f in self.fields)

    def forward(self, x_mark: torch.Tensor) -> torch.Tensor:
        codes = time_feature_codes(x_mark, self.freq)
        return sum(table(codes[..., i]) for i, table in enumerate(self.tables))


class TimePatchEmbedding(nn.Module):
    """Embeds the calendar patches of one extractor into width e_t.

    Active contributions are summed: a dedicated copy of the feature embedder
    over the calendar-feature patch (timeF), patch-averaged lookup vectors
    (tempEmb) and a fixed sinusoidal code of the patch index (posEmb).
    """

    def __init__(self, spec: PatchExtractorSpec, lookback: int, n_marks: int,
                 strategy: EmbeddingStrategy, method: TimeEmbeddingMethod):
        super().__init__()
        self.spec = spec
        self.method = method
        n = patch_count(lookback, spec)
        self.timef = (
            PatchEmbedding(strategy.kind, n_marks, spec.cover, strategy.e_t, strategy.cnn_channels)
            if method.use_timeF else None
        )
        self.register_buffer("pos_code", sinusoidal_code(n, strategy.e_t).float(), persistent=False)

    def forward(self, x_mark: torch.Tensor, calendar: torch.Tensor | None = None) -> torch.Tensor:
        out = 0
        if self.timef is not None:
            out = out + self.timef(extract_patches(x_mark, self.spec).transpose(-3, -2))
        if self.method.use_tempEmb:
            out = out + extract_patches(calendar, self.spec).mean(-1).transpose(-1, -2)
        if self.method.use_posEmb:
            out = out + self.pos_code.to(x_mark.dtype)
        if isinstance(out, int):
            raise ValueError("no time embedding method is enabled")
        if out.dim() == 2:  # posEmb alone carries no batch axis
            out = out.expand(x_mark.shape[0], *out.shape)
        return out


def embed_time_patches(x_mark: torch.Tensor, embedder: TimePatchEmbedding,
                       calendar: torch.Tensor | None = None) -> torch.Tensor:
    """(B, T, M) calendar features -> (B, n, e_t)."""
    return embedder(x_mark, calendar)


def assemble_time_informed(feat_emb: torch.Tensor, time_emb: torch.Tensor | None) -> torch.Tensor:
    """Broadcast (B, n, e_t) over channels and append to (B, F, n, e_f)."""
    if time_emb is None:
        return feat_emb
    if time_emb.shape[-2] != feat_emb.shape[-2]:
        raise ValueError(f"patch count mismatch: {feat_emb.shape[-2]} vs {time_emb.shape[-2]}")
    time_emb = time_emb.unsqueeze(-3).expand(*feat_emb.shape[:-1], time_emb.shape[-1])
    return torch.cat([feat_emb, time_emb], dim=-1)


@dataclass(frozen=True)
class SegmentMap:
    counts: tuple[int, ...]

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for c in self.counts:
            out.append(acc)
            acc += c
        return tuple(out)

    @property
    def total(self) -> int:
        return sum(self.counts)


def concat_extractors(parts: Sequence[torch.Tensor]) -> tuple[torch.Tensor, SegmentMap]:
    """Join (..., F, n_k, E) tensors along the patch axis."""
    if not 1 <= len(parts) <= 5:
        raise ConfigError("extractors", f"need 1..5 extractor outputs, got {len(parts)}")
    widths = {p.shape[-1] for p in parts}
    if len(widths) != 1 or len({p.shape[-3] for p in parts}) != 1:
        raise ConfigError("embedding", f"extractor outputs disagree in shape: {[tuple(p.shape) for p in parts]}")
    return torch.cat(list(parts), dim=-2), SegmentMap(tuple(p.shape[-2] for p in parts))


def split_segments(rep: torch.Tensor, segments: SegmentMap) -> list[torch.Tensor]:
    if rep.shape[-2] != segments.total or any(c < 1 for c in segments.counts):
        raise ValueError(f"segment map {segments.counts} does not fit patch axis of length {rep.shape[-2]}")
    return list(torch.split(rep, list(segments.counts), dim=-2))


class Representation(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        emb = cfg.embedding
        self.method = cfg.time_method
        self.specs = tuple(cfg.extractors)
        counts = []
        for spec in self.specs:
            spec.validate(cfg.lookback)
            counts.append(patch_count(cfg.lookback, spec))
        self.segments = SegmentMap(tuple(counts))
        self.feature_embed = nn.ModuleList(
            PatchEmbedding(emb.kind, 1, s.cover, emb.e_f, emb.cnn_channels) for s in self.specs
        )
        if self.method.any:
            self.time_embed = nn.ModuleList(
                TimePatchEmbedding(s, cfg.lookback, cfg.n_time_features, emb, self.method) for s in self.specs
            )
            self.calendar = CalendarTables(cfg.freq, emb.e_t) if self.method.use_tempEmb else None
        else:
            self.time_embed = None
            self.calendar = None

    def forward(self, x: torch.Tensor, x_mark: torch.Tensor) -> torch.Tensor:
        calendar = self.calendar(x_mark) if self.calendar is not None else None
        parts = []
        for k, spec in enumerate(self.specs):
            feat = embed_feature_patches(extract_patches(x, spec), self.feature_embed[k])
            time = None
            if self.time_embed is not None:
                time = embed_time_patches(x_mark, self.time_embed[k], calendar).to(feat.dtype)
            parts.append(assemble_time_informed(feat, time))
        rep, _ = concat_extractors(parts)
        return rep
