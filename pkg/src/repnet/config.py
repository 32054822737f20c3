"""Experiment configuration records and their YAML round trip."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Invalid configuration value. ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


COVER_SIZES = (3, 5, 10, 15, 20, 48, 64)
FEATURE_EMBED_SIZES = (4, 8, 16, 32, 64, 128)
TIME_EMBED_SIZES = (8, 16)
HEADS = (4, 8, 16, 32)
STACK_DEPTHS = (0, 1, 2, 3, 4, 5, 8, 10)
DROPOUTS = (0.25, 0.33, 0.5, 0.66, 0.9)
LSTM_DEPTHS = (0, 1, 2, 3)
MAX_EXTRACTORS = 5

EMBEDDING_KINDS = (
    "linear_1",
    "linear_2",
    "linear_gelu",
    "linear_gelu_glu",
    "cnn_linear",
    "cnn_gelu_2",
    "cnn_maxpool_2",
)
# smallest patch each kind can consume (valid kernel-3 convs, stride-1 pooling)
MIN_COVER = {
    "linear_1": 1,
    "linear_2": 1,
    "linear_gelu": 1,
    "linear_gelu_glu": 1,
    "cnn_linear": 3,
    "cnn_gelu_2": 5,
    "cnn_maxpool_2": 9,
}

FREQUENCIES = ("h", "15min", "10min")


def n_time_features(freq: str) -> int:
    if freq == "h":
        return 4
    if freq in ("15min", "10min"):
        return 5
    raise ConfigError("freq", f"unsupported frequency {freq!r}")


@dataclass(frozen=True)
class PatchExtractorSpec:
    cover: int
    stride: int
    dilation: int = 1

    @property
    def extent(self) -> int:
        return (self.cover - 1) * self.dilation + 1

    def validate(self, lookback: int) -> None:
        for name in ("cover", "stride", "dilation"):
            if getattr(self, name) < 1:
                raise ConfigError(f"extractors.{name}", "must be >= 1")
        if self.extent > lookback:
            raise ConfigError(
                "extractors",
                f"geometry error: extent {self.extent} of {self} exceeds lookback {lookback}",
            )


def default_extractors(covers, lookback: int) -> list[PatchExtractorSpec]:
    """Fill in stride (cover // 2) and dilation (1 for the finest cover, rising to 3
    for the coarsest, clamped so the patch still fits into the lookback)."""
    covers = sorted(covers)
    k = len(covers)
    specs = []
    for i, cover in enumerate(covers):
        dilation = 1 if k == 1 else 1 + int(2 * i / (k - 1) + 0.5)
        while dilation > 1 and (cover - 1) * dilation + 1 > lookback:
            dilation -= 1
        specs.append(PatchExtractorSpec(cover, max(cover // 2, 1), dilation))
    return specs


@dataclass(frozen=True)
class EmbeddingStrategy:
    kind: str = "linear_1"
    e_f: int = 16
    e_t: int = 8
    cnn_channels: int = 8


@dataclass(frozen=True)
class TimeEmbeddingMethod:
    use_timeF: bool = True
    use_tempEmb: bool = False
    use_posEmb: bool = False

    @property
    def any(self) -> bool:
        return self.use_timeF or self.use_tempEmb or self.use_posEmb


@dataclass(frozen=True)
class MemoryConfig:
    N: int = 1
    use_attention: bool = False
    heads: int = 4
    use_glu: bool = True
    joint_feature_mix: bool = False
    dropout: float = 0.25
    attention_normalizer: str = "entmax15"


@dataclass(frozen=True)
class ProjectionConfig:
    R: int = 0
    hidden: int | None = None


@dataclass(frozen=True)
class ModelConfig:
    dataset: str = "ETTh1"
    lookback: int = 96
    horizon: int = 96
    n_features: int = 7
    freq: str = "h"
    extractors: tuple[PatchExtractorSpec, ...] = (PatchExtractorSpec(16, 8, 1),)
    embedding: EmbeddingStrategy = EmbeddingStrategy()
    time_method: TimeEmbeddingMethod = TimeEmbeddingMethod()
    memory: MemoryConfig = MemoryConfig()
    projection: ProjectionConfig = ProjectionConfig()
    instance_norm: bool = True
    seed: int = 0

    @property
    def embed_dim(self) -> int:
        e = self.embedding
        return e.e_f + e.e_t if self.time_method.any else e.e_f

    @property
    def n_time_features(self) -> int:
        return n_time_features(self.freq)

    def validate(self, strict_domains: bool = False) -> None:
        """Raise ConfigError naming the first offending field.

        ``strict_domains`` additionally restricts values to the hyperparameter
        grid used by random search; the model itself accepts any positive size.
        """
        if self.lookback < 1:
            raise ConfigError("lookback", "must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon", "must be >= 1")
        if self.n_features < 1:
            raise ConfigError("n_features", "must be >= 1")
        n_time_features(self.freq)
        if not 1 <= len(self.extractors) <= MAX_EXTRACTORS:
            raise ConfigError("extractors", f"need 1..{MAX_EXTRACTORS} extractors")
        emb = self.embedding
        if emb.kind not in EMBEDDING_KINDS:
            raise ConfigError("embedding.kind", f"unknown kind {emb.kind!r}")
        for spec in self.extractors:
            spec.validate(self.lookback)
            if spec.cover < MIN_COVER[emb.kind]:
                raise ConfigError(
                    "embedding.kind",
                    f"{emb.kind} needs patches of >= {MIN_COVER[emb.kind]} steps, got cover {spec.cover}",
                )
        if emb.e_f < 1 or emb.e_t < 1 or emb.cnn_channels < 1:
            raise ConfigError("embedding", "sizes must be >= 1")
        mem = self.memory
        if not 0 <= mem.N <= 10:
            raise ConfigError("memory.N", "must be in 0..10")
        if not 0.0 <= mem.dropout < 1.0:
            raise ConfigError("memory.dropout", "must be in [0, 1)")
        if mem.attention_normalizer not in ("entmax15", "softmax"):
            raise ConfigError("memory.attention_normalizer", "entmax15 or softmax")
        if mem.use_attention and (mem.heads < 1 or self.embed_dim % mem.heads):
            raise ConfigError(
                "memory.heads", f"{mem.heads} heads do not divide model width {self.embed_dim}"
            )
        if not 0 <= self.projection.R <= 4:
            raise ConfigError("projection.R", "must be in 0..4")
        if self.projection.hidden is not None and self.projection.hidden < 1:
            raise ConfigError("projection.hidden", "must be >= 1")
        if strict_domains:
            checks = [
                ("embedding.e_f", emb.e_f, FEATURE_EMBED_SIZES),
                ("embedding.e_t", emb.e_t, TIME_EMBED_SIZES),
                ("memory.N", mem.N, STACK_DEPTHS),
                ("memory.heads", mem.heads, HEADS),
                ("memory.dropout", mem.dropout, DROPOUTS),
                ("projection.R", self.projection.R, LSTM_DEPTHS),
            ]
            checks += [("extractors.cover", s.cover, COVER_SIZES) for s in self.extractors]
            for name, value, domain in checks:
                if value not in domain:
                    raise ConfigError(name, f"{value!r} not in {domain}")


@dataclass(frozen=True)
class TrainConfig:
    delta: float = 1.0
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    es_patience: int = 3
    es_min_rel_improve: float = 0.01
    lr_patience: int = 1
    lr_factor: float = 0.5
    grad_clip: float | None = None
    eval_batch_size: int = 256

    def validate(self) -> None:
        if not self.delta > 0:
            raise ConfigError("train.delta", "must be > 0")
        if self.lr < 0:
            raise ConfigError("train.lr", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("train.max_epochs", "must be >= 1")
        if not 0 < self.lr_factor < 1:
            raise ConfigError("train.lr_factor", "must be in (0, 1)")


@dataclass(frozen=True)
class DataConfig:
    path: str = "data/ETTh1.csv"
    name: str = "ETTh1"
    exclude_channels: tuple[str, ...] = ()
    split: tuple[int, int, int] | None = None  # window counts; registry when None
    max_rows: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()


# -- (de)serialization ---------------------------------------------------------

_NESTED = {
    ModelConfig: {
        "embedding": EmbeddingStrategy,
        "time_method": TimeEmbeddingMethod,
        "memory": MemoryConfig,
        "projection": ProjectionConfig,
    },
    ExperimentConfig: {"data": DataConfig, "model": ModelConfig, "train": TrainConfig},
}


def to_dict(cfg) -> dict[str, Any]:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [conv(x) for x in v]
        return v

    return conv(cfg)


def from_dict(cls, raw: dict[str, Any] | None, prefix: str = ""):
    raw = dict(raw or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(prefix + key, "unknown key")
    kwargs = {}
    for name, value in raw.items():
        sub = _NESTED.get(cls, {}).get(name)
        if sub is not None:
            kwargs[name] = from_dict(sub, value, prefix + name + ".")
        elif cls is ModelConfig and name == "extractors":
            kwargs[name] = _parse_extractors(value, raw.get("lookback", 96))
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(prefix.rstrip(".") or cls.__name__, str(exc)) from exc


def _parse_extractors(value, lookback: int) -> tuple[PatchExtractorSpec, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigError("model.extractors", "expected a non-empty list")
    # bare cover sizes get the default stride/dilation schedule
    if all(isinstance(v, int) for v in value):
        return tuple(default_extractors(value, lookback))
    specs = []
    for item in value:
        if not isinstance(item, dict) or "cover" not in item:
            raise ConfigError("model.extractors", f"bad extractor record {item!r}")
        cover = item["cover"]
        specs.append(
            PatchExtractorSpec(cover, item.get("stride", max(cover // 2, 1)), item.get("dilation", 1))
        )
    return tuple(specs)


def config_hash(cfg) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    cfg = from_dict(ExperimentConfig, raw)
    cfg.validate()
    return cfg


def dump_config(cfg, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(to_dict(cfg), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def replace(cfg, **changes):
    return dataclasses.replace(cfg, **changes)


__all__ = [
    "ConfigError",
    "PatchExtractorSpec",
    "EmbeddingStrategy",
    "TimeEmbeddingMethod",
    "MemoryConfig",
    "ProjectionConfig",
    "ModelConfig",
    "TrainConfig",
    "DataConfig",
    "ExperimentConfig",
    "default_extractors",
    "load_config",
    "dump_config",
    "config_hash",
    "to_dict",
    "from_dict",
]
