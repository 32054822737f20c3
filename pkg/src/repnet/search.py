"""Random search over the REP-Net hyperparameter grid."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Callable

from . import config as C
from .config import (
    EmbeddingStrategy,
    MemoryConfig,
    ModelConfig,
    ProjectionConfig,
    TimeEmbeddingMethod,
    default_extractors,
)
from .training import RunReport

TIME_METHODS = tuple(
    TimeEmbeddingMethod(a, b, c) for a in (False, True) for b in (False, True) for c in (False, True)
)


@dataclass(frozen=True)
class SearchSpace:
    heads: tuple[int, ...] = C.HEADS
    N: tuple[int, ...] = C.STACK_DEPTHS
    e_f: tuple[int, ...] = C.FEATURE_EMBED_SIZES
    e_t: tuple[int, ...] = C.TIME_EMBED_SIZES
    K: tuple[int, ...] = (1, 2, 3, 4, 5)
    covers: tuple[int, ...] = C.COVER_SIZES
    time_methods: tuple[TimeEmbeddingMethod, ...] = TIME_METHODS
    kinds: tuple[str, ...] = C.EMBEDDING_KINDS
    dropout: tuple[float, ...] = C.DROPOUTS
    attention: tuple[bool, ...] = (False, True)
    glu: tuple[bool, ...] = (False, True)
    R: tuple[int, ...] = C.LSTM_DEPTHS
    joint_feature_mix: tuple[bool, ...] = (False, True)
    # joint feature mixing is a dense (F*E)^2 map; skip it beyond this width
    max_joint_width: int = 2048

    def sample(self, rng: random.Random, base: ModelConfig) -> ModelConfig:
        """Draw one config; dataset, lookback, horizon, features and seed come from ``base``."""
        kind = rng.choice(self.kinds)
        covers = [c for c in self.covers if C.MIN_COVER[kind] <= c <= base.lookback]
        k = min(rng.choice(self.K), len(covers))
        method = rng.choice(self.time_methods)
        emb = EmbeddingStrategy(kind, rng.choice(self.e_f), rng.choice(self.e_t), base.embedding.cnn_channels)
        width = emb.e_f + emb.e_t if method.any else emb.e_f
        heads = [h for h in self.heads if width % h == 0] or [1]
        joint = rng.choice(self.joint_feature_mix) and base.n_features * width <= self.max_joint_width
        cfg = replace(
            base,
            extractors=tuple(default_extractors(rng.sample(covers, k), base.lookback)),
            embedding=emb,
            time_method=method,
            memory=MemoryConfig(
                N=rng.choice(self.N),
                use_attention=rng.choice(self.attention),
                heads=rng.choice(heads),
                use_glu=rng.choice(self.glu),
                joint_feature_mix=joint,
                dropout=rng.choice(self.dropout),
                attention_normalizer=base.memory.attention_normalizer,
            ),
            projection=ProjectionConfig(R=rng.choice(self.R), hidden=base.projection.hidden),
        )
        cfg.validate()
        return cfg

    def samples(self, budget: int, seed: int, base: ModelConfig) -> list[ModelConfig]:
        if budget < 1:
            raise ValueError("budget must be >= 1")
        rng = random.Random(seed)
        return [self.sample(rng, base) for _ in range(budget)]


def random_search(
    space: SearchSpace,
    budget: int,
    seed: int,
    base: ModelConfig,
    train_fn: Callable[[ModelConfig], RunReport],
) -> list[tuple[ModelConfig, RunReport]]:
    """Train ``budget`` sampled configs and rank them by best validation loss."""
    results = [(cfg, train_fn(cfg)) for cfg in space.samples(budget, seed, base)]
    return sorted(results, key=lambda pair: pair[1].best_val_loss)
