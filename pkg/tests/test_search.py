import pytest

from repnet import config as C
from repnet.config import ModelConfig, PatchExtractorSpec
from repnet.search import SearchSpace, random_search
from repnet.training import RunReport

BASE = ModelConfig(lookback=96, horizon=96, n_features=7)


def test_samples_are_reproducible():
    space = SearchSpace()
    assert space.samples(25, 42, BASE) == space.samples(25, 42, BASE)
    assert space.samples(25, 42, BASE) != space.samples(25, 43, BASE)


def test_samples_lie_in_grid():
    for cfg in SearchSpace().samples(200, 0, BASE):
        cfg.validate(strict_domains=True)
        assert 1 <= len(cfg.extractors) <= 5
        assert len({s.cover for s in cfg.extractors}) == len(cfg.extractors)
        assert all(s.cover >= C.MIN_COVER[cfg.embedding.kind] for s in cfg.extractors)
        assert cfg.embedding.kind in C.EMBEDDING_KINDS
        if cfg.memory.use_attention:
            assert cfg.embed_dim % cfg.memory.heads == 0
        if cfg.memory.joint_feature_mix:
            assert cfg.n_features * cfg.embed_dim <= 2048
        assert (cfg.lookback, cfg.horizon, cfg.n_features) == (96, 96, 7)


def test_budget_one_returns_that_config():
    seen = []

    def train_fn(cfg):
        seen.append(cfg)
        return RunReport(best_val_loss=1.0)

    ranked = random_search(SearchSpace(), 1, 5, BASE, train_fn)
    assert len(ranked) == 1 and ranked[0][0] == seen[0] == SearchSpace().samples(1, 5, BASE)[0]


def test_ranking_by_validation_loss():
    losses = iter([0.5, 0.2, 0.9, 0.1])
    ranked = random_search(SearchSpace(), 4, 1, BASE, lambda cfg: RunReport(best_val_loss=next(losses)))
    assert [r.best_val_loss for _, r in ranked] == [0.1, 0.2, 0.5, 0.9]


def test_budget_must_be_positive():
    with pytest.raises(ValueError):
        SearchSpace().samples(0, 0, BASE)


def test_short_lookback_filters_covers():
    base = ModelConfig(lookback=24, horizon=8, n_features=2, extractors=(PatchExtractorSpec(4, 2),))
    for cfg in SearchSpace().samples(50, 3, base):
        assert all(s.extent <= 24 for s in cfg.extractors)
