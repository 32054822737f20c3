"""REP-Net: Representation, Enrichment (memory) and Projection for long-horizon
multivariate time-series forecasting."""

from .config import (
    ConfigError,
    EmbeddingStrategy,
    ExperimentConfig,
    MemoryConfig,
    ModelConfig,
    PatchExtractorSpec,
    ProjectionConfig,
    TimeEmbeddingMethod,
    TrainConfig,
)
from .model import REPNet, build_model, count_parameters

__version__ = "0.1.0"
