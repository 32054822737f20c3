import os
import re
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch

from repnet.config import (
    EmbeddingStrategy,
    MemoryConfig,
    ModelConfig,
    PatchExtractorSpec,
    ProjectionConfig,
    TimeEmbeddingMethod,
)

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = Path(os.environ.get("REPNET_DATA_DIR", ROOT / "data"))


def micro_config(**overrides) -> ModelConfig:
    """T=16, H=4, F=2, K=2 extractors, e_f=4, e_t=8, N=1, R=1."""
    base = dict(
        dataset="micro",
        lookback=16,
        horizon=4,
        n_features=2,
        freq="h",
        extractors=(PatchExtractorSpec(4, 2, 1), PatchExtractorSpec(3, 3, 2)),
        embedding=EmbeddingStrategy("linear_1", e_f=4, e_t=8),
        time_method=TimeEmbeddingMethod(True, True, True),
        memory=MemoryConfig(N=1, use_attention=True, heads=4, dropout=0.0),
        projection=ProjectionConfig(R=1, hidden=5),
        instance_norm=True,
        seed=0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def hourly_marks(batch: int, length: int, start: str = "2016-07-01", freq: str = "h") -> torch.Tensor:
    from repnet.data import extract_time_features

    step = {"h": "1h", "15min": "15min", "10min": "10min"}[freq]
    stamps = pd.date_range(start, periods=length + batch, freq=step)
    feats = extract_time_features(stamps, freq)
    return torch.tensor(np.stack([feats[i : i + length] for i in range(batch)]), dtype=torch.float32)


def write_series_csv(path: Path, rows: int, channels: int, freq: str = "1h", seed: int = 0,
                     kind: str = "sine") -> Path:
    rng = np.random.default_rng(seed)
    stamps = pd.date_range("2016-07-01", periods=rows, freq=freq)
    t = np.arange(rows)
    cols = {"date": stamps.strftime("%Y-%m-%d %H:%M:%S")}
    for c in range(channels):
        if kind == "sine":
            cols[f"c{c}"] = np.sin(2 * np.pi * t / 24 + c) + 0.05 * rng.standard_normal(rows)
        else:
            cols[f"c{c}"] = rng.standard_normal(rows)
    pd.DataFrame(cols).to_csv(path, index=False)
    return path


@pytest.fixture
def micro_cfg():
    return micro_config()


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE_LINES: dict[str, str] = {}


def record_criterion(key: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {key}: {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)


def _criterion_order(key: str):
    m = re.match(r"C(\d+)(\w*)", key)
    return (int(m.group(1)), m.group(2), key) if m else (10**6, "", key)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=_criterion_order):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
