"""Ablation analytics: percent MSE deltas between the best run with and without
an architectural factor, paired t-tests on per-window errors, and the
three-band heatmap/CSV emitters."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .training import RunReport

log = logging.getLogger(__name__)


def ablation_delta(mse_without: float, mse_with: float) -> float:
    """Percent MSE change from adding a factor; positive means it helped."""
    if not (mse_without > 0 and mse_with > 0):
        raise ValueError(f"MSE values must be positive, got {mse_without}, {mse_with}")
    return 100.0 * (mse_without - mse_with) / mse_without


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_value: float
    n: int
    degenerate: bool = False


def paired_ttest(errors_a: Sequence[float], errors_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on ``a - b``.

    Zero-variance differences have no t distribution; they map to p=1 when the
    mean difference is zero and p=0 otherwise (t = 0 / +-inf).
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"need two equal-length 1-d samples, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("need at least two paired observations")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    # spread at the rounding level of the differences counts as zero
    if not sd > 1e-12 * np.abs(d).max():
        if mean == 0:
            log.info("paired t-test: identical samples, p=1 sentinel")
            return TTestResult(0.0, 1.0, n, degenerate=True)
        log.info("paired t-test: constant nonzero difference, p=0 sentinel")
        return TTestResult(math.copysign(math.inf, mean), 0.0, n, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), df=n - 1)
    return TTestResult(float(t), float(min(max(p, 0.0), 1.0)), n)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def band(pct_delta: float) -> str:
    """Colour band: green above +1 %, red below -1 %, yellow in between."""
    if pct_delta > 1.0:
        return "green"
    if pct_delta < -1.0:
        return "red"
    return "yellow"


BAND_COLOURS = {"green": "#3F8331", "yellow": "#EBE8A2", "red": "#E36464"}


@dataclass(frozen=True)
class AblationCell:
    dataset: str
    horizon: int
    factor: str
    pct_delta: float
    p_value: float
    stars: str
    mse_with: float
    mse_without: float

    @property
    def band(self) -> str:
        return band(self.pct_delta)


def _time_emb(c):
    tm = c["model"]["time_method"]
    return tm["use_timeF"] or tm["use_tempEmb"] or tm["use_posEmb"]


# factor name -> (has factor, lacks factor) predicates on a run's config dict
FACTORS: dict[str, tuple[Callable[[dict], bool], Callable[[dict], bool]]] = {
    "Attention": (lambda c: c["model"]["memory"]["N"] > 0 and c["model"]["memory"]["use_attention"],
                  lambda c: c["model"]["memory"]["N"] > 0 and not c["model"]["memory"]["use_attention"]),
    "Time Embedding": (_time_emb, lambda c: not _time_emb(c)),
    "GLU": (lambda c: c["model"]["memory"]["N"] > 0 and c["model"]["memory"]["use_glu"],
            lambda c: c["model"]["memory"]["N"] > 0 and not c["model"]["memory"]["use_glu"]),
    "LSTM": (lambda c: c["model"]["projection"]["R"] > 0, lambda c: c["model"]["projection"]["R"] == 0),
    "Multi Patch": (lambda c: len(c["model"]["extractors"]) > 1, lambda c: len(c["model"]["extractors"]) == 1),
    "Memory": (lambda c: c["model"]["memory"]["N"] == 1, lambda c: c["model"]["memory"]["N"] == 0),
    "Multi Memory": (lambda c: c["model"]["memory"]["N"] > 1, lambda c: c["model"]["memory"]["N"] == 1),
    "CNN Embedding": (lambda c: c["model"]["embedding"]["kind"].startswith("cnn"),
                      lambda c: not c["model"]["embedding"]["kind"].startswith("cnn")),
}


def _pick(reports: list[RunReport], mean_of_k: int) -> tuple[float, np.ndarray]:
    """Test MSE and per-window errors of the best-k runs by validation loss."""
    ranked = sorted(reports, key=lambda r: r.best_val_loss)[:mean_of_k]
    mse_value = float(np.mean([r.test_mse for r in ranked]))
    windows = np.mean([np.asarray(r.per_window_mse) for r in ranked], axis=0)
    return mse_value, windows


def ablation_cells(reports: Iterable[RunReport], mean_of_k: int = 1) -> list[AblationCell]:
    """One cell per (dataset, horizon, factor) with runs on both sides."""
    groups: dict[tuple[str, int], list[RunReport]] = {}
    for r in reports:
        if r.test_mse is not None:
            groups.setdefault((r.dataset, r.horizon), []).append(r)
    cells = []
    for (dataset, horizon), runs in sorted(groups.items()):
        for factor, (has, lacks) in FACTORS.items():
            with_f = [r for r in runs if has(r.config)]
            without = [r for r in runs if lacks(r.config)]
            if not with_f or not without:
                continue
            mse_w, err_w = _pick(with_f, mean_of_k)
            mse_wo, err_wo = _pick(without, mean_of_k)
            test = paired_ttest(err_wo, err_w)
            cells.append(AblationCell(dataset, horizon, factor, ablation_delta(mse_wo, mse_w),
                                      test.p_value, significance_stars(test.p_value), mse_w, mse_wo))
    return cells


CELL_FIELDS = ["dataset", "horizon", "factor", "pct_delta", "p_value", "stars", "band", "mse_with", "mse_without"]


def write_cells_csv(cells: Sequence[AblationCell], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CELL_FIELDS)
        w.writeheader()
        for c in cells:
            w.writerow({**asdict(c), "band": c.band})


def emit_heatmap(cells: Sequence[AblationCell], path: str | Path) -> tuple[Path, Path]:
    """Render the (task x factor) banded grid as PNG with its CSV twin."""
    if not cells:
        raise ValueError("no ablation cells to plot")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import to_rgb

    path = Path(path)
    csv_path = path.with_suffix(".csv")
    write_cells_csv(cells, csv_path)

    tasks = sorted({(c.dataset, c.horizon) for c in cells})
    factors = [f for f in FACTORS if any(c.factor == f for c in cells)]
    lookup = {(c.dataset, c.horizon, c.factor): c for c in cells}
    rgb = np.ones((len(tasks), len(factors), 3))
    fig, ax = plt.subplots(figsize=(1.3 * len(factors) + 2, 0.45 * len(tasks) + 1.5))
    for i, (ds, h) in enumerate(tasks):
        for j, f in enumerate(factors):
            c = lookup.get((ds, h, f))
            if c is None:
                continue
            rgb[i, j] = to_rgb(BAND_COLOURS[c.band])
            ax.text(j, i, f"{c.pct_delta:+.1f}{c.stars}", ha="center", va="center", fontsize=8)
    ax.imshow(rgb, aspect="auto")
    ax.set_xticks(range(len(factors)), factors, rotation=30, ha="right")
    ax.set_yticks(range(len(tasks)), [f"{d} {h}" for d, h in tasks])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path, csv_path


REPORT_FIELDS = ["dataset", "horizon", "config_hash", "test_mse", "test_mae", "best_val_loss", "best_epoch",
                 "n_params", "n_params_without_tables", "seconds_per_iter", "peak_memory_bytes", "instance_norm",
                 "stop_reason"]


def emit_report(reports: Sequence[RunReport], path: str | Path, fmt: str = "csv") -> Path:
    """Summary table of run reports as CSV or Markdown."""
    if not reports:
        raise ValueError("no reports to summarise")
    path = Path(path)
    rows = [{k: getattr(r, k) for k in REPORT_FIELDS} for r in reports]
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
            w.writeheader()
            w.writerows(rows)
    elif fmt == "md":
        lines = ["| " + " | ".join(REPORT_FIELDS) + " |", "|" + "---|" * len(REPORT_FIELDS)]
        lines += ["| " + " | ".join(str(row[k]) for k in REPORT_FIELDS) + " |" for row in rows]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path
