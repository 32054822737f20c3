import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from repnet.config import DataConfig, EmbeddingStrategy, MemoryConfig, PatchExtractorSpec, ProjectionConfig, TrainConfig
from repnet.data import prepare
from repnet.model import build_model
from repnet.training import (
    PlateauState,
    RunReport,
    early_stop_step,
    evaluate,
    fit,
    huber_loss,
    mae,
    mse,
    plateau_lr_step,
)

from conftest import micro_config, write_series_csv


def scalar_huber(r, delta):
    return 0.5 * r * r if abs(r) <= delta else delta * (abs(r) - 0.5 * delta)


# -- losses --------------------------------------------------------------------


@pytest.mark.parametrize("r,expected", [(0.5, 0.125), (2.0, 1.5), (1.0, 0.5), (-2.0, 1.5)])
def test_huber_examples(r, expected):
    pred = torch.tensor([[[r]]], dtype=torch.float64)
    assert huber_loss(pred, torch.zeros_like(pred), 1.0).item() == expected


def test_huber_knee_continuity():
    for delta in (0.3, 1.0, 2.5):
        below = huber_loss(torch.tensor([delta - 1e-12], dtype=torch.float64), torch.zeros(1, dtype=torch.float64), delta)
        above = huber_loss(torch.tensor([delta + 1e-12], dtype=torch.float64), torch.zeros(1, dtype=torch.float64), delta)
        assert below.item() == pytest.approx(above.item(), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 5.0))
def test_huber_matches_scalar_reference(seed, delta):
    rng = np.random.default_rng(seed)
    r = rng.normal(0, 3, 257)
    ref = np.mean([scalar_huber(v, delta) for v in r])
    got = huber_loss(torch.tensor(r), torch.zeros(257, dtype=torch.float64), delta).item()
    assert abs(got - ref) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 5.0))
def test_huber_gradient_bounded(seed, delta):
    r = torch.tensor(np.random.default_rng(seed).normal(0, 10, 64), requires_grad=True)
    huber_loss(r, torch.zeros(64, dtype=torch.float64), delta).backward()
    # the mean divides each elementwise derivative by n
    assert (r.grad.abs() * 64 <= delta + 1e-12).all()


def test_metrics_examples():
    y = torch.randn(2, 5, 3)
    assert mse(y, y).item() == 0 and mae(y, y).item() == 0
    assert mse(y + 1, y).item() == pytest.approx(1.0) and mae(y + 1, y).item() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mse(y, y[:, :4])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mse_at_least_mae_squared(seed):
    g = torch.Generator().manual_seed(seed)
    p, t = torch.randn(3, 4, 2, generator=g, dtype=torch.float64), torch.randn(3, 4, 2, generator=g, dtype=torch.float64)
    assert mse(p, t).item() >= mae(p, t).item() ** 2 - 1e-15


def test_huber_rejects_non_finite():
    with pytest.raises(ValueError):
        huber_loss(torch.tensor([float("nan")]), torch.zeros(1))


# -- stopping and LR schedule --------------------------------------------------


def stop_epoch(history, **kw):
    """1-based epoch at which the rule first fires, or None."""
    for e in range(1, len(history) + 1):
        if early_stop_step(history[:e], **kw):
            return e
    return None


def test_early_stop_scripts():
    assert stop_epoch([1.0, 0.90, 0.80]) is None
    assert stop_epoch([1.0, 0.999, 0.998, 0.997]) == 4
    assert stop_epoch([1.0, 0.999, 0.90, 0.999, 0.998, 0.997]) == 6


def run_plateau(losses, lr=1.0, patience=1, factor=0.5):
    state, lrs = PlateauState(lr), []
    for v in losses:
        state = plateau_lr_step(state, v, patience, factor)
        lrs.append(state.lr)
    return lrs


def test_plateau_scripts():
    assert run_plateau([1.0, 0.9, 0.8, 0.7]) == [1.0] * 4
    assert run_plateau([1.0, 1.0]) == [1.0, 0.5]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30), st.integers(1, 4),
       st.sampled_from([0.1, 0.5, 0.9]))
def test_plateau_matches_torch_scheduler(losses, patience, factor):
    ours = run_plateau(losses, 1.0, patience, factor)
    opt = torch.optim.SGD([torch.zeros(1, requires_grad=True)], lr=1.0)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, mode="min", factor=factor, patience=patience - 1, threshold=0.0, eps=0.0
    )
    theirs = []
    for v in losses:
        sched.step(v)
        theirs.append(opt.param_groups[0]["lr"])
    assert ours == pytest.approx(theirs, rel=1e-12)
    assert all(a >= b for a, b in zip(ours, ours[1:]))


# -- fit / evaluate ------------------------------------------------------------


def tiny_model_config(**kw):
    base = dict(
        lookback=32, horizon=8, n_features=2,
        extractors=(PatchExtractorSpec(8, 4, 1), PatchExtractorSpec(4, 4, 2)),
        embedding=EmbeddingStrategy("linear_1", 8, 8),
        memory=MemoryConfig(N=1, dropout=0.0),
        projection=ProjectionConfig(R=0),
    )
    base.update(kw)
    return micro_config(**base)


@pytest.fixture(scope="module")
def sine_data(tmp_path_factory):
    path = write_series_csv(tmp_path_factory.mktemp("sine") / "sine.csv", rows=600, channels=2)
    return prepare(DataConfig(path=str(path), name="sine", split=(300, 120, 120)), 32, 8)


def test_sine_fit_beats_mean_baseline(sine_data):
    model = build_model(tiny_model_config())
    report = fit(model, sine_data, TrainConfig(lr=3e-3, batch_size=16, max_epochs=8))
    val_mse, _ = evaluate(model, sine_data.val)
    # predicting the (scaled) train mean, i.e. zero, everywhere
    baseline = float(np.mean([np.mean(s.y**2) for s in (sine_data.val[i] for i in range(len(sine_data.val)))]))
    assert val_mse < 0.25 * baseline
    assert report.test_mse is not None and len(report.per_window_mse) == len(sine_data.test)
    assert report.best_epoch == 1 + int(np.argmin(report.val_loss))


def test_zero_learning_rate_keeps_parameters(sine_data):
    model = build_model(tiny_model_config())
    before = {k: v.clone() for k, v in model.state_dict().items()}
    fit(model, sine_data, TrainConfig(lr=0.0, max_epochs=2))
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_seeded_fits_identical(sine_data):
    reports = [fit(build_model(tiny_model_config()), sine_data, TrainConfig(max_epochs=2)) for _ in range(2)]
    assert reports[0].val_loss == reports[1].val_loss
    assert reports[0].test_mse == reports[1].test_mse and reports[0].test_mae == reports[1].test_mae


def test_zero_model_mse_is_target_power(sine_data):
    model = build_model(tiny_model_config(instance_norm=False))
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    got, _ = evaluate(model, sine_data.test)
    _, _, y = sine_data.test.batch(np.arange(len(sine_data.test)))
    assert got == pytest.approx(float((y.double() ** 2).mean()), rel=1e-6)


def test_evaluate_batch_size_invariant(sine_data):
    model = build_model(tiny_model_config())
    ref = evaluate(model, sine_data.test, batch_size=len(sine_data.test))
    for bs in (1, 7, 64):
        got = evaluate(model, sine_data.test, batch_size=bs)
        assert got[0] == pytest.approx(ref[0], abs=1e-6) and got[1] == pytest.approx(ref[1], abs=1e-6)


def test_report_json_round_trip(tmp_path):
    rep = RunReport(config_hash="abc", dataset="x", horizon=4, val_loss=[1.0, 0.5], test_mse=0.3,
                    per_window_mse=[0.1, 0.2], config={"a": 1})
    rep.to_json(tmp_path / "r.json")
    assert RunReport.from_json(tmp_path / "r.json") == rep
    rep.write_curves(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().startswith("epoch,train_loss,val_loss,lr")
    assert math.isfinite(rep.test_mse)
