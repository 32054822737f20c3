import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repnet.config import ConfigError, DataConfig
from repnet.data import (
    REGISTRY,
    BoundsError,
    ParseError,
    SchemaError,
    SplitSpec,
    TimeSeriesDataset,
    apply_scaler,
    extract_time_features,
    fit_scaler,
    invert_scaler,
    load_dataset,
    make_windows,
    prepare,
    split_dataset,
    time_feature_codes,
)

from conftest import write_series_csv


def _dataset(length, channels=1):
    stamps = pd.date_range("2020-01-01", periods=length, freq="1h").to_numpy()
    values = np.arange(length * channels, dtype=np.float64).reshape(length, channels)
    return TimeSeriesDataset("synthetic", stamps, values, "h")


# -- ingestion -----------------------------------------------------------------


def test_load_ten_row_single_channel(tmp_path):
    path = write_series_csv(tmp_path / "s.csv", rows=10, channels=1)
    ds = load_dataset(path, "synthetic")
    assert ds.values.shape == (10, 1)
    assert ds.freq == "h"


def test_load_ett_shaped_file_keeps_every_row(tmp_path):
    path = write_series_csv(tmp_path / "ETTh1.csv", rows=17420, channels=7)
    ds = load_dataset(path, "ETTh1")
    assert ds.length == 17420 and ds.n_channels == 7


def test_gap_in_timestamps_is_schema_error(tmp_path):
    path = write_series_csv(tmp_path / "s.csv", rows=10, channels=1)
    df = pd.read_csv(path).drop(index=4)
    df.to_csv(path, index=False)
    with pytest.raises(SchemaError):
        load_dataset(path, "synthetic")


def test_unparseable_cell_reports_line(tmp_path):
    path = write_series_csv(tmp_path / "s.csv", rows=10, channels=2)
    df = pd.read_csv(path)
    df["c1"] = df["c1"].astype(object)
    df.loc[5, "c1"] = "abc"
    df.to_csv(path, index=False)
    with pytest.raises(ParseError) as exc:
        load_dataset(path, "synthetic")
    assert exc.value.line == 7  # header is line 1, row 5 is line 7


def test_missing_value_is_parse_error(tmp_path):
    path = write_series_csv(tmp_path / "s.csv", rows=10, channels=2)
    lines = path.read_text().splitlines()
    parts = lines[3].split(",")
    parts[2] = ""
    lines[3] = ",".join(parts)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError):
        load_dataset(path, "synthetic")


def test_registry_channel_count_enforced(tmp_path):
    path = write_series_csv(tmp_path / "ETTh1.csv", rows=50, channels=5)
    with pytest.raises(SchemaError):
        load_dataset(path, "ETTh1")


def test_exclude_channels_by_name_and_index(tmp_path):
    path = write_series_csv(tmp_path / "s.csv", rows=20, channels=4)
    ds = load_dataset(path, "synthetic", exclude_channels=("c0", "-1"))
    assert ds.columns == ("c1", "c2")
    with pytest.raises(ConfigError):
        load_dataset(path, "synthetic", exclude_channels=("nope",))


def test_registry_entries():
    assert REGISTRY["ETTh1"].split == SplitSpec(8545, 2881, 2881)
    assert {k: v.channels for k, v in REGISTRY.items()} == {
        "ETTh1": 7, "ETTh2": 7, "ETTm1": 7, "ETTm2": 7, "ECL": 321, "Traffic": 862, "Weather": 21,
    }


# -- splits --------------------------------------------------------------------


def _window_count(rows: range, lookback: int) -> int:
    return len(rows) - lookback + 1


def test_ett_split_window_counts():
    ds = _dataset(17420)
    ranges = split_dataset(ds, REGISTRY["ETTh1"].split, 96)
    assert tuple(_window_count(r, 96) for r in ranges) == (8545, 2881, 2881)


def test_small_split_label_regions_disjoint():
    ds = _dataset(200)
    tr, va, te = split_dataset(ds, SplitSpec(50, 20, 20), 10)
    assert tuple(_window_count(r, 10) for r in (tr, va, te)) == (50, 20, 20)
    # brute force: rows that can appear as forecast targets in each split
    labels = [set(range(r.start + 10, r.stop)) for r in (tr, va, te)]
    assert not labels[0] & labels[1] and not labels[1] & labels[2] and not labels[0] & labels[2]
    assert max(labels[0]) < min(labels[1]) and max(labels[1]) < min(labels[2])


def test_split_overflow_is_bounds_error():
    with pytest.raises(BoundsError):
        split_dataset(_dataset(100), SplitSpec(200, 10, 10), 10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(1, 30), st.integers(1, 30), st.integers(1, 20), st.integers(0, 20))
def test_split_chronology(n_tr, n_va, n_te, lookback, slack):
    ds = _dataset(n_tr + n_va + n_te + lookback + slack)
    tr, va, te = split_dataset(ds, SplitSpec(n_tr, n_va, n_te), lookback)
    assert [_window_count(r, lookback) for r in (tr, va, te)] == [n_tr, n_va, n_te]
    # first target row of each split comes after the last row of the previous one
    assert va.start + lookback == tr.stop and te.start + lookback == va.stop


# -- scaling -------------------------------------------------------------------


def test_constant_channel_flagged():
    with pytest.warns(RuntimeWarning):
        sc = fit_scaler(np.array([[5.0], [5.0], [5.0]]))
    assert sc.flagged == (0,)
    np.testing.assert_array_equal(apply_scaler(sc, np.array([[5.0], [5.0], [5.0]])), np.zeros((3, 1)))


def test_two_point_channel():
    sc = fit_scaler(np.array([[0.0], [2.0]]))
    assert sc.mean[0] == 1.0 and sc.std[0] == 1.0
    np.testing.assert_array_equal(apply_scaler(sc, np.array([[0.0], [2.0]]))[:, 0], [-1.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 50), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_scaler_round_trip(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(rng.uniform(-100, 100), rng.uniform(0.1, 50), size=(rows, cols))
    sc = fit_scaler(x)
    assert np.abs(invert_scaler(sc, apply_scaler(sc, x)) - x).max() < 1e-6


def test_scaler_fitted_on_train_rows_only(tmp_path):
    path = write_series_csv(tmp_path / "s.csv", rows=120, channels=2, kind="noise")
    data = prepare(DataConfig(path=str(path), name="synthetic", split=(40, 20, 20)), 10, 5)
    raw = data.dataset.values
    np.testing.assert_allclose(data.scaler.mean, raw[data.ranges[0].start:data.ranges[0].stop].mean(0))


# -- calendar features ---------------------------------------------------------


def test_midnight_monday_features():
    stamps = pd.to_datetime(["2024-01-01 00:00"])  # a Monday
    f = extract_time_features(stamps, "h")[0]
    assert f[0] == -0.5 and f[1] == -0.5


def test_late_hour_feature():
    f = extract_time_features(pd.to_datetime(["2024-01-03 23:00"]), "h")[0]
    assert f[0] == 0.5


def test_identical_calendar_rows():
    f = extract_time_features(pd.to_datetime(["2024-03-05 07:00", "2024-03-05 07:00"]), "h")
    np.testing.assert_array_equal(f[0], f[1])


def test_minute_frequency_has_minute_field():
    f = extract_time_features(pd.date_range("2024-01-01", periods=8, freq="15min"), "15min")
    assert f.shape == (8, 5)
    assert f[1, 0] == pytest.approx(15 / 59 - 0.5)


def test_feature_codes_invert():
    import torch

    stamps = pd.date_range("2023-12-30", periods=200, freq="10min")
    f = torch.tensor(extract_time_features(stamps, "10min"), dtype=torch.float32)
    codes = time_feature_codes(f, "10min")
    idx = pd.DatetimeIndex(stamps)
    np.testing.assert_array_equal(codes[:, 0].numpy(), idx.minute)
    np.testing.assert_array_equal(codes[:, 1].numpy(), idx.hour)
    np.testing.assert_array_equal(codes[:, 4].numpy(), idx.dayofyear - 1)


# -- windows -------------------------------------------------------------------


def test_window_count_with_context():
    t, h = 96, 96
    values = np.arange(400, dtype=np.float64)[:, None]
    marks = np.zeros((400, 4))
    rows = range(0, 100 + t + h - 1)
    w = make_windows(values, marks, rows, t, h)
    assert len(w) == 100


def test_window_contiguity():
    values = np.arange(300, dtype=np.float64)[:, None]
    w = make_windows(values, np.zeros((300, 4)), range(10, 300), 24, 12)
    s = w[5]
    assert s.y[0, 0] == s.x[-1, 0] + 1
    assert s.x[0, 0] == 15
    x, xm, y = w.batch([5])
    np.testing.assert_array_equal(x[0].numpy(), s.x)
    np.testing.assert_array_equal(y[0].numpy(), s.y)


def test_zero_horizon_is_config_error():
    with pytest.raises(ConfigError):
        make_windows(np.zeros((50, 1)), np.zeros((50, 4)), range(50), 10, 0)


def test_iter_batches_covers_each_window_once():
    w = make_windows(np.arange(60.0)[:, None], np.zeros((60, 4)), range(60), 8, 4)
    firsts = np.concatenate([x[:, 0, 0].numpy() for x, _, _ in w.iter_batches(7, shuffle=True,
                                                                               generator=np.random.default_rng(1))])
    assert sorted(firsts.tolist()) == list(range(len(w)))
