"""Ingestion, splits, scaling, window sampling, synthetic generators."""

import os

import numpy as np
import pytest

from pyrafuse.data import (RawDataset, Scaler, WindowSampler,
                           chronological_split, load_csv, synth_multiperiodic,
                           write_csv)
from pyrafuse.errors import DataError

import oracles

ETT_DIR = os.environ.get("PYRAFUSE_DATA_DIR", "data")
ETTH1 = os.path.join(ETT_DIR, "ETTh1.csv")


def _write(tmp_path, text, name="toy.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_toy_csv(self, tmp_path):
        path = _write(tmp_path, "date,a,b\n1,0.5,1.5\n2,0.25,2.5\n3,0.125,3.5\n")
        ds = load_csv(path)
        assert ds.values.shape == (3, 2)
        assert ds.channel_names == ["a", "b"]
        np.testing.assert_allclose(ds.values[:, 0], [0.5, 0.25, 0.125])

    @pytest.mark.skipif(not os.path.exists(ETTH1),
                        reason=f"ETTh1.csv not found under {ETT_DIR!r} "
                               "(set PYRAFUSE_DATA_DIR)")
    def test_etth1_dimensions(self):
        ds = load_csv(ETTH1)
        assert ds.values.shape == (17420, 7)

    def test_blank_cell_names_coordinates(self, tmp_path):
        path = _write(tmp_path, "date,a,b\n1,0.5,1.5\n2,,2.5\n")
        with pytest.raises(DataError, match=r"row 3, column 'a'"):
            load_csv(path)

    def test_unparseable_cell(self, tmp_path):
        path = _write(tmp_path, "date,a\n1,0.5\n2,oops\n")
        with pytest.raises(DataError, match="oops"):
            load_csv(path)

    def test_non_monotone_timestamps(self, tmp_path):
        path = _write(tmp_path, "date,a\n5,0.5\n3,1.5\n")
        with pytest.raises(DataError, match="increasing"):
            load_csv(path)

    def test_datetime_timestamps(self, tmp_path):
        path = _write(tmp_path,
                      "date,a\n2016-07-01 00:00:00,1.0\n2016-07-01 01:00:00,2.0\n")
        assert load_csv(path).num_rows == 2

    def test_missing_file(self):
        with pytest.raises(DataError, match="cannot open"):
            load_csv("/nonexistent/nope.csv")

    def test_ragged_row(self, tmp_path):
        path = _write(tmp_path, "date,a,b\n1,0.5,1.5\n2,0.5\n")
        with pytest.raises(DataError, match="row 3"):
            load_csv(path)


def _synthetic(rows, channels=2, seed=0):
    rng = np.random.default_rng(seed)
    return RawDataset(name="mem",
                      timestamps=[str(i) for i in range(rows)],
                      values=rng.standard_normal((rows, channels)),
                      channel_names=[f"c{i}" for i in range(channels)])


class TestSplits:
    def test_ett_hourly_ranges(self):
        ds = _synthetic(17420)
        split = chronological_split(ds, "ett_hourly", 96, 96)
        assert split.train == (0, 8640)
        assert split.val == (8640, 11520)
        assert split.test == (11520, 14400)

    def test_ratio_split(self):
        split = chronological_split(_synthetic(1000), "ratio_702010", 96, 96)
        assert split.train == (0, 700)
        assert split.val == (700, 800)
        assert split.test == (800, 1000)

    def test_short_dataset_rejected(self):
        with pytest.raises(DataError):
            chronological_split(_synthetic(100), "ratio_702010", 96, 96)

    def test_unknown_policy(self):
        with pytest.raises(DataError, match="policy"):
            chronological_split(_synthetic(1000), "halves", 8, 8)


class TestScaler:
    def test_train_split_standardized(self):
        ds = _synthetic(2000, seed=1)
        split = chronological_split(ds, "ratio_702010", 32, 16)
        scaler = Scaler.fit(ds.values[split.train[0]:split.train[1]])
        z = scaler.transform(ds.values[split.train[0]:split.train[1]])
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-3)

    def test_constant_channel_safe(self):
        values = np.ones((50, 1))
        scaler = Scaler.fit(values)
        np.testing.assert_array_equal(scaler.transform(values), np.zeros((50, 1)))


class TestWindowSampler:
    def _setup(self, rows=300, L_in=24, L_pred=12, seed=2):
        ds = _synthetic(rows, seed=seed)
        split = chronological_split(ds, "ratio_702010", L_in, L_pred)
        scaler = Scaler.fit(ds.values[split.train[0]:split.train[1]])
        return ds, split, scaler

    def test_window_counts(self):
        ds, split, scaler = self._setup()
        test_len = split.test[1] - split.test[0]
        sampler = WindowSampler(ds, split, "test", 24, 12, scaler)
        assert sampler.num_windows == test_len - 12 + 1
        train_len = split.train[1]
        train_sampler = WindowSampler(ds, split, "train", 24, 12, scaler)
        assert train_sampler.num_windows == train_len - 24 - 12 + 1

    def test_same_seed_same_order(self):
        ds, split, scaler = self._setup()
        sampler = WindowSampler(ds, split, "train", 24, 12, scaler)
        a = [b.inputs.copy() for b in sampler.batches(16, shuffle_seed=7)]
        b = [b.inputs.copy() for b in sampler.batches(16, shuffle_seed=7)]
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)
        c = next(iter(sampler.batches(16, shuffle_seed=8)))
        assert not np.array_equal(a[0], c.inputs)

    def test_target_is_input_suffix_of_shifted_window(self):
        ds, split, scaler = self._setup()
        sampler = WindowSampler(ds, split, "train", 24, 12, scaler)
        x0, y0 = sampler.window(0)
        x24, _ = sampler.window(24)  # starts L_in later
        np.testing.assert_array_equal(y0, x24[:12])

    def test_no_leakage(self):
        ds, split, scaler = self._setup()
        train = WindowSampler(ds, split, "train", 24, 12, scaler)
        test = WindowSampler(ds, split, "test", 24, 12, scaler)
        max_train_end = train.starts.max() + 24 + 12
        min_test_target = test.starts.min() + 24
        assert max_train_end <= split.train[1]
        assert min_test_target >= split.test[0]

    def test_val_lookback_prefix(self):
        ds, split, scaler = self._setup()
        val = WindowSampler(ds, split, "val", 24, 12, scaler)
        assert val.starts.min() == split.val[0] - 24

    def test_batches_deterministic_for_eval(self):
        ds, split, scaler = self._setup()
        sampler = WindowSampler(ds, split, "val", 24, 12, scaler)
        orders = [np.concatenate([b.inputs[:, 0, 0] for b in sampler.batches(8)])
                  for _ in range(2)]
        np.testing.assert_array_equal(orders[0], orders[1])


class TestSynth:
    def test_noiseless_single_sine_bounded(self):
        ds = synth_multiperiodic(500, 1, [24.0], [1.0], 0.0, seed=3)
        assert ds.values.min() >= -1.0 - 1e-9
        assert ds.values.max() <= 1.0 + 1e-9

    def test_same_seed_identical(self):
        a = synth_multiperiodic(200, 3, [24.0, 96.0], [1.0, 0.5], 0.1, seed=4)
        b = synth_multiperiodic(200, 3, [24.0, 96.0], [1.0, 0.5], 0.1, seed=4)
        np.testing.assert_array_equal(a.values, b.values)

    def test_spectrum_peaks_at_expected_bin(self):
        T, period = 192, 24
        ds = synth_multiperiodic(T, 1, [float(period)], [1.0], 0.0, seed=5)
        bins = oracles.dft_naive(ds.values[:, 0])
        assert np.argmax(np.abs(bins)) == T // period

    def test_mismatched_amplitudes_rejected(self):
        with pytest.raises(DataError, match="amplitudes"):
            synth_multiperiodic(100, 1, [24.0], [1.0, 2.0], 0.0, seed=6)

    def test_csv_roundtrip(self, tmp_path):
        ds = synth_multiperiodic(50, 2, [10.0], [1.0], 0.0, seed=7)
        path = tmp_path / "synth.csv"
        write_csv(ds, path)
        back = load_csv(path)
        np.testing.assert_allclose(back.values, ds.values, rtol=0, atol=0)
        assert back.channel_names == ds.channel_names


def test_pipeline_deterministic_end_to_end(tmp_path):
    ds = synth_multiperiodic(400, 2, [12.0], [1.0], 0.05, seed=8)
    path = tmp_path / "d.csv"
    write_csv(ds, path)
    outs = []
    for _ in range(2):
        loaded = load_csv(path)
        split = chronological_split(loaded, "ratio_702010", 16, 8)
        scaler = Scaler.fit(loaded.values[split.train[0]:split.train[1]])
        sampler = WindowSampler(loaded, split, "train", 16, 8, scaler)
        outs.append(np.concatenate(
            [b.inputs.ravel() for b in sampler.batches(32, shuffle_seed=5)]))
    np.testing.assert_array_equal(outs[0], outs[1])
