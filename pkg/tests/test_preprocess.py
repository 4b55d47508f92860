import math
from dataclasses import replace
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from billinglab import preprocess as pp
from billinglab.datagen import GeneratorConfig, generate_dataset
from billinglab.errors import ArgumentError, SchemaError


class TestEncodeCyclical:
    def test_zero_angle(self):
        assert pp.encode_cyclical(0, 24) == (0.0, 1.0)

    def test_quarter_cycle(self):
        s, c = pp.encode_cyclical(6, 24)
        assert s == pytest.approx(1.0, abs=1e-12)
        assert c == pytest.approx(0.0, abs=1e-12)

    def test_half_cycle(self):
        s, c = pp.encode_cyclical(12, 24)
        assert s == pytest.approx(0.0, abs=1e-12)
        assert c == pytest.approx(-1.0, abs=1e-12)

    def test_bad_period_rejected(self):
        with pytest.raises(ArgumentError):
            pp.encode_cyclical(1, 0)
        with pytest.raises(ArgumentError):
            pp.encode_cyclical(1, -5)

    @given(
        x=st.integers(min_value=0, max_value=60),
        period=st.sampled_from([7, 12, 24, 31, 60]),
    )
    @settings(max_examples=200, deadline=None)
    def test_unit_circle_identity(self, x, period):
        s, c = pp.encode_cyclical(x, period)
        assert abs(s * s + c * c - 1.0) < 1e-9


class TestExpandTimestamp:
    def test_new_year_midnight(self):
        out = pp.expand_timestamp(datetime(2023, 1, 1, 0, 0, 0))
        assert out["month_sin"] == pytest.approx(math.sin(2 * math.pi * 1 / 12))
        assert out["hour_sin"] == 0.0
        assert out["hour_cos"] == 1.0
        assert out["year"] == 2023.0

    def test_column_count_is_thirteen(self):
        out = pp.expand_timestamp(datetime(2024, 7, 3, 15, 30, 45))
        assert len(out) == 13
        assert sum(1 for k in out if k.endswith("_sin")) == 6
        assert sum(1 for k in out if k.endswith("_cos")) == 6

    def test_full_day_apart_shares_clock_components(self):
        a = pp.expand_timestamp(datetime(2023, 5, 10, 14, 25, 36))
        b = pp.expand_timestamp(datetime(2023, 5, 11, 14, 25, 36))
        for name in ("hour_sin", "hour_cos", "minute_sin", "minute_cos", "second_sin", "second_cos"):
            assert a[name] == pytest.approx(b[name], abs=1e-12)


class TestScaler:
    def _matrix(self, column):
        return pp.FeatureMatrix(
            values=np.array(column, dtype=float)[:, None],
            column_names=["x"],
            column_kinds=[pp.KIND_NUMERIC],
        )

    def test_basic_scaling(self):
        m = self._matrix([0.0, 5.0, 10.0])
        scaled = pp.apply_scaler(m, pp.fit_scaler(m))
        assert scaled.column("x").tolist() == [0.0, 0.5, 1.0]

    def test_constant_column_maps_to_zero(self):
        m = self._matrix([3.0, 3.0, 3.0])
        scaled = pp.apply_scaler(m, pp.fit_scaler(m))
        assert scaled.column("x").tolist() == [0.0, 0.0, 0.0]

    def test_out_of_range_values_not_clipped(self):
        train = self._matrix([0.0, 10.0])
        params = pp.fit_scaler(train)
        test = self._matrix([20.0])
        assert pp.apply_scaler(test, params).column("x")[0] == 2.0

    def test_mismatched_columns_rejected(self):
        m = self._matrix([1.0, 2.0])
        with pytest.raises(SchemaError):
            pp.apply_scaler(m, {"absent": (0.0, 1.0)})

    def test_fit_restricted_to_training_rows(self):
        m = self._matrix([0.0, 5.0, 100.0])
        params = pp.fit_scaler(m, rows=slice(0, 2))
        assert params["x"] == (0.0, 5.0)
        scaled = pp.apply_scaler(m, params)
        assert scaled.column("x")[2] == 20.0


class TestOneHot:
    def test_payment_term_two(self):
        vec = pp.one_hot(2, [1, 2, 3, 4, 5, 6], unknown_slot=False)
        assert vec.tolist() == [0, 1, 0, 0, 0, 0]

    def test_unseen_goes_to_unknown_slot(self):
        vec = pp.one_hot("surprise", ["a", "b"])
        assert vec.tolist() == [0, 0, 1]

    def test_vector_length_tracks_vocabulary(self):
        assert len(pp.one_hot("a", list("abcd"))) == 5
        assert len(pp.one_hot("a", list("abcd"), unknown_slot=False)) == 4

    def test_empty_vocabulary_rejected(self):
        with pytest.raises(ArgumentError):
            pp.one_hot("a", [])

    @given(st.sampled_from(list("abcdefgh")))
    @settings(max_examples=50, deadline=None)
    def test_exactly_one_hot(self, value):
        vec = pp.one_hot(value, list("abcd"))
        assert vec.sum() == 1.0


class TestClean:
    def _dataset(self, n=20, seed=0):
        return generate_dataset(GeneratorConfig(n_records=n, anomaly_rate=0.0, seed=seed))

    def test_zero_amount_dropped(self):
        ds = self._dataset()
        ds.records[0] = replace(ds.records[0], amount_submitted=0.0)
        assert len(pp.clean(ds)) == len(ds) - 1

    def test_negative_amount_dropped(self):
        ds = self._dataset()
        ds.records[3] = replace(ds.records[3], amount_submitted=-5.0)
        assert len(pp.clean(ds)) == len(ds) - 1

    def test_nan_amount_dropped(self):
        ds = self._dataset()
        ds.records[5] = replace(ds.records[5], amount_insured=float("nan"))
        assert len(pp.clean(ds)) == len(ds) - 1

    def test_extreme_positive_amount_retained(self):
        ds = self._dataset()
        ds.records[2] = replace(ds.records[2], amount_submitted=1e9)
        assert len(pp.clean(ds)) == len(ds)

    def test_idempotent(self):
        ds = self._dataset()
        ds.records[0] = replace(ds.records[0], amount_submitted=-1.0)
        once = pp.clean(ds)
        twice = pp.clean(once)
        assert once.records == twice.records


class TestMakeWindows:
    def test_five_rows_window_three(self):
        values = np.arange(10.0).reshape(5, 2)
        labels = np.array([0, 0, 1, 0, 1])
        wd = pp.make_windows(values, labels, 3)
        assert wd.n_windows == 3
        assert wd.labels.tolist() == [1, 0, 1]  # rows 2, 3, 4
        assert wd.source_row_index.tolist() == [2, 3, 4]
        assert not wd.insufficient_rows

    def test_window_equals_rows_gives_one_window(self):
        values = np.zeros((4, 3))
        wd = pp.make_windows(values, np.array([0, 0, 0, 1]), 4)
        assert wd.n_windows == 1
        assert wd.labels.tolist() == [1]

    def test_hand_enumerated_labels(self):
        values = np.zeros((4, 1))
        wd = pp.make_windows(values, np.array([0, 0, 1, 0]), 2)
        assert wd.labels.tolist() == [0, 1, 0]

    def test_too_few_rows_flags_not_raises(self):
        wd = pp.make_windows(np.zeros((2, 3)), np.array([0, 1]), 5)
        assert wd.n_windows == 0
        assert wd.insufficient_rows

    def test_windows_are_contiguous_slices(self):
        values = np.arange(12.0).reshape(6, 2)
        wd = pp.make_windows(values, np.zeros(6), 3)
        for i in range(wd.n_windows):
            assert np.array_equal(wd.windows[i], values[i : i + 3])

    @given(
        n=st.integers(min_value=1, max_value=30),
        window=st.integers(min_value=1, max_value=10),
    )
    @settings(max_examples=100, deadline=None)
    def test_alignment_invariant(self, n, window):
        rng = np.random.default_rng(n * 31 + window)
        labels = rng.integers(0, 2, size=n)
        wd = pp.make_windows(rng.normal(size=(n, 2)), labels, window)
        assert wd.n_windows == max(0, n - window + 1)
        for i in range(wd.n_windows):
            assert wd.labels[i] == labels[wd.source_row_index[i]]


class TestBuildFeatures:
    def test_declaration_schema(self):
        ds = generate_dataset(GeneratorConfig(n_records=40, anomaly_rate=0.0, seed=1))
        fm = pp.build_features(ds)
        # 13 time + 6 numeric + (6+1) payment + (5+1) rejection
        assert fm.n_features == 32
        onehot = [n for n, k in zip(fm.column_names, fm.column_kinds) if k == pp.KIND_ONEHOT]
        term_cols = [n for n in onehot if n.startswith("payment_term=")]
        assert len(term_cols) == 7

    def test_operation_schema_adds_treatment_code(self):
        ds = generate_dataset(
            GeneratorConfig(n_records=40, anomaly_rate=0.0, seed=1, preset="operation")
        )
        fm = pp.build_features(ds)
        assert fm.n_features == 40  # +7 treatment_code slots + unknown

    def test_onehot_groups_sum_to_one(self):
        ds = generate_dataset(GeneratorConfig(n_records=60, anomaly_rate=0.016, seed=2))
        fm = pp.build_features(ds)
        for prefix in ("payment_term=", "rejection_reason="):
            cols = [i for i, n in enumerate(fm.column_names) if n.startswith(prefix)]
            sums = fm.values[:, cols].sum(axis=1)
            assert np.all(sums == 1.0)

    def test_cyclic_identity_on_generated_data(self):
        ds = generate_dataset(GeneratorConfig(n_records=100, anomaly_rate=0.0, seed=3))
        fm = pp.build_features(ds)
        for base in ("month", "day", "day_of_week", "hour", "minute", "second"):
            s = fm.column(f"{base}_sin")
            c = fm.column(f"{base}_cos")
            assert np.all(np.abs(s * s + c * c - 1.0) < 1e-9)

    def test_numeric_columns_scaled_into_unit_interval_on_fit_rows(self):
        ds = generate_dataset(GeneratorConfig(n_records=100, anomaly_rate=0.0, seed=4))
        fm = pp.build_features(ds)
        scaled = pp.apply_scaler(fm, pp.fit_scaler(fm))
        for name, kind in zip(scaled.column_names, scaled.column_kinds):
            if kind in pp.SCALED_KINDS:
                col = scaled.column(name)
                assert col.min() >= 0.0 and col.max() <= 1.0

    def test_transform_is_leakage_free(self):
        # transforming the training rows must not change when test rows
        # are permuted or removed
        ds = generate_dataset(GeneratorConfig(n_records=50, anomaly_rate=0.0, seed=5))
        fm = pp.build_features(ds)
        params = pp.fit_scaler(fm, rows=slice(0, 30))
        full = pp.apply_scaler(fm, params).values[:30]
        truncated = pp.apply_scaler(fm.rows(slice(0, 30)), params).values
        assert np.array_equal(full, truncated)

    def test_full_matrix_scaler_covers_cyclic_columns(self):
        ds = generate_dataset(GeneratorConfig(n_records=80, anomaly_rate=0.0, seed=6))
        fm = pp.build_features(ds)
        params = pp.fit_scaler(fm, columns=list(fm.column_names))
        scaled = pp.apply_scaler(fm, params)
        assert scaled.values.min() >= 0.0
        assert scaled.values.max() <= 1.0


class TestChronologicalSplit:
    def test_60_20_20(self):
        train, val, test = pp.chronological_split(100)
        assert (train, val, test) == (range(0, 60), range(60, 80), range(80, 100))

    def test_remainder_goes_to_last(self):
        train, val, test = pp.chronological_split(101)
        assert len(train) == 60 and len(val) == 20 and len(test) == 21

    def test_bad_fractions_rejected(self):
        with pytest.raises(ArgumentError):
            pp.chronological_split(10, (0.5, 0.2))


class TestFeatureSerialization:
    def test_round_trip(self, tmp_path):
        ds = generate_dataset(GeneratorConfig(n_records=25, anomaly_rate=0.0, seed=7))
        fm = pp.build_features(ds)
        fm = pp.apply_scaler(fm, pp.fit_scaler(fm))
        path = tmp_path / "features.csv"
        pp.write_features(fm, path)
        back = pp.read_features(path)
        assert back.column_names == fm.column_names
        assert back.column_kinds == fm.column_kinds
        assert back.scaler_params == fm.scaler_params
        assert np.array_equal(back.values, fm.values)
