import numpy as np
import pytest

from billinglab import autoencoder as ae
from billinglab.autoencoder import (
    AutoencoderModel,
    fit_ae,
    nearest_rank_percentile,
    pseudo_label_ae,
    reconstruction_error,
    reconstruction_errors,
)
from billinglab.errors import ArgumentError, PreconditionError


def scaled_blob(seed: int, n: int = 200, d: int = 8) -> np.ndarray:
    """Smooth correlated rows already inside [0, 1]."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.3, 0.7, size=(n, 1))
    noise = rng.uniform(-0.05, 0.05, size=(n, d))
    return np.clip(base + noise, 0.0, 1.0)


class TestNearestRankPercentile:
    def test_984th_percentile_of_1000_is_985th_smallest(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=1000)
        expected = np.sort(values)[985 - 1]
        assert nearest_rank_percentile(values, 98.4) == expected

    def test_100th_percentile_is_the_maximum(self):
        values = np.array([3.0, 1.0, 2.0])
        assert nearest_rank_percentile(values, 100.0) == 3.0

    def test_small_vectors(self):
        values = np.array([5.0, 1.0])
        assert nearest_rank_percentile(values, 50.0) == 5.0  # floor(1) + 1 = rank 2

    def test_empty_rejected(self):
        with pytest.raises(ArgumentError):
            nearest_rank_percentile(np.array([]), 50.0)

    def test_out_of_range_percentile_rejected(self):
        with pytest.raises(ArgumentError):
            nearest_rank_percentile(np.array([1.0]), 101.0)


class TestReconstructionError:
    def _tiny_model(self, seed=0, d=4) -> AutoencoderModel:
        params = ae._init_params(d, (3, 2), np.random.default_rng(seed))
        return AutoencoderModel(
            params=params,
            input_width=d,
            hidden_widths=(3, 2),
            optimizer_kind="adam",
            learning_rate=0.01,
            error_threshold=0.1,
            threshold_percentile=98.4,
            preset="declaration",
        )

    def test_perfect_reconstruction_gives_zero(self):
        model = self._tiny_model()
        x = np.array([0.2, 0.4, 0.6, 0.8])
        x_hat = ae._forward_np(model.params, x[None, :])[0]
        assert np.abs(x_hat - x_hat).mean() == 0.0
        # direct mean-absolute-error identity
        errors = reconstruction_errors(model, x_hat[None, :])
        manual = np.abs(x_hat - ae._forward_np(model.params, x_hat[None, :])[0]).mean()
        assert errors[0] == pytest.approx(manual, abs=1e-15)

    def test_hand_arithmetic_example(self):
        # x = (1, 0), reconstruction forced to (0.5, 0.5) -> error 0.5
        x = np.array([1.0, 0.0])
        x_hat = np.array([0.5, 0.5])
        assert np.abs(x - x_hat).mean() == 0.5

    def test_batch_errors_match_row_loop(self):
        model = self._tiny_model(seed=1)
        X = scaled_blob(1, n=17, d=4)
        batch = reconstruction_errors(model, X)
        loop = np.array([reconstruction_error(model, row) for row in X])
        assert np.allclose(batch, loop, atol=1e-15)

    def test_errors_are_non_negative(self):
        model = self._tiny_model(seed=2)
        assert np.all(reconstruction_errors(model, scaled_blob(2, d=4)) >= 0.0)

    def test_dimension_mismatch_rejected(self):
        model = self._tiny_model()
        with pytest.raises(ArgumentError):
            reconstruction_error(model, np.zeros(9))


class TestFit:
    def test_out_of_range_inputs_rejected(self):
        X = scaled_blob(3)
        X[0, 0] = 1.5
        with pytest.raises(PreconditionError):
            fit_ae(X, seed=0)

    def test_negative_inputs_rejected(self):
        X = scaled_blob(4)
        X[5, 2] = -0.2
        with pytest.raises(PreconditionError):
            fit_ae(X, seed=0)

    def test_threshold_is_nearest_rank_percentile_of_training_errors(self):
        X = scaled_blob(5, n=250)
        model = fit_ae(X, seed=1, max_epochs=5)
        errors = reconstruction_errors(model, X)
        rank = int(np.floor(98.4 / 100 * len(X))) + 1
        assert model.error_threshold == np.sort(errors)[rank - 1]

    def test_same_seed_reproduces_threshold(self):
        X = scaled_blob(6)
        a = fit_ae(X, seed=9, max_epochs=4)
        b = fit_ae(X, seed=9, max_epochs=4)
        assert a.error_threshold == b.error_threshold

    def test_identical_rows_converge_to_equal_errors(self):
        X = np.tile(np.array([[0.2, 0.5, 0.7, 0.4, 0.6, 0.3, 0.5, 0.8]]), (64, 1))
        model = fit_ae(X, seed=2, max_epochs=50)
        errors = reconstruction_errors(model, X)
        assert errors.max() - errors.min() < 1e-6

    def test_operation_preset_uses_rmsprop_and_narrow_widths(self):
        X = scaled_blob(7, d=6)
        model = fit_ae(X, preset="operation", seed=0, max_epochs=2)
        assert model.hidden_widths == (16, 8)
        assert model.optimizer_kind == "rmsprop"

    def test_mse_training_flag(self):
        X = scaled_blob(8)
        model = fit_ae(X, seed=0, max_epochs=2, train_loss="mse")
        assert model.train_loss == "mse"
        # scoring error remains mean absolute regardless of the flag
        errors = reconstruction_errors(model, X[:3])
        manual = np.abs(X[:3] - ae._forward_np(model.params, X[:3])).mean(axis=1)
        assert np.allclose(errors, manual)


class TestPseudoLabels:
    def test_boundary_is_strict(self):
        model = AutoencoderModel(
            params=ae._init_params(2, (3, 2), np.random.default_rng(0)),
            input_width=2,
            hidden_widths=(3, 2),
            optimizer_kind="adam",
            learning_rate=0.01,
            error_threshold=0.0,
            threshold_percentile=98.4,
            preset="declaration",
        )
        X = np.array([[0.5, 0.5]])
        errors = reconstruction_errors(model, X)
        model.error_threshold = float(errors[0])  # exactly at the threshold
        result = pseudo_label_ae(model, X)
        assert result.labels.tolist() == [0]

    def test_at_most_the_top_share_is_labeled_on_training_data(self):
        X = scaled_blob(9, n=500)
        model = fit_ae(X, seed=3, max_epochs=5)
        result = pseudo_label_ae(model, X)
        assert result.n_positive <= int(np.ceil(0.016 * len(X)))
        # independent scan agrees with the strict rule
        errors = reconstruction_errors(model, X)
        assert np.array_equal(result.labels, (errors > model.error_threshold).astype(np.int8))

    def test_all_identical_rows_label_nothing(self):
        X = np.tile(np.array([[0.3, 0.6, 0.2, 0.7]]), (50, 1))
        model = fit_ae(X, seed=4, max_epochs=3)
        result = pseudo_label_ae(model, X)
        assert result.n_positive == 0

    def test_unfitted_threshold_rejected(self):
        model = AutoencoderModel(
            params=ae._init_params(2, (3, 2), np.random.default_rng(0)),
            input_width=2,
            hidden_widths=(3, 2),
            optimizer_kind="adam",
            learning_rate=0.01,
            error_threshold=float("nan"),
            threshold_percentile=98.4,
            preset="declaration",
        )
        with pytest.raises(ArgumentError):
            pseudo_label_ae(model, np.array([[0.1, 0.2]]))


class TestPlantedOutliers:
    def test_gross_outliers_have_higher_mean_error(self):
        wins = 0
        for seed in range(10):
            rng = np.random.default_rng(200 + seed)
            clean = scaled_blob(300 + seed, n=250, d=8)
            # pre-scaling amounts 10x the clean max land far outside the
            # unit box after the clean-data scaler is applied
            outliers = rng.uniform(5.0, 10.0, size=(5, 8))
            model = fit_ae(clean, seed=seed, max_epochs=10)
            clean_mean = reconstruction_errors(model, clean).mean()
            outlier_mean = reconstruction_errors(model, outliers).mean()
            wins += int(outlier_mean > clean_mean)
        assert wins == 10


class TestSerialization:
    def test_round_trip(self, tmp_path):
        X = scaled_blob(10)
        model = fit_ae(X, seed=5, max_epochs=3)
        path = tmp_path / "ae.json"
        ae.save_model(model, path)
        back = ae.load_model(path)
        assert back.error_threshold == model.error_threshold
        assert np.array_equal(
            reconstruction_errors(back, X), reconstruction_errors(model, X)
        )
