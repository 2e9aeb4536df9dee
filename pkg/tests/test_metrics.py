import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timemixer.exceptions import MetricError
from timemixer.metrics import (METRIC_KEYS, MetricsConfig, MetricsReport, evaluate_windows, forecastability, mae,
                               mape, mase, mse, owa, rmse, smape)

from oracles import spectral_entropy_score


class TestPointwise:
    def test_perfect_prediction(self, rng):
        y = rng.uniform(1, 2, size=(5, 3))
        for fn in (mse, mae, rmse, mape, smape):
            assert fn(y, y) == 0.0

    def test_hand_values(self):
        assert mse([1.0], [3.0]) == 4.0
        assert mae([1.0], [3.0]) == 2.0
        assert rmse([1.0], [3.0]) == 2.0
        assert mape([1.0], [3.0]) == 200.0
        assert smape([1.0], [3.0]) == pytest.approx(100.0, abs=1e-6)

    def test_rmse_is_sqrt_mse(self, rng):
        t, p = rng.normal(size=50), rng.normal(size=50)
        assert rmse(t, p) == math.sqrt(mse(t, p))

    def test_shape_mismatch(self):
        with pytest.raises(MetricError, match="shape"):
            mse(np.zeros(3), np.zeros(4))

    def test_mape_skips_zero_targets(self, caplog):
        assert mape([0.0, 2.0], [5.0, 3.0]) == pytest.approx(50.0)
        assert "skipped 1" in caplog.text

    def test_mape_all_zero_targets(self):
        with pytest.raises(MetricError):
            mape([0.0, 0.0], [1.0, 2.0])

    def test_smape_zero_zero_term(self):
        assert smape([0.0, 1.0], [0.0, 1.0]) == 0.0

    # k >= 0.5 keeps every SMAPE denominator far above the 1e-8 guard
    @given(st.floats(0.5, 100.0), st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_scale_laws(self, k, seed):
        r = np.random.default_rng(seed)
        t, p = r.uniform(1, 5, size=24), r.uniform(1, 5, size=24)
        assert mse(k * t, k * p) == pytest.approx(k * k * mse(t, p), rel=1e-12)
        assert mae(k * t, k * p) == pytest.approx(k * mae(t, p), rel=1e-12)
        assert rmse(k * t, k * p) == pytest.approx(k * rmse(t, p), rel=1e-12)
        assert mape(k * t, k * p) == pytest.approx(mape(t, p), rel=1e-12)
        assert smape(k * t, k * p) == pytest.approx(smape(t, p), rel=1e-7)
        assert mase(k * t, k * p) == pytest.approx(mase(t, p), rel=1e-12)


class TestMase:
    def test_hand_value(self):
        assert mase([2.0, 4.0], [3.0, 3.0], s=1) == 0.5

    def test_perfect(self, rng):
        y = rng.normal(size=10)
        assert mase(y, y) == 0.0

    def test_seasonal_naive_is_finite_positive(self):
        y = np.sin(np.arange(20) * 0.7) + 0.1 * np.arange(20)
        naive = np.concatenate([y[:2], y[:-2]])
        assert 0.0 < mase(y, naive, s=2) < np.inf

    def test_constant_pattern_rejected(self):
        with pytest.raises(MetricError, match="zero lag-1"):
            mase([1.0, 1.0, 1.0], [0.0, 1.0, 2.0])

    def test_horizon_must_exceed_period(self):
        with pytest.raises(MetricError, match="F > s"):
            mase([1.0, 2.0], [1.0, 2.0], s=2)

    def test_multichannel_average(self):
        t = np.array([[2.0, 0.0], [4.0, 1.0]])
        p = np.array([[3.0, 0.0], [3.0, 1.0]])
        assert mase(t, p) == pytest.approx((0.5 + 0.0) / 2)


class TestOwa:
    def test_identity(self):
        assert owa(12.0, 1.5, 12.0, 1.5) == 1.0

    def test_half_smape(self):
        assert owa(6.0, 1.5, 12.0, 1.5) == 0.75

    @pytest.mark.parametrize("refs", [(None, 1.0), (1.0, None), (0.0, 1.0), (1.0, -2.0)])
    def test_bad_references(self, refs):
        with pytest.raises(MetricError, match="Naive2"):
            owa(1.0, 1.0, *refs)


class TestForecastability:
    def test_pure_sinusoid(self):
        x = np.sin(2 * np.pi * 5 * np.arange(128) / 128)
        assert forecastability(x) == pytest.approx(1.0, abs=1e-9)

    def test_flat_spectrum(self):
        n = 64
        spectrum = np.zeros(n // 2 + 1, dtype=complex)
        spectrum[1:] = np.exp(1j * np.linspace(0, 3, n // 2))
        spectrum[-1] = 1.0  # the Nyquist bin of a real series is real
        x = np.fft.irfft(spectrum, n=n)
        assert forecastability(x) == pytest.approx(0.0, abs=1e-9)

    def test_white_noise_is_low(self):
        x = np.random.default_rng(0).normal(size=4096)
        assert 0.0 < forecastability(x) < 0.2

    def test_matches_naive_dft_oracle(self, rng):
        x = rng.normal(size=50) + np.sin(np.arange(50))
        assert forecastability(x) == pytest.approx(spectral_entropy_score(list(x)), abs=1e-10)

    def test_amplitude_and_offset_invariance(self, rng):
        x = rng.normal(size=100) + np.cos(np.arange(100) * 0.3)
        assert forecastability(3.5 * x + 10.0) == pytest.approx(forecastability(x), abs=1e-12)

    def test_zero_energy(self, caplog):
        assert forecastability(np.full(16, 4.0)) == 0.0
        assert "no non-constant energy" in caplog.text

    def test_too_short(self):
        with pytest.raises(MetricError):
            forecastability([1.0, 2.0, 3.0])


class TestEvaluateWindows:
    def test_pooled_values(self, rng):
        t = rng.uniform(1, 2, size=(6, 8, 2))
        p = t + rng.normal(scale=0.1, size=t.shape)
        out = evaluate_windows(t, p)
        assert out["mse"] == mse(t, p) and out["smape"] == smape(t, p)
        assert out["mase"] == pytest.approx(np.mean([mase(a, b) for a, b in zip(t, p)]))
        assert "owa" not in out

    def test_owa_when_configured(self, rng):
        t = rng.uniform(1, 2, size=(3, 6, 1))
        out = evaluate_windows(t, t * 1.1, MetricsConfig(naive2_smape=10.0, naive2_mase=2.0))
        assert out["owa"] == pytest.approx(0.5 * (out["smape"] / 10.0 + out["mase"] / 2.0))

    def test_degenerate_window_skipped(self):
        t = np.stack([np.ones((4, 1)), np.arange(4.0).reshape(4, 1)])
        out = evaluate_windows(t, t + 1)
        # the constant first window is skipped; the ramp window scores 1/1
        assert out["mase"] == 1.0


class TestReport:
    def test_aggregate_mean_std(self):
        rep = MetricsReport.aggregate([{"mse": 1.0}, {"mse": 2.0}, {"mse": 3.0}], [0, 1, 2])
        assert rep["mse"] == 2.0 and rep.std["mse"] == 1.0

    def test_single_seed_std_zero(self):
        assert MetricsReport.aggregate([{"mae": 0.4}]).std["mae"] == 0.0

    def test_repeated_seed_std_zero(self):
        assert MetricsReport.aggregate([{"mae": 0.4}, {"mae": 0.4}]).std["mae"] == 0.0

    def test_rejects_non_finite(self):
        with pytest.raises(MetricError):
            MetricsReport({"mse": float("nan")})

    def test_json_key_order(self):
        rep = MetricsReport({"smape": 1.0, "mae": 2.0, "mse": 3.0})
        assert list(json.loads(rep.to_json())["metrics"]) == ["mse", "mae", "smape"]
        assert set(METRIC_KEYS) >= {"mse", "mae", "rmse", "mape", "smape", "mase", "owa", "forecastability"}
