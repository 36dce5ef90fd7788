import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nasality_si.signal_core import (
    Signal,
    WindowSpec,
    denormalize_affine,
    highpass_baseline,
    hilbert_envelope,
    linear_interpolate,
    moving_average,
    normalize_affine,
    resample_to,
    rms_envelope,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def brute_moving_average(v, length):
    left = (length - 1) // 2
    right = length - 1 - left
    return np.array([v[max(0, i - left):i + right + 1].mean() for i in range(v.size)])


class TestSignal:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Signal(np.array([0.0, np.nan]), 100.0)
        with pytest.raises(ValueError):
            Signal(np.array([0.0, 1.0]), 0.0)

    def test_times_and_duration(self):
        s = Signal(np.zeros(4), 2.0, t0_s=1.0)
        np.testing.assert_array_equal(s.times, [1.0, 1.5, 2.0, 2.5])
        assert s.duration_s == 2.0

    def test_window_spec(self):
        with pytest.raises(ValueError):
            WindowSpec(0)
        with pytest.raises(ValueError):
            WindowSpec(3, alignment="causal")


class TestHighpassBaseline:
    def test_constant_goes_to_zero(self):
        for rate in (100.0, 51200.0):
            out = highpass_baseline(Signal(np.full(int(rate * 20), 5.0), rate), 0.1)
            assert np.abs(out.samples).max() < 5e-3

    def test_passband_identity(self):
        rate = 51200.0
        t = np.arange(int(rate * 10)) / rate
        x = np.sin(2 * np.pi * 100 * t)
        out = highpass_baseline(Signal(x, rate), 0.1).samples
        rel = np.sqrt(np.mean((out - x) ** 2) / np.mean(x ** 2))
        assert rel < 1e-3

    def test_drift_removed_against_lsq_detrend(self):
        rate = 51200.0
        t = np.arange(int(rate * 10)) / rate
        sine = np.sin(2 * np.pi * 100 * t)
        drift = 0.01 * t
        out = highpass_baseline(Signal(sine + drift, rate), 0.1).samples
        # Oracle: the drift left in the output, measured by a least-squares
        # line fit to (output - sine).
        resid = out - sine
        slope = np.polyfit(t, resid, 1)[0]
        assert abs(slope) * 10 < 0.05 * (drift[-1] - drift[0])

    def test_zero_phase(self):
        rate = 1000.0
        t = np.arange(10000) / rate
        x = np.sin(2 * np.pi * 5 * t)
        out = highpass_baseline(Signal(x, rate), 0.1).samples
        mid = slice(2000, 8000)
        lag = np.argmax(np.correlate(out[mid], x[mid], "full")) - (6000 - 1)
        assert lag == 0

    def test_errors(self):
        with pytest.raises(ValueError):
            highpass_baseline(Signal(np.ones(1), 100.0), 0.1)
        with pytest.raises(ValueError):
            highpass_baseline(Signal(np.ones(10), 100.0), 50.0)
        with pytest.raises(ValueError):
            highpass_baseline(Signal(np.ones(10), 100.0), 0.0)

    def test_deterministic(self):
        x = Signal(np.random.default_rng(0).standard_normal(5000), 1000.0)
        a = highpass_baseline(x, 0.1).samples
        b = highpass_baseline(x, 0.1).samples
        assert a.tobytes() == b.tobytes()


class TestMovingAverage:
    def test_constant_exact(self):
        out = moving_average(Signal(np.full(5000, 3.0), 1.0), WindowSpec(1000))
        assert np.all(out.samples == 3.0)

    def test_impulse(self):
        x = np.zeros(9)
        x[4] = 1.0
        out = moving_average(Signal(x, 1.0), WindowSpec(3)).samples
        np.testing.assert_allclose(out, [0, 0, 0, 1 / 3, 1 / 3, 1 / 3, 0, 0, 0], atol=1e-15)

    def test_brute_force_oracle(self):
        v = np.random.default_rng(1).standard_normal(50)
        out = moving_average(Signal(v, 1.0), 7).samples
        np.testing.assert_allclose(out, brute_moving_average(v, 7), atol=1e-12, rtol=0)

    def test_even_window_oracle(self):
        v = np.random.default_rng(2).standard_normal(40)
        out = moving_average(Signal(v, 1.0), 10).samples
        np.testing.assert_allclose(out, brute_moving_average(v, 10), atol=1e-12, rtol=0)

    def test_window_too_long(self):
        with pytest.raises(ValueError):
            moving_average(Signal(np.ones(5), 1.0), 6)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=30, max_size=80), st.integers(1, 9), st.integers(1, 5))
    def test_shift_equivariant_interior(self, vals, w, s):
        v = np.array(vals)
        a = moving_average(Signal(v, 1.0), w).samples
        b = moving_average(Signal(np.roll(v, s), 1.0), w).samples
        lo, hi = w + s, v.size - w
        if hi > lo:
            np.testing.assert_allclose(b[lo:hi], a[lo - s:hi - s], atol=1e-9)


class TestRmsEnvelope:
    def test_constant(self):
        out = rms_envelope(Signal(np.full(100, -2.5), 1.0), 10).samples
        np.testing.assert_allclose(out, 2.5, rtol=1e-15)

    def test_sinusoid(self):
        rate = 51200.0
        t = np.arange(51200) / rate
        out = rms_envelope(Signal(2.0 * np.sin(2 * np.pi * 500 * t), rate), 5120).samples
        np.testing.assert_allclose(out[5120:-5120], 2.0 / math.sqrt(2), rtol=0.01)

    def test_oracle(self):
        v = np.random.default_rng(3).standard_normal(20000)
        out = rms_envelope(Signal(v, 1.0), 1000).samples
        oracle = np.sqrt(brute_moving_average(v * v, 1000))
        np.testing.assert_allclose(out, oracle, atol=1e-12, rtol=0)
        assert np.all(out >= 0)


class TestHilbertEnvelope:
    def test_constant_amplitude(self):
        rate = 51200.0
        t = np.arange(int(2 * rate)) / rate
        env = hilbert_envelope(Signal(0.7 * np.sin(2 * np.pi * 150 * t + 0.3), rate)).samples
        m = env.size // 20
        np.testing.assert_allclose(env[m:-m], 0.7, atol=0.007)

    def test_am_envelope(self):
        rate = 51200.0
        t = np.arange(int(2 * rate)) / rate
        mod = 1 + 0.5 * np.cos(2 * np.pi * 3 * t)
        env = hilbert_envelope(Signal(mod * np.sin(2 * np.pi * 200 * t), rate)).samples
        m = env.size // 20
        np.testing.assert_allclose(env[m:-m], mod[m:-m], rtol=0.02)

    def test_zeros(self):
        assert np.all(hilbert_envelope(Signal(np.zeros(64), 100.0)).samples == 0)

    def test_too_short(self):
        with pytest.raises(ValueError):
            hilbert_envelope(Signal(np.ones(7), 100.0))

    @pytest.mark.parametrize("c", [-2.5, 0.0, 3.0])
    def test_homogeneous(self, c):
        x = np.random.default_rng(4).standard_normal(512)
        a = hilbert_envelope(Signal(c * x, 100.0)).samples
        b = abs(c) * hilbert_envelope(Signal(x, 100.0)).samples
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


class TestResample:
    def test_factor_512(self):
        out = resample_to(Signal(np.full(51200 * 2 + 100, 4.0), 51200.0), 100.0)
        assert out.rate_hz == 100.0 and len(out) == 200
        assert np.all(out.samples == 4.0)

    def test_ramp_block_means(self):
        out = resample_to(Signal(np.arange(1024.0), 4.0), 1.0).samples
        np.testing.assert_array_equal(out[:3], [1.5, 5.5, 9.5])
        assert out.size == 256

    def test_errors(self):
        with pytest.raises(ValueError):
            resample_to(Signal(np.ones(100), 100.0), 30.0)
        with pytest.raises(ValueError):
            resample_to(Signal(np.ones(100), 100.0), 200.0)

    def test_round_trip_bandlimited(self):
        rate = 51200.0
        t = np.arange(int(rate * 3)) / rate
        x = np.sin(2 * np.pi * 3 * t) + 0.5 * np.sin(2 * np.pi * 9 * t + 1)
        down = resample_to(Signal(x, rate), 100.0)
        keep = (t >= down.times[0]) & (t <= down.times[-1])
        back = linear_interpolate(down, t[keep]).samples
        rel = np.sqrt(np.mean((back - x[keep]) ** 2) / np.mean(x[keep] ** 2))
        assert rel < 0.02


class TestLinearInterpolate:
    def test_identity_at_samples(self):
        s = Signal(np.random.default_rng(5).standard_normal(20), 10.0, 0.3)
        assert linear_interpolate(s, s.times).samples.tobytes() == s.samples.tobytes()

    def test_midpoint(self):
        assert linear_interpolate(Signal(np.array([0.0, 1.0]), 1.0), [0.5]).samples[0] == 0.5

    def test_segment_oracle(self):
        v = np.random.default_rng(6).standard_normal(200)
        s = Signal(v, 100.0)
        q = np.arange(0, 1991) / 1000.0
        out = linear_interpolate(s, q).samples
        i = np.minimum((q * 100).astype(int), 198)
        f = q * 100 - i
        np.testing.assert_allclose(out, v[i] * (1 - f) + v[i + 1] * f, atol=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            linear_interpolate(Signal(np.ones(10), 10.0), [0.95])


class TestAffine:
    def test_endpoints(self):
        out = normalize_affine(Signal(np.array([0.0, 0.5, 1.0]), 1.0), 0.0, 1.0).samples
        np.testing.assert_array_equal(out, [-1.0, 0.0, 1.0])

    def test_degenerate(self):
        with pytest.raises(ValueError):
            normalize_affine(Signal(np.ones(3), 1.0), 1.0, 1.0)

    @settings(max_examples=100)
    @given(st.lists(finite, min_size=1, max_size=20), finite,
           st.floats(1e-3, 1e3, allow_nan=False))
    def test_inverse(self, vals, lo, width):
        s = Signal(np.array(vals), 1.0)
        back = denormalize_affine(normalize_affine(s, lo, lo + width), lo, lo + width)
        np.testing.assert_allclose(back.samples, s.samples, atol=1e-12 * max(1.0, abs(lo) + width) * 1e3)
