import numpy as np
import pytest
from scipy.signal import freqz

from nasality_si import acoustic_frontend as af
from nasality_si.signal_core import Signal


def tone(freq, seconds=2.0, rate=af.SAMPLE_RATE, amp=0.5):
    t = np.arange(int(rate * seconds)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


class TestFilterbank:
    def test_channel_frequencies(self):
        f = af.channel_frequencies()
        assert f.shape == (128,)
        assert f[0] == 180.0
        np.testing.assert_allclose(f[24], 360.0)
        np.testing.assert_allclose(f[-1], 180.0 * 2 ** (127 / 24))
        assert f[-1] < af.SAMPLE_RATE / 2

    def test_unity_peak_gain(self):
        f = af.channel_frequencies()[::16]
        c = af.resonator_coefficients(f)
        for fc, (b0, a1, a2) in zip(f, c):
            w, h = freqz([b0, 0, -b0], [1, a1, a2], worN=[2 * np.pi * fc / af.SAMPLE_RATE])
            assert abs(h[0]) == pytest.approx(1.0, abs=1e-9)

    def test_tone_peaks_in_matching_channel(self):
        spec = af.audspec(Signal(tone(1000.0), af.SAMPLE_RATE))
        assert spec.shape == (128, 250)
        prof = spec.bins[:, 50:].mean(axis=1)
        best = spec.channel_freqs_hz[np.argmax(prof)]
        assert abs(np.log2(best / 1000.0)) < 1 / 24 + 1e-9

    def test_silence_and_nonnegative(self):
        assert np.all(af.audspec(Signal(np.zeros(32000), af.SAMPLE_RATE)).bins == 0)
        x = np.random.default_rng(0).standard_normal(32000)
        assert af.audspec(Signal(x, af.SAMPLE_RATE)).bins.min() >= 0

    def test_cube_root_compression(self):
        x = np.random.default_rng(1).standard_normal(32000) * 0.1
        a = af.audspec(Signal(x, af.SAMPLE_RATE)).bins
        b = af.audspec(Signal(8.0 * x, af.SAMPLE_RATE)).bins
        np.testing.assert_allclose(b, 2.0 * a, rtol=1e-9, atol=1e-12)

    def test_wrong_input(self):
        with pytest.raises(ValueError):
            af.audspec(Signal(np.zeros(31999), af.SAMPLE_RATE))
        with pytest.raises(ValueError):
            af.audspec(Signal(np.zeros(32000), 8000.0))

    def test_temporal_contract(self):
        assert af.N_FRAMES * af.HOP_S == pytest.approx(af.SEGMENT_S)
        assert af.N_FRAMES * 4 // 5 == af.SEGMENT_FRAMES


class TestMixing:
    def test_resample_length_and_values(self):
        n = 51200
        x = Signal(np.linspace(0.0, 1.0, n), 51200.0)
        out = af.mix_and_resample(x, x)
        assert out.rate_hz == 16000 and len(out) == (n - 1) * 16000 // 51200 + 1
        np.testing.assert_allclose(out.samples, np.arange(len(out)) * 3.2 / (n - 1), atol=1e-12)

    def test_average(self):
        a = Signal(np.full(100, 0.2), 16000.0)
        b = Signal(np.full(100, 0.4), 16000.0)
        np.testing.assert_allclose(af.mix_and_resample(a, b).samples, 0.3)

    def test_peak_limit(self):
        a = Signal(np.array([0.0, 3.0, -1.0, 0.5]), 16000.0)
        out = af.mix_and_resample(a, a).samples
        assert np.abs(out).max() == pytest.approx(0.9)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            af.mix_and_resample(Signal(np.zeros(10), 16000.0), Signal(np.zeros(11), 16000.0))


class TestSegmentation:
    def test_padding_and_masks(self):
        audio = Signal(tone(200.0, 4.5), af.SAMPLE_RATE)
        targets = {"nasalance": np.linspace(-1, 1, 450)}
        segs = af.segment_utterance(audio, targets, "u")
        assert [s.valid_frames for s in segs] == [200, 200, 50]
        assert [s.valid_samples for s in segs] == [32000, 32000, 8000]
        last = segs[-1]
        assert np.all(last.audio.samples[8000:] == 0)
        assert np.all(last.targets["nasalance"][50:] == 0)
        assert last.mask.sum() == 50
        joined = np.concatenate([s.targets["nasalance"][:s.valid_frames] for s in segs])
        np.testing.assert_array_equal(joined, targets["nasalance"])
        assert segs[1].audio.t0_s == 2.0

    def test_exact_multiple(self):
        segs = af.segment_utterance(Signal(tone(200.0, 4.0), af.SAMPLE_RATE),
                                    {"pitch": np.zeros(400)})
        assert len(segs) == 2 and all(s.valid_frames == 200 for s in segs)

    def test_duration_mismatch(self):
        with pytest.raises(ValueError):
            af.segment_utterance(Signal(tone(200.0, 2.0), af.SAMPLE_RATE), {"x": np.zeros(150)})

    def test_prepare_utterance(self):
        rate = 51200.0
        t = np.arange(int(rate * 2.5)) / rate
        oral = Signal(0.3 * np.sin(2 * np.pi * 150 * t), rate)
        nasal = Signal(0.1 * np.sin(2 * np.pi * 150 * t), rate)
        utt = af.prepare_utterance("u1", "s1", oral, nasal, {"nasalance": np.zeros(250)})
        assert len(utt.segments) == 2
        assert utt.segments[0].audspec.shape == (128, 250)
        assert utt.segments[0].audspec.dtype == np.float32
        y, m = utt.target_matrix(["nasalance"])
        assert y.shape == (2, 1, 200) and m.sum() == 250
