"""Ground-truth trace extraction: nasalance, EGG voicing, APP surrogate.

Also holds the HSV (nasopharyngoscopy intensity) validation analysis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .evaluation import ppmc
from .signal_core import (
    Signal,
    WindowSpec,
    highpass_baseline,
    hilbert_envelope,
    linear_interpolate,
    moving_average,
    normalize_affine,
    resample_to,
    rms_envelope,
)

TRACE_KINDS = ("nasalance", "voicing", "periodicity", "aperiodicity", "pitch",
               "hsv_intensity", "generic")
# Kinds whose values are confined to [-1, 1] after normalization.
BOUNDED_KINDS = ("nasalance", "voicing", "periodicity", "aperiodicity", "pitch")

DENOM_EPS = 1e-12


@dataclass
class Trace:
    """Physiological parameter time series.

    ``diagnostics`` carries pipeline bookkeeping (e.g. dead-frame counts);
    it is not part of the trace's value.
    """

    values: np.ndarray
    rate_hz: float = 100.0
    t0_s: float = 0.0
    kind: str = "generic"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("trace values must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("trace values must be finite")
        if self.kind not in TRACE_KINDS:
            raise ValueError(f"unknown trace kind {self.kind!r}")
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        self.values = v

    def __len__(self):
        return self.values.shape[0]

    @property
    def times(self):
        return self.t0_s + np.arange(len(self)) / self.rate_hz

    def as_signal(self) -> Signal:
        return Signal(self.values, self.rate_hz, self.t0_s)

    @classmethod
    def from_signal(cls, s: Signal, kind: str, **diagnostics) -> "Trace":
        return cls(s.samples, s.rate_hz, s.t0_s, kind, dict(diagnostics))


@dataclass(frozen=True)
class NasalanceConfig:
    hp_cutoff_hz: float = 0.1
    rms_window_samples: int = 1000
    target_rate_hz: float = 100.0
    smooth_window_samples: int = 10

    def __post_init__(self):
        for name in ("hp_cutoff_hz", "rms_window_samples", "target_rate_hz",
                     "smooth_window_samples"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class CorrelationReport:
    r: float
    p_proxy: float
    n: int


def _check_pair(a: Signal, b: Signal):
    if a.rate_hz != b.rate_hz or len(a) != len(b):
        raise ValueError("oral and nasal signals must share rate and length")


def nasalance_raw(oral: Signal, nasal: Signal, cfg: NasalanceConfig = NasalanceConfig()):
    """Per-sample RMS ratio nasal/(nasal+oral) at the microphone rate.

    Returns ``(raw, dead)`` where ``dead`` counts samples whose denominator
    fell below ``DENOM_EPS`` (those are set to 0).
    """
    _check_pair(oral, nasal)
    w = WindowSpec(cfg.rms_window_samples)
    rms_o = rms_envelope(highpass_baseline(oral, cfg.hp_cutoff_hz), w).samples
    rms_n = rms_envelope(highpass_baseline(nasal, cfg.hp_cutoff_hz), w).samples
    den = rms_n + rms_o
    live = den >= DENOM_EPS
    raw = np.zeros_like(den)
    raw[live] = rms_n[live] / den[live]
    return oral.replace(raw), int(np.count_nonzero(~live))


def compute_nasalance(oral: Signal, nasal: Signal,
                      cfg: NasalanceConfig = NasalanceConfig()) -> Trace:
    """Nasalance trace at ``cfg.target_rate_hz``, normalized to [-1, 1].

    Pipeline: baseline high-pass, RMS envelope, RMS ratio, block-mean
    downsampling, moving-average smoothing, fixed affine map of [0, 1].
    """
    raw, dead = nasalance_raw(oral, nasal, cfg)
    low = resample_to(raw, cfg.target_rate_hz)
    smooth = moving_average(low, WindowSpec(cfg.smooth_window_samples))
    out = normalize_affine(smooth, 0.0, 1.0)
    vals = np.clip(out.samples, -1.0, 1.0)
    return Trace(vals, out.rate_hz, out.t0_s, "nasalance", {"dead_samples": dead})


def compute_voicing(egg: Signal, cfg: NasalanceConfig = NasalanceConfig()) -> Trace:
    """EGG envelope voicing trace; per-utterance max maps to +1, zero to -1."""
    if len(egg) < 8:
        raise ValueError("EGG signal needs at least 8 samples")
    env = hilbert_envelope(highpass_baseline(egg, cfg.hp_cutoff_hz))
    low = resample_to(env, cfg.target_rate_hz)
    smooth = moving_average(low, WindowSpec(cfg.smooth_window_samples))
    peak = float(smooth.samples.max())
    if not peak > 0:
        return Trace(np.full(len(smooth), -1.0), smooth.rate_hz, smooth.t0_s,
                     "voicing", {"silent": True})
    vals = np.clip(normalize_affine(smooth, 0.0, peak).samples, -1.0, 1.0)
    return Trace(vals, smooth.rate_hz, smooth.t0_s, "voicing", {"silent": False})


APP_RATE_HZ = 16000
APP_WIN_S = 0.025
PITCH_RANGE_HZ = (60.0, 400.0)
VOICED_THRESHOLD = 0.3


def app_frames(audio: Signal, frame_rate_hz: float = 100.0):
    """Raw per-frame (periodicity in [0, 1], pitch in Hz) from autocorrelation.

    Frame ``i`` is a 25 ms window centered on the middle of the ``i``-th hop.
    The pitch lag is the shortest local maximum whose correlation is within
    90% of the global maximum, refined by parabolic interpolation.
    """
    if audio.rate_hz != APP_RATE_HZ:
        raise ValueError("app_surrogate expects 16 kHz audio")
    hop = int(round(audio.rate_hz / frame_rate_hz))
    win = int(round(APP_WIN_S * audio.rate_hz))
    n_frames = len(audio) // hop
    if len(audio) < win or n_frames < 1:
        raise ValueError("audio shorter than one analysis frame")
    lag_min = int(math.ceil(audio.rate_hz / PITCH_RANGE_HZ[1]))
    lag_max = int(math.floor(audio.rate_hz / PITCH_RANGE_HZ[0]))
    offset = win // 2 - hop // 2
    padded = np.concatenate([np.zeros(offset), audio.samples,
                             np.zeros(win + lag_max + hop)])
    starts = np.arange(n_frames, dtype=np.int64) * hop
    r = kernels.frame_autocorr(padded, starts, win, lag_min, lag_max)

    periodicity = np.clip(r.max(axis=1), 0.0, 1.0)
    pitch = np.zeros(n_frames)
    for f in range(n_frames):
        row = r[f]
        top = row.max()
        if top <= 0:
            continue
        peaks = np.flatnonzero((row[1:-1] >= row[:-2]) & (row[1:-1] > row[2:])) + 1
        good = peaks[row[peaks] >= 0.9 * top]
        j = int(good[0]) if good.size else int(np.argmax(row))
        shift = 0.0
        if 0 < j < row.size - 1:
            den = row[j - 1] - 2 * row[j] + row[j + 1]
            if den < 0:
                shift = 0.5 * (row[j - 1] - row[j + 1]) / den
        pitch[f] = audio.rate_hz / (lag_min + j + shift)
    t0 = audio.t0_s + (hop - 1) / (2.0 * audio.rate_hz)
    return periodicity, pitch, t0


def app_surrogate(audio: Signal, frame_rate_hz: float = 100.0):
    """Periodicity, aperiodicity and pitch traces, each mapped to [-1, 1].

    This is an autocorrelation stand-in for a dedicated APP detector.
    Pitch maps [60, 400] Hz affinely to [-1, 1] and is forced to -1 where
    raw periodicity is below 0.3.
    """
    per, f0, t0 = app_frames(audio, frame_rate_hz)
    aper = 1.0 - per
    lo, hi = PITCH_RANGE_HZ
    pitch = np.clip(2.0 * (f0 - lo) / (hi - lo) - 1.0, -1.0, 1.0)
    pitch[per < VOICED_THRESHOLD] = -1.0
    mk = lambda v, kind: Trace(v, frame_rate_hz, t0, kind)  # noqa: E731
    return (mk(2.0 * per - 1.0, "periodicity"),
            mk(2.0 * aper - 1.0, "aperiodicity"),
            mk(pitch, "pitch"))


def correlation_p_proxy(r: float, n: int) -> float:
    """Two-sided p-value of the t statistic r*sqrt((n-2)/(1-r^2))."""
    if n < 3:
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


def validate_against_hsv(nasalance: Trace, hsv: Trace) -> CorrelationReport:
    """Pearson correlation of nasalance against an HSV intensity trace.

    Nasalance is linearly interpolated onto the HSV sample times inside the
    shared time support.  A negative r is the expected outcome: an open port
    is dark in the video and nasal in the acoustics.
    """
    n_end = nasalance.t0_s + (len(nasalance) - 1) / nasalance.rate_hz
    h_t = hsv.times
    lo = max(nasalance.t0_s, hsv.t0_s)
    hi = min(n_end, h_t[-1])
    if hi - lo < 1.0:
        raise ValueError("nasalance and HSV traces overlap by less than 1 s")
    sel = (h_t >= lo) & (h_t <= hi)
    interp = linear_interpolate(nasalance.as_signal(), h_t[sel]).samples
    r = ppmc(interp, hsv.values[sel])
    n = int(sel.sum())
    return CorrelationReport(r, correlation_p_proxy(r, n), n)
