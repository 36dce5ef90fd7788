"""Deterministic 1-D DSP primitives shared by the parameter-extraction pipelines.

All arithmetic is float64.  Every function is pure: it returns a new
:class:`Signal` and never mutates its input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import hilbert

from . import kernels


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled waveform.

    Attributes:
        samples: 1-D float64 array.
        rate_hz: Sample rate in Hz.
        t0_s: Time of the first sample in seconds.
    """

    samples: np.ndarray
    rate_hz: float
    t0_s: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.rate_hz

    @property
    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self)) / self.rate_hz

    def replace(self, samples, rate_hz=None, t0_s=None) -> "Signal":
        return Signal(samples,
                      self.rate_hz if rate_hz is None else rate_hz,
                      self.t0_s if t0_s is None else t0_s)


@dataclass(frozen=True)
class WindowSpec:
    """Centered window; truncated at signal edges."""

    length_samples: int
    alignment: str = field(default="centered")

    def __post_init__(self):
        if int(self.length_samples) != self.length_samples or self.length_samples < 1:
            raise ValueError("window length must be a positive integer")
        if self.alignment != "centered":
            raise ValueError("only centered windows are supported")


def _as_window(w) -> WindowSpec:
    return w if isinstance(w, WindowSpec) else WindowSpec(int(w))


def _require_nonempty(x: Signal):
    if len(x) == 0:
        raise ValueError("empty signal")


def highpass_baseline(x: Signal, cutoff_hz: float) -> Signal:
    """Remove baseline wander with a zero-phase first-order high-pass.

    A one-pole low-pass (coefficient ``exp(-2*pi*cutoff/rate)``) is run
    forward and then backward to estimate the baseline, which is subtracted.

    The least-squares line through the whole signal is taken out first and
    added back to the baseline, so constant offsets and linear drift are
    removed exactly; the recursive pass then only sees the remainder, which
    is mirror-padded by up to three time constants to tame edge transients.
    """
    _require_nonempty(x)
    n = len(x)
    if n < 2:
        raise ValueError("highpass_baseline needs at least 2 samples")
    if not 0 < cutoff_hz < x.rate_hz / 2:
        raise ValueError("cutoff must lie in (0, Nyquist)")
    a = math.exp(-2.0 * math.pi * cutoff_hz / x.rate_hz)
    s = x.samples
    k = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    slope = np.dot(k, s) / np.dot(k, k)
    line = s.mean() + slope * k
    rest = s - line
    tau_samples = x.rate_hz / (2.0 * math.pi * cutoff_hz)
    pad = int(min(n - 1, math.ceil(3.0 * tau_samples)))
    ext = np.pad(rest, pad, mode="reflect") if pad > 0 else rest
    fwd = kernels.onepole(ext, a, 0.0)
    bwd = kernels.onepole(np.ascontiguousarray(fwd[::-1]), a, 0.0)[::-1]
    return x.replace(rest - bwd[pad:pad + n])


def _window_sums(v: np.ndarray, length: int):
    """Centered window sums and counts, truncated at the edges."""
    n = v.shape[0]
    left = (length - 1) // 2
    right = length - 1 - left
    idx = np.arange(n)
    lo = np.maximum(idx - left, 0)
    hi = np.minimum(idx + right, n - 1) + 1
    csum = np.concatenate([[0.0], np.cumsum(v)])
    return csum[hi] - csum[lo], (hi - lo).astype(np.float64)


def moving_average(x: Signal, w) -> Signal:
    """Centered moving average with edge-truncated windows.

    For even lengths the window extends one sample further right than left.
    Constant input maps to itself exactly.
    """
    w = _as_window(w)
    _require_nonempty(x)
    if w.length_samples > len(x):
        raise ValueError("window longer than signal")
    s = x.samples
    # Exact constant preservation; cumulative sums would leave rounding noise.
    if np.all(s == s[0]):
        return x.replace(s.copy())
    sums, counts = _window_sums(s, w.length_samples)
    return x.replace(sums / counts)


def rms_envelope(x: Signal, w) -> Signal:
    """Square root of the moving average of the squared signal."""
    sq = x.replace(x.samples * x.samples)
    ms = moving_average(sq, w).samples
    return x.replace(np.sqrt(np.maximum(ms, 0.0)))


def hilbert_envelope(x: Signal) -> Signal:
    """Magnitude of the analytic signal (FFT construction)."""
    if len(x) < 8:
        raise ValueError("hilbert_envelope needs at least 8 samples")
    return x.replace(np.abs(hilbert(x.samples)))


def resample_to(x: Signal, target_rate_hz: float) -> Signal:
    """Downsample by an integer factor using non-overlapping block means.

    The output sample ``i`` is the mean of input block ``i``; its time stamp
    is the block center.  Trailing samples that do not fill a block are
    dropped.  No anti-alias filter beyond the block mean is applied.
    """
    _require_nonempty(x)
    if target_rate_hz > x.rate_hz:
        raise ValueError("upsampling is not supported; use linear_interpolate")
    ratio = x.rate_hz / target_rate_hz
    k = int(round(ratio))
    if abs(ratio - k) > 1e-9 * ratio or k < 1:
        raise ValueError(f"rate ratio {ratio} is not an integer")
    m = len(x) // k
    if m == 0:
        raise ValueError("signal shorter than one block")
    blocks = x.samples[:m * k].reshape(m, k)
    t0 = x.t0_s + (k - 1) / (2.0 * x.rate_hz)
    return Signal(blocks.mean(axis=1), float(target_rate_hz), t0)


def linear_interpolate(x: Signal, target_times_s) -> Signal:
    """Piecewise-linear interpolation at the requested (sorted) times.

    The returned Signal's rate is inferred from the first two query times
    (or kept from ``x`` for a single query).
    """
    _require_nonempty(x)
    t = np.asarray(target_times_s, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("target times must be a non-empty 1-D sequence")
    if np.any(np.diff(t) < 0):
        raise ValueError("target times must be sorted")
    t_end = x.t0_s + (len(x) - 1) / x.rate_hz
    tol = 1e-9 / x.rate_hz
    if t[0] < x.t0_s - tol or t[-1] > t_end + tol:
        raise ValueError("target time out of range")
    # Work in sample-index coordinates so original sample times hit exactly.
    pos = np.clip((t - x.t0_s) * x.rate_hz, 0.0, len(x) - 1)
    snap = np.rint(pos)
    pos = np.where(np.abs(pos - snap) < 1e-9, snap, pos)
    i0 = np.minimum(np.floor(pos).astype(np.int64), max(len(x) - 2, 0))
    frac = pos - i0
    s = x.samples
    if len(x) == 1:
        vals = np.full(t.shape, s[0])
    else:
        vals = s[i0] + frac * (s[i0 + 1] - s[i0])
        vals = np.where(frac == 0.0, s[i0], vals)
    rate = 1.0 / (t[1] - t[0]) if t.size > 1 and t[1] > t[0] else x.rate_hz
    return Signal(vals, rate, float(t[0]))


def normalize_affine(x: Signal, src_min: float, src_max: float) -> Signal:
    """Map ``[src_min, src_max]`` affinely onto ``[-1, 1]``."""
    if not src_max > src_min:
        raise ValueError("degenerate normalization range")
    return x.replace(2.0 * (x.samples - src_min) / (src_max - src_min) - 1.0)


def denormalize_affine(x: Signal, src_min: float, src_max: float) -> Signal:
    """Inverse of :func:`normalize_affine`."""
    if not src_max > src_min:
        raise ValueError("degenerate normalization range")
    return x.replace((x.samples + 1.0) * (src_max - src_min) / 2.0 + src_min)
