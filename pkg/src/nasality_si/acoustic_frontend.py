"""Dual-mic audio -> fixed-size network input.

Mixing and 16 kHz resampling, 2 s segmentation with zero padding, and an
auditory spectrogram built from a constant-Q resonator bank with half-wave
rectification, 8 ms leaky integration and cube-root compression.

Temporal contract with the network: 2 s at an 8 ms hop gives 250 frames;
upsampling by 4 then pooling by 5 lands on 200 target frames at 100 Hz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .signal_core import Signal

SAMPLE_RATE = 16000
SEGMENT_S = 2.0
SEGMENT_SAMPLES = 32000
TARGET_RATE = 100
SEGMENT_FRAMES = 200
HOP_S = 0.008
N_CHANNELS = 128
N_FRAMES = 250
CHANNELS_PER_OCTAVE = 24
LOWEST_CF_HZ = 180.0
FILTER_Q = 8.0
INTEGRATION_S = 0.008
PEAK_LIMIT = 0.9


@dataclass
class AudSpec:
    bins: np.ndarray
    channel_freqs_hz: np.ndarray
    frame_hop_s: float = HOP_S

    @property
    def shape(self):
        return self.bins.shape


@dataclass
class Segment:
    audio: Signal
    targets: dict
    valid_frames: int
    valid_samples: int
    utterance_id: str = ""
    segment_index: int = 0
    audspec: np.ndarray | None = None

    @property
    def mask(self):
        m = np.zeros(SEGMENT_FRAMES, dtype=bool)
        m[:self.valid_frames] = True
        return m


@dataclass
class PreparedUtterance:
    """Frontend output for one utterance: segments plus full-length targets."""

    utterance_id: str
    speaker_id: str
    segments: list
    targets: dict = field(default_factory=dict)

    def target_matrix(self, kinds):
        """Stacked per-segment targets ``(n_seg, len(kinds), 200)`` and masks."""
        y = np.stack([np.stack([s.targets[k] for k in kinds]) for s in self.segments])
        m = np.stack([s.mask for s in self.segments])
        return y, m


def channel_frequencies(n=N_CHANNELS, lowest=LOWEST_CF_HZ, per_octave=CHANNELS_PER_OCTAVE):
    return lowest * 2.0 ** (np.arange(n) / per_octave)


def resonator_coefficients(freqs, rate=SAMPLE_RATE, q=FILTER_Q):
    """Unity-peak-gain bandpass biquads as rows ``(b0, a1, a2)``."""
    w0 = 2.0 * np.pi * np.asarray(freqs) / rate
    alpha = np.sin(w0) / (2.0 * q)
    a0 = 1.0 + alpha
    return np.ascontiguousarray(np.stack([alpha / a0, -2.0 * np.cos(w0) / a0,
                                          (1.0 - alpha) / a0], axis=1))


def linear_resample(x: Signal, target_rate_hz: float) -> Signal:
    """Linear interpolation onto a uniform grid at ``target_rate_hz``."""
    n = len(x)
    m = int(math.floor((n - 1) * target_rate_hz / x.rate_hz + 1e-9)) + 1
    pos = np.arange(m) * (x.rate_hz / target_rate_hz)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n - 2) if n > 1 else np.zeros(m, np.int64)
    frac = pos - i0
    s = x.samples
    if n == 1:
        vals = np.full(m, s[0])
    else:
        vals = s[i0] + frac * (s[i0 + 1] - s[i0])
    return Signal(vals, float(target_rate_hz), x.t0_s)


def mix_and_resample(oral: Signal, nasal: Signal) -> Signal:
    """Average the two mics and bring the mix to 16 kHz.

    Peaks above 1.0 are scaled down to 0.9.
    """
    if oral.rate_hz != nasal.rate_hz or len(oral) != len(nasal):
        raise ValueError("oral and nasal signals must share rate and length")
    if len(oral) < 2:
        raise ValueError("signals too short to resample")
    mixed = oral.replace((oral.samples + nasal.samples) / 2.0)
    if mixed.rate_hz == SAMPLE_RATE:
        out = mixed
    else:
        out = linear_resample(mixed, SAMPLE_RATE)
    peak = np.abs(out.samples).max()
    if peak > 1.0:
        out = out.replace(out.samples * (PEAK_LIMIT / peak))
    return out


def segment_utterance(audio: Signal, targets: dict, utterance_id="") -> list:
    """Split into consecutive 2 s segments, zero-padding the last one.

    ``targets`` maps kind -> 100 Hz values (array or Trace).  Segment ``k``
    covers ``[2k, 2k+2)`` s in both audio and targets.
    """
    if audio.rate_hz != SAMPLE_RATE:
        raise ValueError("segment_utterance expects 16 kHz audio")
    if len(audio) == 0:
        raise ValueError("empty audio")
    arrays = {k: np.asarray(getattr(v, "values", v), dtype=np.float64)
              for k, v in targets.items()}
    if arrays:
        n_frames = min(a.shape[0] for a in arrays.values())
        if abs(len(audio) / SAMPLE_RATE - n_frames / TARGET_RATE) > 1.0 / TARGET_RATE + 1e-9:
            raise ValueError("audio and targets differ in duration by more than one frame")
    else:
        n_frames = int(math.ceil(len(audio) * TARGET_RATE / SAMPLE_RATE))
    n_seg = max(-(-len(audio) // SEGMENT_SAMPLES), -(-n_frames // SEGMENT_FRAMES))
    out = []
    for k in range(n_seg):
        chunk = audio.samples[k * SEGMENT_SAMPLES:(k + 1) * SEGMENT_SAMPLES]
        padded = np.zeros(SEGMENT_SAMPLES)
        padded[:chunk.size] = chunk
        valid = min(SEGMENT_FRAMES, n_frames - k * SEGMENT_FRAMES)
        if valid < 1:
            raise ValueError("audio extends past the last target frame")
        tg = {}
        for kind, a in arrays.items():
            t = np.zeros(SEGMENT_FRAMES)
            t[:valid] = a[k * SEGMENT_FRAMES:k * SEGMENT_FRAMES + valid]
            tg[kind] = t
        out.append(Segment(Signal(padded, SAMPLE_RATE, audio.t0_s + k * SEGMENT_S), tg,
                           valid, int(chunk.size), utterance_id, k))
    return out


def audspec_raw(samples: np.ndarray) -> np.ndarray:
    """Filterbank energies before compression, shape ``(128, 250)``."""
    freqs = channel_frequencies()
    coefs = resonator_coefficients(freqs)
    alpha = math.exp(-1.0 / (INTEGRATION_S * SAMPLE_RATE))
    hop = int(round(HOP_S * SAMPLE_RATE))
    return kernels.resonator_bank(np.ascontiguousarray(samples, dtype=np.float64),
                                  coefs, alpha, hop, N_FRAMES)


def audspec(segment_audio: Signal) -> AudSpec:
    """Auditory spectrogram of one 2 s, 16 kHz segment."""
    if segment_audio.rate_hz != SAMPLE_RATE:
        raise ValueError("audspec expects 16 kHz audio")
    if len(segment_audio) != SEGMENT_SAMPLES:
        raise ValueError(f"audspec expects exactly {SEGMENT_SAMPLES} samples")
    e = audspec_raw(segment_audio.samples)
    return AudSpec(np.cbrt(np.maximum(e, 0.0)), channel_frequencies())


def prepare_utterance(utterance_id, speaker_id, oral: Signal, nasal: Signal,
                      targets: dict) -> PreparedUtterance:
    """Mix, align to the target frames, segment and compute AudSpecs."""
    audio = mix_and_resample(oral, nasal)
    arrays = {k: np.asarray(getattr(v, "values", v), dtype=np.float64)
              for k, v in targets.items()}
    hop = SAMPLE_RATE // TARGET_RATE
    n_frames = min([a.shape[0] for a in arrays.values()] + [len(audio) // hop])
    arrays = {k: a[:n_frames] for k, a in arrays.items()}
    audio = audio.replace(audio.samples[:n_frames * hop])
    segments = segment_utterance(audio, arrays, utterance_id)
    for s in segments:
        s.audspec = audspec(s.audio).bins.astype(np.float32)
    return PreparedUtterance(utterance_id, speaker_id, segments, arrays)
