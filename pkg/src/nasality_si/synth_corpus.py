"""Synthetic paired recordings with known velopharyngeal ground truth.

A deliberately simple source-filter generator: a jittered glottal pulse
train excites an oral branch (two time-varying formant resonators) and a
nasal branch (fixed 280 Hz resonance plus a 1 kHz anti-resonance).  The
velopharyngeal opening ``v(t)`` gates the two branches into the oral and
nasal microphones, drives an HSV-like intensity trace (bright when closed),
and is exported at 100 Hz as ground truth.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import formats, kernels
from .physio_params import Trace
from .signal_core import Signal

MIC_RATE = 51200
HSV_RATE = 1000
TRUTH_RATE = 100
VP_TRANSITION_S = 0.080
GATE_TRANSITION_S = 0.010
COEF_BLOCK = 64
LEAKAGE = 0.05
ORAL_DAMPING = 0.8
MIC_LEVEL = 0.3
EGG_LEVEL = 0.5
HSV_OPEN, HSV_CLOSED = 0.2, 0.8
HSV_NOISE = 0.02
JITTER = 0.03
NOISE_FLOOR = 0.01
BURST_LEVEL = 0.3
AMBIENT_LEVEL = 1e-4  # room noise on the oral side, about -80 dB
SEGMENT_KINDS = ("oral_vowel", "nasal_consonant", "oral_consonant", "silence")
CONTRASTS = ("rime_nasal", "onset_nasal", "none")

VOWELS = {  # (F1, F2) in Hz for a reference speaker
    "a": (730.0, 1090.0), "i": (270.0, 2290.0), "u": (300.0, 870.0),
    "e": (530.0, 1840.0), "o": (570.0, 840.0), "ae": (660.0, 1720.0),
}
NASAL_FORMANTS = (250.0, 1100.0)
CONSONANT_FORMANTS = (400.0, 1700.0)


@dataclass(frozen=True)
class SpeakerProfile:
    f0_base_hz: float
    formant_scale: float
    nasal_coupling_gain: float
    seed: int
    sex: str = "F"

    def __post_init__(self):
        if not 90 <= self.f0_base_hz <= 230:
            raise ValueError("f0_base_hz outside [90, 230]")
        if not 0.85 <= self.formant_scale <= 1.15:
            raise ValueError("formant_scale outside [0.85, 1.15]")
        if not 0.7 <= self.nasal_coupling_gain <= 1.0:
            raise ValueError("nasal_coupling_gain outside [0.7, 1.0]")

    @classmethod
    def from_seed(cls, seed: int, sex: str = "F") -> "SpeakerProfile":
        rng = np.random.default_rng([seed, 11])
        if sex == "M":
            f0 = rng.uniform(90.0, 140.0)
            fs = rng.uniform(0.85, 1.0)
        else:
            f0 = rng.uniform(170.0, 230.0)
            fs = rng.uniform(1.0, 1.15)
        return cls(float(f0), float(fs), float(rng.uniform(0.7, 1.0)), int(seed), sex)


@dataclass(frozen=True)
class ScriptSegment:
    kind: str
    duration_s: float
    vp_target: float = 0.0
    voiced: bool = True
    formants: tuple | None = None


@dataclass(frozen=True)
class GestureScript:
    segments: tuple
    contrast: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.contrast not in CONTRASTS:
            raise ValueError(f"unknown contrast tag {self.contrast!r}")
        if not self.segments:
            raise ValueError("script has no segments")
        for s in self.segments:
            if s.kind not in SEGMENT_KINDS:
                raise ValueError(f"unknown segment kind {s.kind!r}")
            if not s.duration_s > 0:
                raise ValueError("segment durations must be positive")
            if not 0.0 <= s.vp_target <= 1.0:
                raise ValueError("vp_target must lie in [0, 1]")
            if s.kind == "silence" and s.voiced:
                raise ValueError("silence cannot be voiced")
            if (s.kind in ("oral_vowel", "oral_consonant", "silence") and s.vp_target > 0
                    and self.contrast == "none"):
                raise ValueError("oral segments need a contrast tag to carry vp_target > 0")

    @property
    def duration_s(self):
        return float(sum(s.duration_s for s in self.segments))

    def to_dict(self):
        return {"contrast": self.contrast,
                "segments": [{**asdict(s), "formants": list(s.formants) if s.formants else None}
                             for s in self.segments]}

    @classmethod
    def from_dict(cls, d):
        segs = [ScriptSegment(s["kind"], s["duration_s"], s["vp_target"], s["voiced"],
                              tuple(s["formants"]) if s.get("formants") else None)
                for s in d["segments"]]
        return cls(tuple(segs), d.get("contrast", "none"))


@dataclass
class Utterance:
    oral: Signal
    nasal: Signal
    egg: Signal
    hsv: Trace
    vp_truth: Trace
    extras: dict = field(default_factory=dict)


def _blend(t, bounds, values, half_widths):
    """Piecewise-constant ``values`` between ``bounds`` with raised-cosine
    transitions of the given half-widths centered on each interior bound."""
    idx = np.clip(np.searchsorted(bounds, t, side="right") - 1, 0, len(values) - 1)
    out = np.asarray(values, dtype=np.float64)[idx]
    for j in range(1, len(values)):
        h = half_widths[j - 1]
        if h <= 0 or values[j] == values[j - 1]:
            continue
        tb = bounds[j]
        lo, hi = np.searchsorted(t, [tb - h, tb + h])
        u = (t[lo:hi] - (tb - h)) / (2 * h)
        out[lo:hi] = values[j - 1] + (values[j] - values[j - 1]) * 0.5 * (1 - np.cos(np.pi * u))
    return out


def _half_widths(durations, width):
    d = np.asarray(durations)
    return [min(width / 2, d[j - 1] / 2, d[j] / 2) for j in range(1, d.size)]


def _resonator_row(freq, bw, rate):
    """Unity-DC-gain two-pole resonator as ``(b0, b1, b2, a1, a2)``."""
    r = math.exp(-math.pi * bw / rate)
    c = 2 * r * math.cos(2 * math.pi * freq / rate)
    return (1 - c + r * r, 0.0, 0.0, -c, r * r)


def _segment_formants(seg: ScriptSegment, scale: float):
    if seg.formants is not None:
        f1, f2 = seg.formants
    elif seg.kind == "nasal_consonant":
        f1, f2 = NASAL_FORMANTS
    elif seg.kind == "oral_vowel":
        f1, f2 = VOWELS["a"]
    else:
        f1, f2 = CONSONANT_FORMANTS
    return f1 * scale, f2 * scale


def _glottal_source(t, f0, gate, rng):
    """Differentiated Rosenberg pulse train and the fundamental's phase."""
    n = t.size
    rate = MIC_RATE
    flow = np.zeros(n)
    phase = np.zeros(n)
    pos = 0.0
    k = 0
    while pos < n:
        i = int(pos)
        period = rate / (f0[min(i, n - 1)] * (1.0 + rng.uniform(-JITTER, JITTER)))
        start, stop = int(math.ceil(pos)), min(n, int(math.ceil(pos + period)))
        if stop > start:
            m = np.arange(start, stop) - pos
            phase[start:stop] = 2 * np.pi * (k + m / period)
            rise, fall = 0.4 * period, 0.2 * period
            g = np.zeros(m.size)
            up = m < rise
            g[up] = 0.5 * (1 - np.cos(np.pi * m[up] / rise))
            dn = (m >= rise) & (m < rise + fall)
            g[dn] = np.cos(0.5 * np.pi * (m[dn] - rise) / fall)
            flow[start:stop] = g
        pos += period
        k += 1
    dflow = np.diff(flow, prepend=0.0) * (rate / (np.pi * f0))
    return dflow * gate, phase


def synthesize_utterance(profile: SpeakerProfile, script: GestureScript, seed: int,
                         ambient_level: float = AMBIENT_LEVEL) -> Utterance:
    """Render one script for one speaker.

    ``ambient_level`` is the RMS of a room-noise floor picked up on the oral
    side (and leaked to the nasal mic like any oral sound).  Without it the
    nasalance ratio in pauses is decided by the high-pass filter's residue
    of neighbouring speech, which is arbitrary.  Pass 0 for exact silence.
    """
    total = script.duration_s
    if not 0.5 <= total <= 12.0:
        raise ValueError("script duration must lie in [0.5, 12] s")
    rng = np.random.default_rng([profile.seed, seed])
    n = int(round(total * MIC_RATE))
    t = np.arange(n) / MIC_RATE
    segs = script.segments
    durs = [s.duration_s for s in segs]
    bounds = np.concatenate([[0.0], np.cumsum(durs)])

    v = _blend(t, bounds, [s.vp_target for s in segs], _half_widths(durs, VP_TRANSITION_S))
    gate_hw = _half_widths(durs, GATE_TRANSITION_S)
    voiced = _blend(t, bounds, [1.0 if s.voiced else 0.0 for s in segs], gate_hw)
    unvoiced = _blend(t, bounds, [1.0 if (not s.voiced and s.kind != "silence") else 0.0
                                  for s in segs], gate_hw)

    f0 = profile.f0_base_hz * (1.1 - 0.2 * t / total)
    pulses, phase = _glottal_source(t, f0, voiced, rng)
    noise = rng.standard_normal(n)
    source = pulses + NOISE_FLOOR * noise * voiced + BURST_LEVEL * noise * unvoiced

    fm = [_segment_formants(s, profile.formant_scale) for s in segs]
    ftw = _half_widths(durs, VP_TRANSITION_S)
    n_blocks = -(-n // COEF_BLOCK)
    tb = (np.arange(n_blocks) * COEF_BLOCK + COEF_BLOCK / 2) / MIC_RATE
    f1 = _blend(tb, bounds, [f[0] for f in fm], ftw)
    f2 = _blend(tb, bounds, [f[1] for f in fm], ftw)
    c1 = np.array([_resonator_row(f, 90.0, MIC_RATE) for f in f1])
    c2 = np.array([_resonator_row(f, 130.0, MIC_RATE) for f in f2])
    oral = kernels.biquad_blocks(kernels.biquad_blocks(source, c1, COEF_BLOCK), c2, COEF_BLOCK)

    res = np.array([_resonator_row(280.0, 100.0, MIC_RATE)])
    r, w = 0.95, 2 * math.pi * 1000.0 / MIC_RATE
    zb = np.array([1.0, -2 * r * math.cos(w), r * r])
    zb /= zb.sum()
    notch = np.array([[zb[0], zb[1], zb[2], 0.0, 0.0]])
    nasal = kernels.biquad_blocks(source, np.repeat(res, n_blocks, 0), COEF_BLOCK)
    nasal = kernels.biquad_blocks(nasal, np.repeat(notch, n_blocks, 0), COEF_BLOCK)

    # Lip/nostril radiation, then unit RMS per branch.
    oral = np.diff(oral, prepend=0.0)
    nasal = np.diff(nasal, prepend=0.0)
    for arr in (oral, nasal):
        rms = math.sqrt(np.mean(arr * arr))
        if rms > 0:
            arr /= rms

    oral_rad = (1.0 - ORAL_DAMPING * v) * oral
    if ambient_level > 0:
        oral_rad = oral_rad + (ambient_level / MIC_LEVEL) * rng.standard_normal(n)
    nasal_rad = profile.nasal_coupling_gain * v * nasal
    oral_mic = MIC_LEVEL * (oral_rad + LEAKAGE * nasal_rad)
    nasal_mic = MIC_LEVEL * (nasal_rad + LEAKAGE * oral_rad)
    egg = EGG_LEVEL * np.sin(phase) * voiced

    th = np.arange(int(math.floor(total * HSV_RATE))) / HSV_RATE
    vh = _blend(th, bounds, [s.vp_target for s in segs], _half_widths(durs, VP_TRANSITION_S))
    hsv = HSV_OPEN + (HSV_CLOSED - HSV_OPEN) * (1.0 - vh) + HSV_NOISE * rng.standard_normal(th.size)

    k = MIC_RATE // TRUTH_RATE
    m = n // k
    vp = v[:m * k].reshape(m, k).mean(axis=1)
    return Utterance(
        Signal(oral_mic, MIC_RATE), Signal(nasal_mic, MIC_RATE), Signal(egg, MIC_RATE),
        Trace(hsv, HSV_RATE, 0.0, "hsv_intensity"),
        Trace(vp, TRUTH_RATE, (k - 1) / (2.0 * MIC_RATE), "generic"),
        {"v": v, "voiced_gate": voiced, "bounds": bounds},
    )


# ------------------------------------------------------------------ scripts

def contrast_script(kind: str, rng=None) -> GestureScript:
    """Matched "hoe me" (onset nasal) / "home E" (rime nasal) scripts.

    Both have the same total duration.  In the rime version the velum opens
    during the preceding vowel and the nasal is longer, so the port stays
    open longer.
    """
    S = ScriptSegment
    o, i, e = VOWELS["o"], VOWELS["i"], VOWELS["e"]
    if kind == "onset_nasal":
        segs = [S("silence", 0.25, 0.0, False), S("oral_consonant", 0.08, 0.0, False),
                S("oral_vowel", 0.24, 0.0, True, o), S("nasal_consonant", 0.09, 1.0, True),
                S("oral_vowel", 0.26, 0.0, True, i), S("silence", 0.25, 0.0, False)]
    elif kind == "rime_nasal":
        segs = [S("silence", 0.25, 0.0, False), S("oral_consonant", 0.08, 0.0, False),
                S("oral_vowel", 0.13, 0.0, True, o), S("oral_vowel", 0.11, 0.7, True, o),
                S("nasal_consonant", 0.13, 1.0, True), S("oral_vowel", 0.22, 0.0, True, e),
                S("silence", 0.25, 0.0, False)]
    else:
        raise ValueError("contrast kind must be 'onset_nasal' or 'rime_nasal'")
    return GestureScript(tuple(segs), kind)


def random_script(rng, duration_s: float) -> GestureScript:
    """Random syllable sequence of roughly ``duration_s`` seconds."""
    S = ScriptSegment
    vowel_names = sorted(VOWELS)
    segs = [S("silence", float(rng.uniform(0.15, 0.3)), 0.0, False)]
    tail = float(rng.uniform(0.15, 0.3))
    elapsed = segs[0].duration_s
    while elapsed < duration_s - tail - 0.3:
        if rng.random() < 0.3:
            onset = S("nasal_consonant", float(rng.uniform(0.07, 0.12)), 1.0, True)
        else:
            onset = S("oral_consonant", float(rng.uniform(0.06, 0.11)), 0.0, bool(rng.random() < 0.5))
        vowel = S("oral_vowel", float(rng.uniform(0.12, 0.25)), 0.0, True,
                  VOWELS[vowel_names[rng.integers(len(vowel_names))]])
        syl = [onset, vowel]
        if rng.random() < 0.25:
            syl.append(S("nasal_consonant", float(rng.uniform(0.08, 0.12)), 1.0, True))
        if rng.random() < 0.15:
            syl.append(S("silence", float(rng.uniform(0.1, 0.2)), 0.0, False))
        segs += syl
        elapsed += sum(s.duration_s for s in syl)
    if not any(s.kind == "nasal_consonant" for s in segs):
        segs[1] = S("nasal_consonant", float(rng.uniform(0.07, 0.12)), 1.0, True)
    segs.append(S("silence", tail, 0.0, False))
    return GestureScript(tuple(segs), "none")


# ------------------------------------------------------------------- corpus

MALE_SLOTS = (1, 4, 6)  # 3 of every 8 speakers, as in the reference cohort


def speaker_sex(index: int) -> str:
    return "M" if index % 8 in MALE_SLOTS else "F"


def corpus_plan(n_speakers: int, utterances_per_speaker: int, seed: int):
    """Deterministic (speakers, utterance specs) without touching disk."""
    if n_speakers < 3:
        raise ValueError("need at least 3 speakers")
    if utterances_per_speaker < 2:
        raise ValueError("need at least 2 utterances per speaker (one contrast pair)")
    speakers, utts = [], []
    for si in range(n_speakers):
        sid = f"spk{si + 1:02d}"
        sseed = int(np.random.SeedSequence([seed, si]).generate_state(1)[0])
        profile = SpeakerProfile.from_seed(sseed, speaker_sex(si))
        speakers.append((sid, profile))
        rng = np.random.default_rng([sseed, 3])
        for ui in range(utterances_per_speaker):
            if ui == 0:
                script = contrast_script("onset_nasal")
            elif ui == 1:
                script = contrast_script("rime_nasal")
            else:
                script = random_script(rng, float(rng.uniform(2.0, 4.5)))
            utts.append((f"{sid}_u{ui + 1:02d}", sid, profile, script, ui))
    return speakers, utts


def build_corpus(n_speakers: int, utterances_per_speaker: int, seed: int, out_dir) -> dict:
    """Synthesize a corpus to ``out_dir`` and return its manifest dict.

    Layout: ``wav/<utt>_{oral,nasal,egg}.wav``, ``traces/<utt>_{hsv,vp}.csv``
    and ``manifest.json``.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    speakers, plan = corpus_plan(n_speakers, utterances_per_speaker, seed)
    records = []
    for uid, sid, profile, script, ui in plan:
        u = synthesize_utterance(profile, script, ui)
        paths, digests = {}, {}
        for name, sig in (("oral", u.oral), ("nasal", u.nasal), ("egg", u.egg)):
            rel = f"wav/{uid}_{name}.wav"
            formats.write_wav(out / rel, sig)
            paths[name] = rel
            digests[name] = file_sha256(out / rel)
        for name, tr in (("hsv", u.hsv), ("vp", u.vp_truth)):
            rel = f"traces/{uid}_{name}.csv"
            formats.write_trace_csv(out / rel, tr)
            paths[name] = rel
            digests[name] = file_sha256(out / rel)
        records.append({"id": uid, "speaker_id": sid, "paths": paths, "sha256": digests,
                        "duration_s": round(len(u.oral) / MIC_RATE, 6),
                        "contrast": script.contrast, "script": script.to_dict()})
    manifest = {
        "format": "nasality-si-corpus/1",
        "seed": seed,
        "utterances_per_speaker": utterances_per_speaker,
        "speakers": [{"id": sid, "sex": p.sex, "profile_seed": p.seed,
                      "f0_base_hz": round(p.f0_base_hz, 6),
                      "formant_scale": round(p.formant_scale, 6),
                      "nasal_coupling_gain": round(p.nasal_coupling_gain, 6)}
                     for sid, p in speakers],
        "utterances": records,
    }
    formats.write_json(out / "manifest.json", manifest)
    return manifest


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def corpus_is_current(out_dir, n_speakers, utterances_per_speaker, seed) -> bool:
    """True if ``out_dir`` holds this exact corpus with untouched files."""
    out = Path(out_dir)
    try:
        m = formats.read_json(out / "manifest.json")
    except (OSError, formats.FormatError):
        return False
    if (m.get("seed"), m.get("utterances_per_speaker"), len(m.get("speakers", []))) != \
            (seed, utterances_per_speaker, n_speakers):
        return False
    for rec in m.get("utterances", []):
        for name, rel in rec["paths"].items():
            p = out / rel
            if not p.is_file() or file_sha256(p) != rec.get("sha256", {}).get(name):
                return False
    return True
