"""PPMC scoring, the per-utterance evaluation protocol, and gesture landmarks."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

TARGET_LABELS = {
    "nasalance": "Nasalance",
    "voicing": "Voicing",
    "periodicity": "Perio.",
    "aperiodicity": "Aperio.",
    "pitch": "Pitch",
}


def ppmc(a, b) -> float:
    """Pearson product-moment correlation of two equal-length sequences."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("ppmc inputs must have equal length")
    if a.size < 2:
        raise ValueError("ppmc needs at least 2 samples")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(np.dot(da, da))
    sb = math.sqrt(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        raise ValueError("correlation undefined for a constant sequence")
    r = float(np.dot(da, db) / (sa * sb))
    return max(-1.0, min(1.0, r))


@dataclass
class TargetScore:
    ppmc_mean: float
    ppmc_std: float
    n_utterances: int


@dataclass
class EvalReport:
    tag: str
    scores: dict = field(default_factory=dict)

    @property
    def average(self) -> float:
        return float(np.mean([s.ppmc_mean for s in self.scores.values()]))

    def to_dict(self):
        return {
            "tag": self.tag,
            "targets": {k: vars(v) for k, v in self.scores.items()},
            "average": self.average,
        }


def evaluate_model(predict, utterances, targets, tag="SI") -> EvalReport:
    """Score a predictor per utterance and average across utterances.

    Args:
        predict: callable mapping an AudSpec batch ``(B, 128, 250)`` to
            predictions ``(B, len(targets), 200)``.
        utterances: iterable of prepared utterances (see
            :class:`nasality_si.acoustic_frontend.PreparedUtterance`).
        targets: target kinds, in the predictor's output order.
        tag: report label, e.g. ``"SI-SF"``.

    Only unpadded frames enter the score.  Utterances whose ground truth is
    constant for a target are skipped for that target, since the correlation
    is undefined there.
    """
    per_target = {t: [] for t in targets}
    for utt in utterances:
        missing = [t for t in targets if t not in utt.targets]
        if missing:
            raise KeyError(f"utterance {utt.utterance_id} lacks ground truth for {missing}")
        x = np.stack([s.audspec for s in utt.segments])
        pred = np.asarray(predict(x))
        if pred.shape[:2] != (len(utt.segments), len(targets)):
            raise ValueError(f"predictor returned shape {pred.shape}")
        joined = np.concatenate(
            [pred[i, :, :s.valid_frames] for i, s in enumerate(utt.segments)], axis=1)
        for j, t in enumerate(targets):
            truth = utt.targets[t][:joined.shape[1]]
            est = joined[j, :truth.shape[0]]
            if np.ptp(truth) == 0 or np.ptp(est) == 0:
                continue
            per_target[t].append(ppmc(est, truth))
    report = EvalReport(tag)
    for t, vals in per_target.items():
        if not vals:
            raise ValueError(f"no scorable utterances for target {t!r}")
        v = np.asarray(vals)
        report.scores[t] = TargetScore(float(v.mean()), float(v.std()), int(v.size))
    return report


def format_table(rows, targets=tuple(TARGET_LABELS)):
    """Render ``{tag: {target: (mean, std)}}`` as a per-target PPMC text table, mean(std) per cell."""
    header = [""] + [TARGET_LABELS.get(t, t) for t in targets] + ["Average"]
    lines = [header]
    for tag, cells in rows.items():
        line = [tag]
        means = []
        for t in targets:
            if t in cells:
                m, s = cells[t]
                means.append(m)
                line.append(f"{m:.4f}({s:.2f})")
            else:
                line.append("-")
        if len(means) == len(targets):
            avg = cells.get("__average__", (float(np.mean(means)), float("nan")))
            line.append(f"{avg[0]:.4f}({avg[1]:.2f})" if not math.isnan(avg[1])
                        else f"{avg[0]:.4f}")
        else:
            line.append("-")
        lines.append(line)
    widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                     for r in lines)


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tag", "target", "ppmc_mean", "ppmc_std", "n_utterances"])
    for t, s in report.scores.items():
        w.writerow([report.tag, t, f"{s.ppmc_mean:.6g}", f"{s.ppmc_std:.6g}", s.n_utterances])
    return buf.getvalue()


# ---------------------------------------------------------------- landmarks

@dataclass(frozen=True)
class GestureEvent:
    kind: str
    time_s: float
    gesture_index: int
    trace_kind: str = "generic"


VELOCITY_FRACTION = 0.2
SMOOTH_FRAMES = 5


def _smooth(v, n):
    if n <= 1 or v.size < n:
        return v
    kernel = np.ones(n) / n
    padded = np.pad(v, (n // 2, n - 1 - n // 2), mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def detect_landmarks(trace, smooth_frames=SMOOTH_FRAMES,
                     fraction=VELOCITY_FRACTION) -> list:
    """Onset/peak/offset events of each raised gesture in a trace.

    Peaks are local maxima above ``min + 0.5*range``.  The onset is the last
    frame before the steepest rise where velocity drops below ``fraction`` of
    that rise's peak velocity; the offset mirrors this after the steepest
    fall.  A flat trace yields no events.
    """
    v = np.asarray(trace.values, dtype=np.float64)
    if v.size < 10:
        raise ValueError("trace too short for landmark detection")
    rng = np.ptp(v)
    if rng == 0:
        return []
    x = _smooth((v - v.min()) / rng, smooth_frames)
    vel = np.gradient(x) * trace.rate_hz
    # Pad so maxima at either end of the trace still register as peaks.
    peaks, _ = find_peaks(np.pad(x, 1, constant_values=-1.0), height=0.5)
    peaks = peaks - 1
    # Merge peaks not separated by a dip below the half-range line.
    kept = []
    for p in peaks:
        if kept and x[kept[-1]:p + 1].min() >= 0.5:
            if x[p] > x[kept[-1]]:
                kept[-1] = p
            continue
        kept.append(p)
    events = []
    times = trace.t0_s + np.arange(v.size) / trace.rate_hz
    for gi, p in enumerate(kept):
        prev_p = kept[gi - 1] if gi > 0 else 0
        next_p = kept[gi + 1] if gi + 1 < len(kept) else x.size - 1
        lo = prev_p + int(np.argmin(x[prev_p:p + 1]))
        hi = p + int(np.argmin(x[p:next_p + 1]))
        rise = vel[lo:p + 1]
        fall = vel[p:hi + 1]
        on = lo
        if rise.size and rise.max() > 0:
            vmax_i = lo + int(np.argmax(rise))
            thr = fraction * vel[vmax_i]
            below = np.flatnonzero(vel[lo:vmax_i + 1] < thr)
            on = lo + int(below[-1]) if below.size else lo
        off = hi
        if fall.size and fall.min() < 0:
            vmin_i = p + int(np.argmin(fall))
            thr = fraction * vel[vmin_i]
            above = np.flatnonzero(vel[vmin_i:hi + 1] > thr)
            off = vmin_i + int(above[0]) if above.size else hi
        kind = trace.kind if hasattr(trace, "kind") else "generic"
        events.append(GestureEvent("onset", float(times[on]), gi, kind))
        events.append(GestureEvent("peak", float(times[p]), gi, kind))
        events.append(GestureEvent("offset", float(times[off]), gi, kind))
    return events


def gestures(events):
    """Group events by gesture index: ``{index: {kind: time_s}}``."""
    out = {}
    for e in events:
        out.setdefault(e.gesture_index, {})[e.kind] = e.time_s
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class LagRecord:
    a_index: int
    b_index: int
    pair: str
    lag_s: float


DEFAULT_PAIRS = (("onset", "onset"), ("peak", "peak"), ("offset", "offset"))


def relative_timing(a_events, b_events, pairs=DEFAULT_PAIRS, max_distance_s=1.0):
    """Signed lags ``a.X - b.Y`` between each gesture of ``a`` and its
    nearest (by peak time) gesture of ``b`` within ``max_distance_s``."""
    ga, gb = gestures(a_events), gestures(b_events)
    if not ga or not gb:
        raise ValueError("both event lists must be non-empty")
    out = []
    b_items = list(gb.items())
    for ia, ea in ga.items():
        ib, eb = min(b_items, key=lambda kv: abs(kv[1]["peak"] - ea["peak"]))
        if abs(eb["peak"] - ea["peak"]) > max_distance_s:
            continue
        for ka, kb in pairs:
            out.append(LagRecord(ia, ib, f"{ka}-{kb}", ea[ka] - eb[kb]))
    return out


def landmarks_csv(events) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gesture_index", "kind", "time_s"])
    for e in events:
        w.writerow([e.gesture_index, e.kind, f"{e.time_s:.6g}"])
    return buf.getvalue()
