"""On-disk formats: WAV, trace CSV, JSON manifests, AudSpec cache, checkpoints.

Binary layouts (all little-endian):

AudSpec cache (``.adsp``)::

    b"ADSP" | u32 version | u32 F | u32 T | f64 hop_s | F x f64 channel_hz
    | F*T x f32 bins (row-major)

Checkpoint (``.vtck``)::

    b"VTCK" | u32 version | u32 n | n bytes canonical JSON header
    | u32 n_blobs | per blob: u16 name_len, name (utf-8), u8 ndim,
      ndim x u32 dims, u32 count, count x f32 data
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .signal_core import Signal

ADSP_MAGIC = b"ADSP"
ADSP_VERSION = 1
VTCK_MAGIC = b"VTCK"
VTCK_VERSION = 1


class FormatError(ValueError):
    """A file does not match the expected format."""


# ---------------------------------------------------------------------- wav

def write_wav(path, signal: Signal):
    """Write mono 32-bit float PCM."""
    rate = int(round(signal.rate_hz))
    if abs(rate - signal.rate_hz) > 1e-9:
        raise ValueError("WAV requires an integer sample rate")
    wavfile.write(str(path), rate, signal.samples.astype("<f4"))


def read_wav(path) -> Signal:
    """Read mono 16-bit PCM or 32-bit float WAV as a float64 Signal."""
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable WAV ({exc})") from exc
    if data.ndim != 1:
        raise FormatError(f"{path}: only mono WAV is supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}; "
                          "use 16-bit PCM or 32-bit float")
    return Signal(samples, float(rate))


# -------------------------------------------------------------------- traces

def trace_csv_text(times, values) -> str:
    buf = io.StringIO()
    buf.write("time_s,value\n")
    for t, v in zip(times, values):
        buf.write(f"{t:.6g},{v:.6g}\n")
    return buf.getvalue()


def write_trace_csv(path, trace):
    Path(path).write_text(trace_csv_text(trace.times, trace.values))


def read_trace_csv(path, kind="generic"):
    """Read a ``time_s,value`` CSV.  The rate is inferred from the time column."""
    from .physio_params import Trace

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["time_s", "value"]:
        raise FormatError(f"{path}: expected header 'time_s,value'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from exc
    if data.shape[0] < 2:
        raise FormatError(f"{path}: need at least two samples")
    t, v = data[:, 0], data[:, 1]
    step = (t[-1] - t[0]) / (t.size - 1)
    rate = float(np.round(1.0 / step, 3))
    return Trace(v, rate, float(t[0]), kind)


# ----------------------------------------------------------------- manifests

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    Path(path).write_text(canonical_json(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


# ------------------------------------------------------------ audspec cache

def write_adsp(path, bins, channel_freqs_hz, hop_s):
    bins = np.asarray(bins)
    f, t = bins.shape
    freqs = np.asarray(channel_freqs_hz, dtype="<f8")
    if freqs.shape != (f,):
        raise ValueError("channel frequency count must match bins")
    with open(path, "wb") as fh:
        fh.write(ADSP_MAGIC)
        fh.write(struct.pack("<IIId", ADSP_VERSION, f, t, hop_s))
        fh.write(freqs.tobytes())
        fh.write(np.ascontiguousarray(bins, dtype="<f4").tobytes())


def read_adsp(path):
    """Returns ``(bins float32 (F, T), channel_freqs_hz, hop_s)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != ADSP_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, f, t, hop = struct.unpack_from("<IIId", raw, 4)
    if version != ADSP_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 4 + struct.calcsize("<IIId")
    expected = off + 8 * f + 4 * f * t
    if len(raw) != expected:
        raise FormatError(f"{path}: size {len(raw)} != expected {expected}")
    freqs = np.frombuffer(raw, "<f8", f, off).copy()
    bins = np.frombuffer(raw, "<f4", f * t, off + 8 * f).reshape(f, t).astype(np.float32)
    return bins, freqs, hop


# --------------------------------------------------------------- checkpoints

def checkpoint_bytes(header: dict, state) -> bytes:
    out = io.BytesIO()
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out.write(VTCK_MAGIC)
    out.write(struct.pack("<II", VTCK_VERSION, len(text)))
    out.write(text)
    out.write(struct.pack("<I", len(state)))
    for name, arr in state.items():
        arr = np.asarray(arr)
        nb = name.encode()
        out.write(struct.pack("<HB", len(nb), arr.ndim))
        out.write(nb)
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(struct.pack("<I", arr.size))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return out.getvalue()


def parse_checkpoint(raw: bytes):
    """Returns ``(header dict, {name: float32 array})``; raises FormatError."""
    if raw[:4] != VTCK_MAGIC:
        raise FormatError("bad checkpoint magic")
    try:
        version, n = struct.unpack_from("<II", raw, 4)
        if version != VTCK_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        off = 12
        header = json.loads(raw[off:off + n].decode())
        off += n
        (n_blobs,) = struct.unpack_from("<I", raw, off)
        off += 4
        state = {}
        for _ in range(n_blobs):
            name_len, ndim = struct.unpack_from("<HB", raw, off)
            off += 3
            name = raw[off:off + name_len].decode()
            off += name_len
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            (count,) = struct.unpack_from("<I", raw, off)
            off += 4
            if count != int(np.prod(shape)):
                raise FormatError(f"blob {name}: count {count} does not match shape {shape}")
            if off + 4 * count > len(raw):
                raise FormatError(f"blob {name}: truncated")
            state[name] = np.frombuffer(raw, "<f4", count, off).reshape(shape).astype(np.float32)
            off += 4 * count
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint ({exc})") from exc
    if off != len(raw):
        raise FormatError("trailing bytes after checkpoint blobs")
    return header, state


def save_checkpoint(path, model, targets, meta=None):
    header = {"model": model.config.to_dict(), "targets": list(targets), "meta": meta or {}}
    Path(path).write_bytes(checkpoint_bytes(header, model.state_dict()))


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; shapes are validated against the
    stored config.  Returns ``(model, targets, meta)``."""
    from .neural_tcn import ModelConfig, build_model

    header, state = parse_checkpoint(Path(path).read_bytes())
    try:
        cfg = ModelConfig.from_dict(header["model"])
        targets = list(header["targets"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid checkpoint header ({exc})") from exc
    if len(targets) != cfg.n_targets:
        raise FormatError(f"{path}: {len(targets)} targets but n_targets={cfg.n_targets}")
    model = build_model(cfg)
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return model, targets, header.get("meta", {})


# ------------------------------------------------------------------ history

def history_csv_text(history) -> str:
    lines = ["epoch,train_loss,val_loss,lr"]
    for h in history:
        lines.append(f"{h['epoch']},{h['train_loss']!r},{h['val_loss']!r},{h['lr']!r}")
    return "\n".join(lines) + "\n"


def read_history_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
             "val_loss": float(r["val_loss"]), "lr": float(r["lr"])} for r in rows]
