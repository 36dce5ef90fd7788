"""Corpus -> network-ready utterances (targets + cached AudSpec segments).

Dataset directory layout::

    dataset.json                     utterance ids, speakers, targets, segment counts
    targets/<utt>_<kind>.csv         100 Hz target traces
    audspec/<utt>_<k>.adsp           one cached AudSpec per 2 s segment
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import acoustic_frontend as af
from . import formats
from .physio_params import NasalanceConfig, Trace, app_surrogate, compute_nasalance, compute_voicing
from .signal_core import Signal

ALL_TARGETS = ("nasalance", "voicing", "periodicity", "aperiodicity", "pitch")
TARGET_SETS = {
    "nasalance_only": ("nasalance",),
    "with_source_features": ALL_TARGETS,
}
DATASET_FORMAT = "nasality-si-dataset/1"


def target_kinds(name) -> tuple:
    try:
        return TARGET_SETS[name]
    except KeyError:
        raise ValueError(f"unknown target set {name!r}; choose from {sorted(TARGET_SETS)}") from None


def utterance_targets(oral: Signal, nasal: Signal, egg: Signal | None,
                      cfg: NasalanceConfig = NasalanceConfig()) -> dict:
    """All five 100 Hz targets for one recording, trimmed to a common length.

    APP features come from the 16 kHz mix the network hears, so the
    source targets stay aligned with the network input.
    """
    out = {"nasalance": compute_nasalance(oral, nasal, cfg).values}
    if egg is not None:
        out["voicing"] = compute_voicing(egg, cfg).values
    per, aper, pitch = app_surrogate(af.mix_and_resample(oral, nasal), cfg.target_rate_hz)
    out.update(periodicity=per.values, aperiodicity=aper.values, pitch=pitch.values)
    n = min(v.size for v in out.values())
    return {k: np.asarray(v[:n], dtype=np.float64) for k, v in out.items()}


def prepare_from_corpus(corpus_dir, utterance_ids=None, cfg=NasalanceConfig()) -> dict:
    """Load a synthetic/recorded corpus and prepare utterances in memory.

    Returns ``{utt_id: PreparedUtterance}`` in manifest order.
    """
    corpus_dir = Path(corpus_dir)
    manifest = formats.read_json(corpus_dir / "manifest.json")
    wanted = None if utterance_ids is None else set(utterance_ids)
    out = {}
    for rec in manifest["utterances"]:
        if wanted is not None and rec["id"] not in wanted:
            continue
        paths = rec["paths"]
        oral = formats.read_wav(corpus_dir / paths["oral"])
        nasal = formats.read_wav(corpus_dir / paths["nasal"])
        egg = formats.read_wav(corpus_dir / paths["egg"]) if paths.get("egg") else None
        targets = utterance_targets(oral, nasal, egg, cfg)
        out[rec["id"]] = af.prepare_utterance(rec["id"], rec["speaker_id"], oral, nasal, targets)
    return out


def write_dataset(prepared: dict, out_dir) -> dict:
    out = Path(out_dir)
    (out / "targets").mkdir(parents=True, exist_ok=True)
    (out / "audspec").mkdir(parents=True, exist_ok=True)
    records = []
    freqs = af.channel_frequencies()
    for uid, utt in prepared.items():
        for kind, vals in utt.targets.items():
            formats.write_trace_csv(out / "targets" / f"{uid}_{kind}.csv",
                                    Trace(vals, af.TARGET_RATE, 0.0, "generic"))
        for s in utt.segments:
            formats.write_adsp(out / "audspec" / f"{uid}_{s.segment_index:03d}.adsp",
                               s.audspec, freqs, af.HOP_S)
        records.append({"id": uid, "speaker_id": utt.speaker_id,
                        "n_segments": len(utt.segments),
                        "n_frames": int(next(iter(utt.targets.values())).size),
                        "targets": sorted(utt.targets)})
    manifest = {"format": DATASET_FORMAT, "utterances": records}
    formats.write_json(out / "dataset.json", manifest)
    return manifest


def load_dataset(data_dir, utterance_ids=None) -> dict:
    """Read a dataset directory back into ``{utt_id: PreparedUtterance}``.

    Segments carry the cached AudSpec only (``audio`` is None).  Target CSVs
    store 6 significant digits, so targets are rounded relative to the
    in-memory pipeline.
    """
    data_dir = Path(data_dir)
    manifest = formats.read_json(data_dir / "dataset.json")
    if manifest.get("format") != DATASET_FORMAT:
        raise formats.FormatError(f"{data_dir}: not a dataset directory")
    wanted = None if utterance_ids is None else set(utterance_ids)
    out = {}
    for rec in manifest["utterances"]:
        uid = rec["id"]
        if wanted is not None and uid not in wanted:
            continue
        targets = {}
        for kind in rec["targets"]:
            tr = formats.read_trace_csv(data_dir / "targets" / f"{uid}_{kind}.csv")
            targets[kind] = tr.values
        n_frames = rec["n_frames"]
        segs = []
        for k in range(rec["n_segments"]):
            bins, _, _ = formats.read_adsp(data_dir / "audspec" / f"{uid}_{k:03d}.adsp")
            valid = min(af.SEGMENT_FRAMES, n_frames - k * af.SEGMENT_FRAMES)
            tg = {}
            for kind, a in targets.items():
                t = np.zeros(af.SEGMENT_FRAMES)
                t[:valid] = a[k * af.SEGMENT_FRAMES:k * af.SEGMENT_FRAMES + valid]
                tg[kind] = t
            segs.append(af.Segment(None, tg, valid, valid * (af.SAMPLE_RATE // af.TARGET_RATE),
                                   uid, k, bins))
        out[uid] = af.PreparedUtterance(uid, rec["speaker_id"], segs, targets)
    if wanted is not None and wanted - set(out):
        raise KeyError(f"utterances missing from dataset: {sorted(wanted - set(out))}")
    return out
