"""Command-line entry point: ``nasality-si <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import shutil
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import acoustic_frontend as af
from . import dataset as ds
from . import evaluation as ev
from . import formats
from . import physio_params as pp
from . import synth_corpus as sc
from . import training as tr
from .neural_tcn import ModelConfig


class ConfigError(Exception):
    """Invalid arguments or configuration (exit code 2)."""


class UsageParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


# -------------------------------------------------------------- run config

@dataclass
class RunConfig:
    nasalance: pp.NasalanceConfig = field(default_factory=pp.NasalanceConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    paths: dict = field(default_factory=dict)

    SECTIONS = ("nasalance", "model", "train", "paths")
    PATH_KEYS = ("corpus", "data", "out")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping of sections")
        unknown = set(d) - set(cls.SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            nas = d.get("nasalance", {})
            bad = set(nas) - set(pp.NasalanceConfig.__dataclass_fields__)
            if bad:
                raise ValueError(f"unknown nasalance config keys: {sorted(bad)}")
            paths = dict(d.get("paths", {}))
            bad = set(paths) - set(cls.PATH_KEYS)
            if bad:
                raise ValueError(f"unknown path keys: {sorted(bad)}")
            return cls(pp.NasalanceConfig(**nas), ModelConfig.from_dict(d.get("model", {})),
                       tr.TrainConfig.from_dict(d.get("train", {})), paths)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            return cls.from_dict(formats.read_json(path))
        except (OSError, formats.FormatError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc

    def to_dict(self):
        return {"nasalance": vars(self.nasalance).copy(), "model": self.model.to_dict(),
                "train": self.train.to_dict(), "paths": dict(self.paths)}


def _override(cfg, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return cfg
    try:
        return replace(cfg, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ------------------------------------------------------------------ commands

def cmd_synth(args):
    out = Path(args.out)
    if args.speakers < 3 or args.utts_per_speaker < 2:
        raise ConfigError("--speakers must be >= 3 and --utts-per-speaker >= 2")
    if not args.force and sc.corpus_is_current(out, args.speakers, args.utts_per_speaker, args.seed):
        print(f"{out / 'manifest.json'} (up to date)")
        return 0
    if args.force and out.exists():
        for sub in ("wav", "traces"):
            shutil.rmtree(out / sub, ignore_errors=True)
    m = sc.build_corpus(args.speakers, args.utts_per_speaker, args.seed, out)
    print(out / "manifest.json")
    print(f"{len(m['speakers'])} speakers, {len(m['utterances'])} utterances", file=sys.stderr)
    return 0


def _app_csv(per, aper, pitch):
    lines = ["time_s,periodicity,aperiodicity,pitch"]
    for t, a, b, c in zip(per.times, per.values, aper.values, pitch.values):
        lines.append(f"{t:.6g},{a:.6g},{b:.6g},{c:.6g}")
    return "\n".join(lines) + "\n"


def cmd_extract(args):
    cfg = RunConfig.load(args.config).nasalance
    need = {"nasalance": ("oral", "nasal"), "voicing": ("egg",), "app": ("oral",)}[args.kind]
    missing = [f"--{n}" for n in need if getattr(args, n) is None]
    if missing:
        raise ConfigError(f"--kind {args.kind} requires {' '.join(missing)}")
    out = Path(args.out)
    if args.kind == "nasalance":
        trace = pp.compute_nasalance(formats.read_wav(args.oral), formats.read_wav(args.nasal), cfg)
        formats.write_trace_csv(out, trace)
        if trace.diagnostics.get("dead_samples"):
            print(f"{trace.diagnostics['dead_samples']} samples with zero energy in both mics",
                  file=sys.stderr)
    elif args.kind == "voicing":
        trace = pp.compute_voicing(formats.read_wav(args.egg), cfg)
        formats.write_trace_csv(out, trace)
    else:
        oral = formats.read_wav(args.oral)
        if args.nasal is not None:
            audio = af.mix_and_resample(oral, formats.read_wav(args.nasal))
        else:
            audio = af.linear_resample(oral, af.SAMPLE_RATE) if oral.rate_hz != af.SAMPLE_RATE \
                else oral
        out.write_text(_app_csv(*pp.app_surrogate(audio, cfg.target_rate_hz)))
    print(out)
    return 0


def cmd_dataset_build(args):
    cfg = RunConfig.load(args.config).nasalance
    out = Path(args.out)
    if (out / "dataset.json").exists() and not args.force:
        raise ConfigError(f"{out} already holds a dataset; pass --force to rebuild")
    corpus = Path(args.corpus)
    manifest = tr.CorpusManifest.load(corpus / "manifest.json")
    prepared = ds.prepare_from_corpus(corpus, cfg=cfg)
    if args.force and out.exists():
        for sub in ("targets", "audspec"):
            shutil.rmtree(out / sub, ignore_errors=True)
    ds.write_dataset(prepared, out)
    formats.write_json(out / "corpus.json", {"utterances": list(manifest.utterances),
                                             "speakers": list(manifest.speakers)})
    n_seg = sum(len(u.segments) for u in prepared.values())
    print(out / "dataset.json")
    print(f"{len(prepared)} utterances, {n_seg} segments", file=sys.stderr)
    return 0


TARGET_FLAGS = {"nasalance": "nasalance_only", "all": "with_source_features"}


def cmd_train(args):
    rc = RunConfig.load(args.config)
    tcfg = _override(rc.train, seed=args.seed, max_epochs=args.epochs,
                     batch_size=args.batch_size, n_trials=args.trials,
                     targets=TARGET_FLAGS.get(args.targets))
    mcfg = _override(rc.model, n_targets=len(tcfg.target_kinds))
    data = Path(args.data or rc.paths.get("data") or "")
    out = Path(args.out or rc.paths.get("out") or "")
    if not str(data) or not str(out) or str(data) == "." or str(out) == ".":
        raise ConfigError("train needs --data and --out (or paths.data / paths.out in the config)")
    manifest = tr.CorpusManifest.load(data / "corpus.json")
    split_seed = args.split_seed if args.split_seed is not None else tcfg.seed
    if args.split:
        try:
            splits = tr.SplitManifest.from_dict(formats.read_json(args.split))
            splits.check(manifest, tolerance=None)
        except ValueError as exc:
            raise ConfigError(f"invalid split file: {exc}") from exc
    else:
        try:
            splits = tr.make_splits(manifest, args.train_speakers, split_seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    corpus = ds.load_dataset(data, splits.train + splits.val + splits.test)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_json(out / "split.json", splits.to_dict())
    formats.write_json(out / "config.json", {**RunConfig(rc.nasalance, mcfg, tcfg, rc.paths).to_dict()})
    log = None if args.quiet else (lambda s: print(s, file=sys.stderr))
    report = tr.run_trials(tcfg, mcfg, splits, corpus, out_dir=out, log=log)
    (out / "report.txt").write_text(report.table() + "\n")
    formats.write_json(out / "report.json", report.to_dict())
    print(report.table())
    return 0


def _collect_checkpoints(paths):
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found += sorted(p.glob("trial_*/checkpoint.vtck")) or sorted(p.glob("*.vtck"))
        else:
            found.append(p)
    if not found:
        raise ConfigError("no checkpoints found")
    return found


def cmd_eval(args):
    ckpts = _collect_checkpoints(args.checkpoints)
    data = Path(args.data)
    if args.split:
        try:
            ids = tuple(tr.SplitManifest.from_dict(formats.read_json(args.split)).test)
        except ValueError as exc:
            raise ConfigError(f"invalid split file: {exc}") from exc
    else:
        ids = None
    utts = list(ds.load_dataset(data, ids).values())
    groups = {}
    for path in ckpts:
        model, targets, meta = formats.load_checkpoint(path)
        tag = args.tag or meta.get("tag") or tr.tag_for(
            "with_source_features" if len(targets) == 5 else "nasalance_only")
        rep = ev.evaluate_model(model.predict, utts, targets, tag)
        grp = groups.setdefault(tag, tr.TrialReport(tag, tuple(targets)))
        if grp.targets != tuple(targets):
            raise ConfigError(f"checkpoints tagged {tag} disagree on targets")
        grp.trials.append(rep)
    rows = {tag: g.summary() for tag, g in groups.items()}
    if args.json:
        print(formats.canonical_json({tag: g.to_dict() for tag, g in groups.items()}), end="")
    else:
        print(ev.format_table(rows))
    return 0


def cmd_validate_hsn(args):
    cfg = RunConfig.load(args.config).nasalance
    corpus = Path(args.corpus)
    manifest = formats.read_json(corpus / "manifest.json")
    rows = []
    for rec in manifest["utterances"]:
        if "hsv" not in rec["paths"]:
            continue
        oral = formats.read_wav(corpus / rec["paths"]["oral"])
        nasal = formats.read_wav(corpus / rec["paths"]["nasal"])
        hsv = formats.read_trace_csv(corpus / rec["paths"]["hsv"], "hsv_intensity")
        rep = pp.validate_against_hsv(pp.compute_nasalance(oral, nasal, cfg), hsv)
        rows.append((rec["id"], rep))
    if not rows:
        raise ConfigError("corpus has no utterances with an HSV trace")
    mean_r = float(np.mean([r.r for _, r in rows]))
    if args.json:
        print(formats.canonical_json({
            "utterances": [{"id": u, "r": r.r, "p_proxy": r.p_proxy, "n": r.n} for u, r in rows],
            "mean_r": mean_r}), end="")
    else:
        for u, r in rows:
            print(f"{u}\tr={r.r:.4f}\tp~{r.p_proxy:.3g}\tn={r.n}")
        print(f"mean r = {mean_r:.4f} over {len(rows)} utterances")
    return 0


def cmd_landmarks(args):
    trace = formats.read_trace_csv(args.trace, args.kind)
    events = ev.detect_landmarks(trace)
    Path(args.out).write_text(ev.landmarks_csv(events))
    if args.against:
        other = formats.read_trace_csv(args.against, "generic")
        lags = ev.relative_timing(events, ev.detect_landmarks(other))
        print("gesture,other,pair,lag_s")
        for l in lags:
            print(f"{l.a_index},{l.b_index},{l.pair},{l.lag_s:.6g}")
    for g, e in ev.gestures(events).items():
        print(f"gesture {g}: onset {e['onset']:.3f}s peak {e['peak']:.3f}s "
              f"offset {e['offset']:.3f}s", file=sys.stderr)
    return 0


# -------------------------------------------------------------------- parser

def build_parser():
    p = UsageParser(prog="nasality-si", description="Nasalance extraction and "
                    "acoustic-to-nasality speech inversion.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    s = sub.add_parser("synth", help="generate a synthetic paired corpus")
    s.add_argument("--speakers", type=int, default=8)
    s.add_argument("--utts-per-speaker", type=int, default=12)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true", help="regenerate even if up to date")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", help="compute a physiological trace from recordings")
    s.add_argument("--kind", choices=("nasalance", "voicing", "app"), required=True)
    s.add_argument("--oral")
    s.add_argument("--nasal")
    s.add_argument("--egg")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("dataset", help="dataset preparation")
    dsub = s.add_subparsers(dest="dataset_command", required=True, parser_class=UsageParser)
    b = dsub.add_parser("build", help="targets + AudSpec cache from a corpus")
    b.add_argument("--corpus", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--config")
    b.add_argument("--force", action="store_true")
    b.set_defaults(func=cmd_dataset_build)

    s = sub.add_parser("train", help="speaker-independent training (multi-trial)")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--config")
    s.add_argument("--targets", choices=tuple(TARGET_FLAGS))
    s.add_argument("--seed", type=int)
    s.add_argument("--split-seed", type=int)
    s.add_argument("--split", help="use an existing split.json")
    s.add_argument("--train-speakers", type=int, default=6)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score checkpoints on a dataset (per-target PPMC table)")
    s.add_argument("checkpoints", nargs="+", help="checkpoint files or training run dirs")
    s.add_argument("--data", required=True)
    s.add_argument("--split", help="evaluate the test utterances of this split.json")
    s.add_argument("--tag")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("validate-hsn", help="correlate nasalance with HSV intensity")
    s.add_argument("--corpus", required=True)
    s.add_argument("--config")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_validate_hsn)

    s = sub.add_parser("landmarks", help="gesture onset/peak/offset of a trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--kind", default="nasalance", choices=pp.TRACE_KINDS)
    s.add_argument("--against", help="second trace for relative timing")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_landmarks)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"nasality-si: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, FloatingPointError, RuntimeError) as exc:
        print(f"nasality-si: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
