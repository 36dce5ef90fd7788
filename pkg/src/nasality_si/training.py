"""Speaker-independent splits, the Adam training loop, and multi-trial runs."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .dataset import target_kinds
from .evaluation import EvalReport, evaluate_model, format_table
from .neural_tcn import ModelConfig, build_model, mse_loss

TARGET_FRACTION = 0.70
FRACTION_TOLERANCE = 0.05
MAX_SPLIT_CANDIDATES = 20000


# ------------------------------------------------------------------ manifests

@dataclass(frozen=True)
class CorpusManifest:
    """Utterance and speaker records of a corpus (see ``synth_corpus``)."""

    utterances: tuple
    speakers: tuple

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        object.__setattr__(self, "speakers", tuple(self.speakers))
        ids = [u["id"] for u in self.utterances]
        if len(set(ids)) != len(ids):
            raise ValueError("utterance ids are not unique")
        spk = {s["id"] for s in self.speakers}
        if len(spk) != len(self.speakers):
            raise ValueError("speaker ids are not unique")
        orphans = sorted({u["speaker_id"] for u in self.utterances} - spk)
        if orphans:
            raise ValueError(f"utterances reference unknown speakers {orphans}")

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(tuple(d["utterances"]), tuple(d["speakers"]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed corpus manifest ({exc})") from exc

    @classmethod
    def load(cls, path):
        return cls.from_dict(formats.read_json(path))

    def by_speaker(self):
        out = {s["id"]: [] for s in self.speakers}
        for u in self.utterances:
            out[u["speaker_id"]].append(u["id"])
        return out

    def sex_of(self, speaker_id):
        for s in self.speakers:
            if s["id"] == speaker_id:
                return s.get("sex")
        raise KeyError(speaker_id)


@dataclass(frozen=True)
class SplitManifest:
    train: tuple
    val: tuple
    test: tuple
    seed: int

    def to_dict(self):
        return {"seed": self.seed, "train": list(self.train), "val": list(self.val),
                "test": list(self.test)}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d["seed"]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed split manifest ({exc})") from exc

    def check(self, manifest: CorpusManifest, tolerance=FRACTION_TOLERANCE):
        """Raise ValueError if any split invariant fails."""
        spk = {u["id"]: u["speaker_id"] for u in manifest.utterances}
        for name in ("train", "val", "test"):
            unknown = set(getattr(self, name)) - set(spk)
            if unknown:
                raise ValueError(f"{name} has unknown utterances {sorted(unknown)[:3]}")
        if set(self.val) & set(self.test) or set(self.train) & (set(self.val) | set(self.test)):
            raise ValueError("utterance sets overlap")
        train_spk = {spk[u] for u in self.train}
        held_spk = {spk[u] for u in self.val + self.test}
        if train_spk & held_spk:
            raise ValueError(f"speakers {sorted(train_spk & held_spk)} in both train and held-out")
        for s in held_spk:
            nv = sum(spk[u] == s for u in self.val)
            nt = sum(spk[u] == s for u in self.test)
            if abs(nv - nt) > 1:
                raise ValueError(f"speaker {s}: val/test sizes {nv}/{nt} differ by more than 1")
        if tolerance is not None:
            total = len(self.train) + len(self.val) + len(self.test)
            if not _fraction_ok(len(self.train), total, tolerance):
                raise ValueError(f"train fraction {len(self.train) / total:.3f} outside "
                                 f"{TARGET_FRACTION:.2f} +/- {tolerance:.2f}")


def _fraction_ok(n_train, total, tolerance):
    # Integer comparison in percent so 72/96 = 75.0% sits exactly on the bound.
    tol_pct = round(tolerance * 100)
    return abs(100 * n_train - round(TARGET_FRACTION * 100) * total) <= tol_pct * total


def make_splits(manifest: CorpusManifest, n_train_speakers: int, seed: int,
                tolerance=FRACTION_TOLERANCE) -> SplitManifest:
    """Speaker-independent train/val/test split.

    Held-out speakers are drawn at random among the speaker combinations
    that keep the train share near 70%.  When at least two speakers are held
    out and both sexes exist, combinations covering both sexes are preferred.
    Each held-out speaker's utterances are shuffled and halved between val
    and test; which side gets the odd one out is random too.
    """
    groups = manifest.by_speaker()
    speakers = sorted(groups)
    n_held = len(speakers) - n_train_speakers
    if n_train_speakers < 1 or n_held < 1:
        raise ValueError(f"need at least {n_train_speakers + 1} speakers "
                         f"(have {len(speakers)}) and at least one training speaker")
    total = len(manifest.utterances)
    rng = np.random.default_rng(seed)

    n_comb = math.comb(len(speakers), n_held)
    if n_comb <= MAX_SPLIT_CANDIDATES:
        combos = [tuple(c) for c in itertools.combinations(speakers, n_held)]
    else:
        combos = sorted({tuple(sorted(rng.choice(speakers, n_held, replace=False)))
                         for _ in range(MAX_SPLIT_CANDIDATES)})
    ok = [c for c in combos
          if tolerance is None or _fraction_ok(total - sum(len(groups[s]) for s in c),
                                               total, tolerance)]
    ok = [c for c in ok if all(len(groups[s]) >= 2 for s in c)]
    if not ok:
        raise ValueError("no held-out speaker set satisfies the split constraints "
                         "(train share near 70%, >= 2 utterances per held-out speaker)")
    sexes = {s: manifest.sex_of(s) for s in speakers}
    if n_held >= 2 and {"M", "F"} <= set(sexes.values()):
        mixed = [c for c in ok if {"M", "F"} <= {sexes[s] for s in c}]
        ok = mixed or ok
    held = ok[int(rng.integers(len(ok)))]

    val, test = [], []
    for s in held:
        utts = list(groups[s])
        rng.shuffle(utts)
        half = len(utts) // 2
        if len(utts) % 2 and rng.random() < 0.5:
            half += 1
        val += utts[:half]
        test += utts[half:]
    train = [u for s in speakers if s not in held for u in groups[s]]
    split = SplitManifest(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)), int(seed))
    split.check(manifest, tolerance)
    return split


# --------------------------------------------------------------------- config

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    lr_gamma: float = 0.9
    max_epochs: int = 100
    early_stop_patience: int = 10
    n_trials: int = 8
    seed: int = 7
    targets: str = "with_source_features"

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_gamma <= 1:
            raise ValueError("lr_gamma must lie in (0, 1]")
        if self.optimizer != "adam":
            raise ValueError("only the 'adam' optimizer is supported")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must be two values in [0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm statistics)")
        if self.max_epochs < 1 or self.early_stop_patience < 1 or self.n_trials < 1:
            raise ValueError("max_epochs, early_stop_patience and n_trials must be >= 1")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")
        target_kinds(self.targets)

    @property
    def target_kinds(self):
        return target_kinds(self.targets)

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------- adam

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, lr_t, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Raises FloatingPointError (before touching anything) if a gradient is
    not finite.
    """
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape or state.v[k].shape != p.shape:
            raise ValueError(f"{k}: parameter, gradient and state shapes differ")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {k} at step {state.t + 1}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr_t * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params, state


# ----------------------------------------------------------------- training

def stack_segments(utterances, kinds):
    """``(X, Y, mask)`` arrays over all segments of the given utterances."""
    segs = [s for u in utterances for s in u.segments]
    if not segs:
        raise ValueError("empty split")
    x = np.stack([s.audspec for s in segs]).astype(np.float32)
    y = np.stack([np.stack([s.targets[k] for k in kinds]) for s in segs]).astype(np.float32)
    m = np.stack([s.mask for s in segs])
    return x, y, m


def batches(n, batch_size, rng):
    """Shuffled index batches.  A trailing batch of one joins the previous
    batch, since batch statistics need two samples."""
    perm = rng.permutation(n)
    out = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and out[-1].size == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def masked_loss(model, x, y, m, batch_size=64):
    """Frame-weighted masked MSE of eval-mode predictions."""
    total, count = 0.0, 0
    for i in range(0, len(x), batch_size):
        pred = model.forward(x[i:i + batch_size], "eval")
        loss, _ = mse_loss(pred, y[i:i + batch_size], m[i:i + batch_size])
        n = int(m[i:i + batch_size].sum())
        total += loss * n
        count += n
    return total / count


@dataclass
class TrainResult:
    model: object
    targets: tuple
    history: list
    best_epoch: int
    best_val_loss: float
    seed: int


def train(train_cfg: TrainConfig, model_cfg: ModelConfig, splits: SplitManifest,
          corpus: dict, log=None) -> TrainResult:
    """Fit one model; returns the best-validation parameters and the history.

    ``corpus`` maps utterance id -> PreparedUtterance.
    """
    kinds = train_cfg.target_kinds
    if model_cfg.n_targets != len(kinds):
        raise ValueError(f"model has {model_cfg.n_targets} outputs but {len(kinds)} targets")
    if not splits.train or not splits.val:
        raise ValueError("empty split")
    try:
        xt, yt, mt = stack_segments([corpus[u] for u in splits.train], kinds)
        xv, yv, mv = stack_segments([corpus[u] for u in splits.val], kinds)
    except KeyError as exc:
        raise KeyError(f"utterance {exc} not in the prepared corpus") from None
    if len(xt) < 2:
        raise ValueError("need at least two training segments")

    model = build_model(model_cfg)
    state = AdamState.zeros_like(model.params)
    rng = np.random.default_rng(train_cfg.seed)
    history = []
    best = (math.inf, -1, None)
    stale = 0
    for epoch in range(train_cfg.max_epochs):
        lr_t = train_cfg.lr * train_cfg.lr_gamma ** epoch
        total, count = 0.0, 0
        for idx in batches(len(xt), train_cfg.batch_size, rng):
            pred = model.forward(xt[idx], "train")
            loss, grad = mse_loss(pred, yt[idx], mt[idx])
            model.backward(grad)
            adam_step(model.params, model.grads, state, lr_t, train_cfg.betas, train_cfg.adam_eps)
            n = int(mt[idx].sum())
            total += loss * n
            count += n
        val = masked_loss(model, xv, yv, mv)
        if not math.isfinite(val):
            raise FloatingPointError(f"validation loss is {val} at epoch {epoch}; training diverged")
        history.append({"epoch": epoch, "train_loss": total / count, "val_loss": val, "lr": lr_t})
        if log:
            log(f"epoch {epoch:3d} train {total / count:.5f} val {val:.5f} lr {lr_t:.3g}")
        if val < best[0]:
            best = (val, epoch, {k: a.copy() for k, a in model.state_dict().items()})
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.early_stop_patience:
                break
    model.load_state_dict(best[2])
    return TrainResult(model, kinds, history, best[1], best[0], train_cfg.seed)


def save_result(out_dir, result: TrainResult, meta=None):
    """Write ``history.csv`` and ``checkpoint.vtck`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(formats.history_csv_text(result.history))
    info = {"best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss,
            "seed": result.seed}
    info.update(meta or {})
    formats.save_checkpoint(out / "checkpoint.vtck", result.model, result.targets, info)
    return out / "checkpoint.vtck", out / "history.csv"


# -------------------------------------------------------------------- trials

@dataclass
class TrialReport:
    tag: str
    targets: tuple
    trials: list = field(default_factory=list)  # EvalReport per trial

    def summary(self):
        """``{target: (mean, std)}`` across trials, plus ``__average__``."""
        out = {}
        for t in self.targets:
            v = np.array([r.scores[t].ppmc_mean for r in self.trials])
            out[t] = (float(v.mean()), float(v.std()))
        avg = np.array([r.average for r in self.trials])
        out["__average__"] = (float(avg.mean()), float(avg.std()))
        return out

    def table(self):
        return format_table({self.tag: self.summary()})

    def to_dict(self):
        s = self.summary()
        return {"tag": self.tag, "n_trials": len(self.trials),
                "targets": {t: {"mean": s[t][0], "std": s[t][1]} for t in self.targets},
                "average": {"mean": s["__average__"][0], "std": s["__average__"][1]},
                "trials": [r.to_dict() for r in self.trials]}


def tag_for(targets_name):
    return "SI-SF" if targets_name == "with_source_features" else "SI-noSF"


def run_trials(train_cfg: TrainConfig, model_cfg: ModelConfig, splits: SplitManifest,
               corpus: dict, out_dir=None, log=None) -> TrialReport:
    """Train ``n_trials`` models with seeds ``seed + i`` (initialization and
    shuffling) on a fixed split; score each on the test utterances."""
    if not splits.test:
        raise ValueError("empty test split")
    report = TrialReport(tag_for(train_cfg.targets), train_cfg.target_kinds)
    test = [corpus[u] for u in splits.test]
    for i in range(train_cfg.n_trials):
        seed = train_cfg.seed + i
        res = train(replace(train_cfg, seed=seed), replace(model_cfg, seed=seed), splits,
                    corpus, log)
        ev: EvalReport = evaluate_model(res.model.predict, test, res.targets,
                                        f"{report.tag}#{i}")
        report.trials.append(ev)
        if out_dir is not None:
            save_result(Path(out_dir) / f"trial_{i:02d}", res, {"tag": report.tag})
        if log:
            log(f"trial {i} seed {seed}: best epoch {res.best_epoch}, "
                f"test nasalance PPMC {ev.scores['nasalance'].ppmc_mean:.4f}")
    return report
