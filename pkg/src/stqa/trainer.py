"""Per-channel training, evaluation and score dumps.

Thin orchestration over the estimators: ``train_channel`` picks the right
classifier for a channel name and trains it on the dataset's train split
with early stopping on the val split; ``evaluate`` ensembles one to three
channel checkpoints on a split.
"""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import Dataset, labels
from .errors import ConfigError, ValidationError
from .estimators import QAEnsemble, TextQAClassifier, VisualQAClassifier, from_checkpoint
from .io import Checkpoint, dumps_json
from .scoring import CHANNELS, ChannelScores, predict

TRAINABLE = ("text", "rgb", "flow")
METRIC_COLUMNS = ("epoch", "train_loss", "val_acc", "lr")

# "paper" keeps the estimators' defaults (published optimiser settings);
# "toy" trades them for settings that converge on the synthetic data within
# the desk-scale epoch budget.
_TOY_VISUAL = {"embed_dim": 16, "learning_rate": 3e-3, "adam_eps": 1e-8, "max_epochs": 40}
PRESETS = {
    "paper": {"text": {}, "rgb": {}, "flow": {}},
    "toy": {
        "text": {"embed_dim": 32, "learning_rate": 3e-3, "max_epochs": 30},
        "rgb": _TOY_VISUAL,
        "flow": _TOY_VISUAL,
    },
}


def preset_config(channel: str, preset: str = "toy", overrides: Optional[Mapping] = None) -> dict:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    if channel not in TRAINABLE:
        raise ConfigError(f"unknown channel {channel!r}; expected one of {TRAINABLE}")
    cfg = dict(PRESETS[preset][channel])
    cfg.update(overrides or {})
    return cfg


def make_estimator(channel: str, config: Optional[Mapping] = None, seed: int = 0,
                   vocab_size: Optional[int] = None, n_candidates: int = 5):
    """Build an unfitted classifier for ``channel`` from a plain config dict."""
    cfg = dict(config or {})
    cfg.update(random_state=seed, n_candidates=n_candidates)
    if vocab_size is not None:
        cfg["vocab_size"] = vocab_size
    try:
        if channel == "text":
            return TextQAClassifier(**cfg)
        if channel in ("rgb", "flow"):
            return VisualQAClassifier(stream=channel, **cfg)
    except TypeError as exc:
        raise ConfigError(f"bad config for channel {channel!r}: {exc}") from None
    raise ConfigError(f"unknown channel {channel!r}; expected one of {TRAINABLE}")


def train_channel(channel: str, dataset: Dataset, config: Optional[Mapping] = None, seed: int = 0,
                  metrics_path=None, types: Optional[Sequence[str]] = None):
    """Train one channel; returns ``(checkpoint, history)``.

    The checkpoint holds the parameters of the best validation epoch. A
    non-finite loss raises :class:`~stqa.errors.TrainingDiverged` whose
    ``checkpoint`` is the last good snapshot.
    """
    train = dataset.split("train", types)
    if not train:
        raise ValidationError("no training records" + (f" of types {list(types)}" if types else ""))
    val = dataset.split("val", types)
    est = make_estimator(channel, config, seed, len(dataset.vocab), dataset.k)
    est.fit(train, eval_set=(val, None) if val else None)
    if metrics_path is not None:
        write_metrics(est.history_, metrics_path)
    return est.to_checkpoint(), est.history_


def write_metrics(history: Sequence[Mapping], path) -> None:
    """Tab-separated metrics, one epoch per line, floats in round-trip form."""
    extra = sorted({k for row in history for k in row} - set(METRIC_COLUMNS))
    cols = list(METRIC_COLUMNS) + extra
    lines = ["\t".join(cols)]
    for row in history:
        lines.append("\t".join(repr(row[c]) if c in row else "nan" for c in cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics(path) -> list[dict]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    cols = rows[0].split("\t")
    out = []
    for line in rows[1:]:
        vals = line.split("\t")
        out.append({c: (int(v) if c == "epoch" else float(v)) for c, v in zip(cols, vals)})
    return out


def _estimators(checkpoints: Sequence, dataset: Dataset) -> list:
    if not 1 <= len(checkpoints) <= len(CHANNELS):
        raise ConfigError(f"expected 1 to {len(CHANNELS)} checkpoints, got {len(checkpoints)}")
    ests = [from_checkpoint(c if isinstance(c, Checkpoint) else Checkpoint.load(c)) for c in checkpoints]
    channels = [e.channel for e in ests]
    if len(set(channels)) != len(channels):
        raise ConfigError(f"each channel may appear once, got {channels}")
    for e in ests:
        if e.n_candidates != dataset.k:
            raise ConfigError(f"{e.channel} checkpoint expects {e.n_candidates} candidates, "
                              f"data has {dataset.k}")
        if e.vocab_size_ > len(dataset.vocab):
            raise ConfigError(f"{e.channel} checkpoint vocabulary ({e.vocab_size_}) is larger "
                              f"than the data's ({len(dataset.vocab)})")
    return ests


def accuracy_report(records: Sequence, final: np.ndarray, channels: Sequence[str], split: str) -> dict:
    preds = predict(final)
    truth = labels(records)
    hits = preds == truth
    by_type = defaultdict(list)
    for r, h in zip(records, hits):
        by_type[r.qtype].append(bool(h))
    return {
        "split": split,
        "channels": list(channels),
        "n": len(records),
        "accuracy": float(hits.mean()) if len(records) else float("nan"),
        "per_type": {t: float(np.mean(v)) for t, v in sorted(by_type.items())},
        "predictions": {r.id: int(p) for r, p in zip(records, preds)},
    }


def evaluate(checkpoints: Sequence, dataset: Dataset, split: str = "test",
             types: Optional[Sequence[str]] = None) -> dict:
    """Accuracy of the softmax-sum ensemble of ``checkpoints`` on one split."""
    ens = QAEnsemble.from_fitted(_estimators(checkpoints, dataset))
    records = dataset.split(split, types)
    scores = ens.ensemble_scores(records) if records else None
    final = scores.final if scores is not None else np.zeros((0, dataset.k))
    return accuracy_report(records, final, [c.channel for c in sorted(
        ens.estimators_, key=lambda e: CHANNELS.index(e.channel))], split)


def dump_scores(checkpoint, dataset: Dataset, split: str = "test",
                types: Optional[Sequence[str]] = None, path=None) -> dict:
    """Per-channel softmax scores for every record of a split, keyed by id."""
    (est,) = _estimators([checkpoint], dataset)
    records = dataset.split(split, types)
    probs = est.predict_proba(records) if records else np.zeros((0, dataset.k))
    dump = {
        "channel": est.channel,
        "split": split,
        "ids": [r.id for r in records],
        "probs": probs.tolist(),
    }
    if path is not None:
        Path(path).write_text(dumps_json(dump), encoding="utf-8")
    return dump


def merge_dumps(dumps: Sequence, dataset: Dataset) -> dict:
    """Ensemble stored score dumps (dicts or JSON paths) exactly as ``evaluate`` would."""
    loaded = [d if isinstance(d, Mapping) else json.loads(Path(d).read_text(encoding="utf-8"))
              for d in dumps]
    if not loaded:
        raise ConfigError("no score dumps given")
    names = [d.get("channel") for d in loaded]
    if len(set(names)) != len(names) or not set(names) <= set(CHANNELS):
        raise ConfigError(f"score dumps must name distinct channels from {CHANNELS}, got {names}")
    loaded.sort(key=lambda d: CHANNELS.index(d["channel"]))
    ids = loaded[0]["ids"]
    split = loaded[0]["split"]
    for d in loaded[1:]:
        if d["ids"] != ids or d["split"] != split:
            raise ConfigError(f"score dump for {d['channel']} covers different records")
    by_id = {r.id: r for r in dataset}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ConfigError(f"dumped ids not in dataset: {missing[:3]}")
    records = [by_id[i] for i in ids]
    channels = []
    for d in loaded:
        probs = np.asarray(d["probs"], dtype=np.float64).reshape(len(ids), -1)
        if probs.shape[1] != dataset.k:
            raise ConfigError(f"{d['channel']} dump has {probs.shape[1]} candidates, data has {dataset.k}")
        channels.append(ChannelScores(d["channel"], probs))
    final = _sum_normalized(channels)
    return accuracy_report(records, final, [c.channel for c in channels], split)


def _sum_normalized(channels: Sequence[ChannelScores]) -> np.ndarray:
    # dumps already hold softmax rows; sum in canonical channel order like ensemble()
    final = np.zeros_like(channels[0].p)
    for c in channels:
        final = final + c.p
    return final

