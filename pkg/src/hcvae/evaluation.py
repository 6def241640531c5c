"""Anomaly scores, AUC and the CSV reports built from them."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .audio import FeatureMatrix, SpectrogramConfig, Waveform, extract_features, mel_filterbank
from .conditioning import encode_condition
from .corpus import Label, scan_dataset
from .errors import ConfigurationError, InputTooShortError, UndefinedAucError
from .model import encode, reconstruction_error
from .training import Checkpoint


@dataclass(frozen=True)
class ScoreRecord:
    clip_id: str
    machine_type: str
    machine_id: str
    score: float
    label: Label | None = None

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score for {self.clip_id} is not finite: {self.score}")


@dataclass(frozen=True)
class EvalConfig:
    eta: float = 0.0
    aggregate: str = "mean"

    def __post_init__(self):
        if self.aggregate not in ("mean", "max"):
            raise ConfigurationError("aggregate must be 'mean' or 'max'")


@dataclass(frozen=True)
class AucResult:
    auc_paper: float
    auc_rank: float
    n_normal: int
    n_anomaly: int


def _features(ckpt: Checkpoint, source, fb=None) -> FeatureMatrix:
    if isinstance(source, FeatureMatrix):
        return source
    cfg = ckpt.spectrogram or SpectrogramConfig()
    return extract_features(source, cfg, fb)


def frame_scores(ckpt: Checkpoint, features, type_label, id_label) -> np.ndarray:
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    if len(values) == 0:
        raise InputTooShortError("clip yields no feature vectors")
    c = encode_condition(ckpt.taxonomy, type_label, id_label, ckpt.mode)
    return reconstruction_error(ckpt.params, values, c)


def score_clip(
    ckpt: Checkpoint,
    source,
    type_label,
    id_label,
    *,
    clip_id: str | None = None,
    label=None,
    aggregate: str = "mean",
    expected_mode=None,
    fb=None,
) -> ScoreRecord:
    """Score a WAV path, Waveform or FeatureMatrix; mean (or max) over frames."""
    ckpt.require_mode(expected_mode)
    errs = frame_scores(ckpt, _features(ckpt, source, fb), type_label, id_label)
    score = float(np.mean(errs, dtype=np.float64) if aggregate == "mean" else np.max(errs))
    if clip_id is None:
        clip_id = str(source) if isinstance(source, (str, Path)) else ""
    return ScoreRecord(clip_id, type_label, id_label, score, Label(label) if label else None)


def auc_paper(normal_scores, anomaly_scores, eta: float = 0.0) -> float:
    """Fraction of (normal, anomaly) pairs with ``A(x+) - A(x-) >= eta``."""
    neg = np.asarray(normal_scores, dtype=np.float64)
    pos = np.asarray(anomaly_scores, dtype=np.float64)
    hits = 0
    for start in range(0, len(pos), 1024):
        block = pos[start : start + 1024]
        hits += int(np.count_nonzero(block[:, None] - neg[None, :] >= eta))
    return hits / (len(neg) * len(pos))


def auc_rank(normal_scores, anomaly_scores) -> float:
    """Mann-Whitney U / (N- N+) with mid-ranks for ties."""
    neg = np.asarray(normal_scores, dtype=np.float64)
    pos = np.asarray(anomaly_scores, dtype=np.float64)
    ranks = rankdata(np.concatenate([neg, pos]))
    u = ranks[len(neg) :].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(neg) * len(pos)))


def auc(records, cfg: EvalConfig = EvalConfig()) -> AucResult:
    neg = [r.score for r in records if r.label is Label.NORMAL]
    pos = [r.score for r in records if r.label is Label.ANOMALY]
    if not neg or not pos:
        raise UndefinedAucError(
            f"AUC needs both classes (got {len(neg)} normal, {len(pos)} anomalous)"
        )
    return AucResult(auc_paper(neg, pos, cfg.eta), auc_rank(neg, pos), len(neg), len(pos))


@dataclass
class GroupAuc:
    machine_type: str
    machine_id: str
    n_normal: int
    n_anomaly: int
    result: AucResult | None  # None when a class is missing


@dataclass
class EvalReport:
    records: list
    groups: list

    @property
    def defined(self):
        return [g for g in self.groups if g.result is not None]

    @property
    def macro_auc_paper(self) -> float:
        return float(np.mean([g.result.auc_paper for g in self.defined])) if self.defined else math.nan

    @property
    def macro_auc_rank(self) -> float:
        return float(np.mean([g.result.auc_rank for g in self.defined])) if self.defined else math.nan


def group_aucs(records, cfg: EvalConfig = EvalConfig()) -> list:
    by_group = defaultdict(list)
    for r in records:
        by_group[(r.machine_type, r.machine_id)].append(r)
    groups = []
    for (t, i), recs in sorted(by_group.items()):
        n_norm = sum(r.label is Label.NORMAL for r in recs)
        n_anom = sum(r.label is Label.ANOMALY for r in recs)
        try:
            res = auc(recs, cfg)
        except UndefinedAucError:
            res = None
        groups.append(GroupAuc(t, i, n_norm, n_anom, res))
    return groups


def evaluate_dataset(ckpt: Checkpoint, test_root, cfg: EvalConfig = EvalConfig(), expected_mode=None) -> EvalReport:
    """Score every clip under ``test_root`` and compute AUCs per (type, id)."""
    ckpt.require_mode(expected_mode)
    test_root = Path(test_root)
    fb = mel_filterbank(ckpt.spectrogram or SpectrogramConfig())
    records = [
        score_clip(ckpt, c.path, c.machine_type, c.machine_id, clip_id=c.clip_id(test_root),
                   label=c.label, aggregate=cfg.aggregate, fb=fb)
        for c in scan_dataset(test_root)
    ]
    return EvalReport(records, group_aucs(records, cfg))


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_scores_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clip_id", "machine_type", "machine_id", "label", "score"])
        for r in records:
            w.writerow([r.clip_id, r.machine_type, r.machine_id,
                        r.label.value if r.label else "", repr(r.score)])


def write_auc_csv(report: EvalReport, path) -> None:
    """Per-group rows plus a final macro-average row keyed ``*,*``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["machine_type", "machine_id", "n_normal", "n_anomaly", "auc_paper", "auc_rank"])
        for g in report.groups:
            res = g.result
            w.writerow([g.machine_type, g.machine_id, g.n_normal, g.n_anomaly,
                        _num(res and res.auc_paper), _num(res and res.auc_rank)])
        w.writerow(["*", "*", sum(g.n_normal for g in report.groups),
                    sum(g.n_anomaly for g in report.groups),
                    _num(report.macro_auc_paper), _num(report.macro_auc_rank)])


def export_latent(ckpt: Checkpoint, data_root, path) -> int:
    """Posterior means of every feature vector: ``clip_id,frame_index,mu_1..mu_L``.

    Returns the number of rows written.
    """
    data_root = Path(data_root)
    fb = mel_filterbank(ckpt.spectrogram or SpectrogramConfig())
    latent = ckpt.config.latent_dim
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clip_id", "frame_index", *[f"mu_{k + 1}" for k in range(latent)]])
        for clip in scan_dataset(data_root):
            fm = _features(ckpt, clip.path, fb)
            c = encode_condition(ckpt.taxonomy, clip.machine_type, clip.machine_id, ckpt.mode)
            mu, _ = encode(ckpt.params, fm.values, c)
            cid = clip.clip_id(data_root)
            for k, row in enumerate(mu):
                w.writerow([cid, k, *(repr(float(v)) for v in row)])
                rows += 1
    return rows
