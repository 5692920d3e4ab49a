"""Biometric metrics: accuracy, ROC, AUC, EER, and the evaluation report.

Scores are oriented "higher = more likely fake" (positive class = label 1);
a sample is predicted positive when score >= threshold. The ROC sweep runs
over the unique scores plus finite sentinels (max+1, min-1); consecutive
duplicate (fpr, tpr) points are collapsed keeping the highest threshold.
EER uses the same sweep with index-space linear interpolation between
adjacent points when that reduces |FAR - FRR|, which makes both the EER
value and the AUC exactly invariant under strictly monotone score
transforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import MetricError, ValidationError


class RocPoint(NamedTuple):
    fpr: float
    tpr: float
    threshold: float


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray

    def __init__(self, scores, labels):
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels)
        if scores.ndim != 1 or labels.shape != scores.shape:
            raise ValidationError("scores and labels must be 1-D and equally long")
        if scores.size == 0:
            raise ValidationError("empty score set")
        if not np.all(np.isfinite(scores)):
            raise ValidationError("scores must be finite")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValidationError("labels must be 0 or 1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    def require_both_classes(self) -> None:
        if not (np.any(self.labels == 1) and np.any(self.labels == 0)):
            raise MetricError("metric requires at least one positive and one negative label")


def confusion_counts(s: ScoreSet, threshold: float) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) with the >= positive rule."""
    pred = s.scores >= threshold
    pos = s.labels == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    return tp, fp, tn, fn


def accuracy(s: ScoreSet, threshold: float) -> float:
    tp, fp, tn, fn = confusion_counts(s, threshold)
    return (tp + tn) / s.scores.size


def _sweep_thresholds(scores: np.ndarray) -> np.ndarray:
    """Ascending candidate thresholds: min-1, unique scores, max+1."""
    uniq = np.unique(scores)
    return np.concatenate(([uniq[0] - 1.0], uniq, [uniq[-1] + 1.0]))


def roc_curve(s: ScoreSet) -> list[RocPoint]:
    s.require_both_classes()
    pos = s.scores[s.labels == 1]
    neg = s.scores[s.labels == 0]
    points: list[RocPoint] = []
    for tau in _sweep_thresholds(s.scores)[::-1]:  # descending => fpr/tpr increase
        tpr = float(np.count_nonzero(pos >= tau)) / pos.size
        fpr = float(np.count_nonzero(neg >= tau)) / neg.size
        if points and (points[-1].fpr, points[-1].tpr) == (fpr, tpr):
            continue  # keep the first (highest-threshold) representative
        points.append(RocPoint(fpr, tpr, float(tau)))
    return points


def auc_trapezoid(roc: Sequence[RocPoint]) -> float:
    fprs = [p.fpr for p in roc]
    if any(b < a for a, b in zip(fprs, fprs[1:])):
        raise MetricError("ROC points must be sorted by non-decreasing fpr")
    terms = [
        0.5 * (roc[i].tpr + roc[i + 1].tpr) * (roc[i + 1].fpr - roc[i].fpr)
        for i in range(len(roc) - 1)
    ]
    return math.fsum(terms)


def auc_pair_count(s: ScoreSet) -> float:
    """Mann-Whitney view: P(pos > neg) + 0.5 * P(pos == neg)."""
    s.require_both_classes()
    pos = s.scores[s.labels == 1]
    neg = s.scores[s.labels == 0]
    wins = np.count_nonzero(pos[:, None] > neg[None, :])
    ties = np.count_nonzero(pos[:, None] == neg[None, :])
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def auc(s: ScoreSet) -> float:
    """Area under the ROC, computed both as the trapezoidal integral and as
    the pair-counting statistic; the two must agree to 1e-12."""
    trap = auc_trapezoid(roc_curve(s))
    pairs = auc_pair_count(s)
    if abs(trap - pairs) > 1e-12:
        raise MetricError(
            f"trapezoidal AUC {trap!r} disagrees with pair-counting AUC {pairs!r}"
        )
    return trap


def eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold.

    FAR(t) = fraction of negatives with score >= t, FRR(t) = fraction of
    positives with score < t. Returns the midpoint (FAR+FRR)/2 at the
    candidate minimizing |FAR-FRR| (ties: smaller midpoint, then smaller
    threshold), considering interpolated crossings between adjacent sweep
    points whenever interpolation reduces |FAR-FRR|.
    """
    s.require_both_classes()
    pos = s.scores[s.labels == 1]
    neg = s.scores[s.labels == 0]
    taus = _sweep_thresholds(s.scores)
    far = np.array([np.count_nonzero(neg >= t) / neg.size for t in taus])
    frr = np.array([np.count_nonzero(pos < t) / pos.size for t in taus])
    # (|FAR-FRR|, midpoint, tau) candidates at sweep points
    candidates = [(abs(f - r), 0.5 * (f + r), float(t)) for f, r, t in zip(far, frr, taus)]
    diff = far - frr
    for i in range(len(taus) - 1):
        if diff[i] > 0.0 > diff[i + 1] or diff[i] < 0.0 < diff[i + 1]:
            t_star = diff[i] / (diff[i] - diff[i + 1])
            value = far[i] + t_star * (far[i + 1] - far[i])
            tau = float(taus[i] + t_star * (taus[i + 1] - taus[i]))
            candidates.append((0.0, value, tau))
    best = min(candidates)
    return best[1], best[2]


# -- report -------------------------------------------------------------------

REPORT_SCHEMA = {
    "type": "object",
    "properties": {
        "split": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "auc": {"type": "number", "minimum": 0, "maximum": 1},
        "eer": {"type": "number", "minimum": 0, "maximum": 1},
        "eer_threshold": {"type": "number"},
        "counts": {
            "type": "object",
            "properties": {
                "tp": {"type": "integer", "minimum": 0},
                "fp": {"type": "integer", "minimum": 0},
                "tn": {"type": "integer", "minimum": 0},
                "fn": {"type": "integer", "minimum": 0},
            },
            "required": ["tp", "fp", "tn", "fn"],
            "additionalProperties": False,
        },
        "roc": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "properties": {
                    "fpr": {"type": "number"},
                    "tpr": {"type": "number"},
                    "threshold": {"type": "number"},
                },
                "required": ["fpr", "tpr", "threshold"],
                "additionalProperties": False,
            },
        },
        "provenance": {
            "type": "object",
            "properties": {
                "checkpoint_hash": {"type": "string"},
                "recon_hash": {"type": "string"},
                "seed": {"type": "integer"},
            },
            "required": ["checkpoint_hash", "recon_hash", "seed"],
            "additionalProperties": False,
        },
    },
    "required": [
        "split", "n", "threshold", "accuracy", "auc", "eer", "eer_threshold",
        "counts", "roc", "provenance",
    ],
    "additionalProperties": False,
}


@dataclass
class MetricsReport:
    """Scores are sigmoid probabilities of the fake class; orientation:
    "acceptance" = classified fake (label 1)."""

    split: str
    n: int
    threshold: float
    accuracy: float
    auc: float
    eer: float
    eer_threshold: float
    counts: tuple[int, int, int, int]  # tp, fp, tn, fn
    roc: list[RocPoint]
    provenance: dict

    def to_dict(self) -> dict:
        tp, fp, tn, fn = self.counts
        return {
            "split": self.split,
            "n": self.n,
            "threshold": self.threshold,
            "accuracy": self.accuracy,
            "auc": self.auc,
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "counts": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
            "roc": [{"fpr": p.fpr, "tpr": p.tpr, "threshold": p.threshold} for p in self.roc],
            "provenance": self.provenance,
        }

    def write_json(self, path: str | Path) -> None:
        payload = self.to_dict()
        validate_report(payload)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        # fixed field order (declaration order), for diffability
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def validate_report(payload: dict) -> None:
    import jsonschema

    jsonschema.validate(payload, REPORT_SCHEMA)


def build_report(
    s: ScoreSet, split: str, threshold: float, provenance: dict
) -> MetricsReport:
    s.require_both_classes()
    eer_value, eer_tau = eer(s)
    roc = roc_curve(s)
    return MetricsReport(
        split=split,
        n=int(s.scores.size),
        threshold=float(threshold),
        accuracy=accuracy(s, threshold),
        auc=auc(s),
        eer=eer_value,
        eer_threshold=eer_tau,
        counts=confusion_counts(s, threshold),
        roc=roc,
        provenance=provenance,
    )


def evaluate(checkpoint_path, manifest, split, recon_model, out_path=None, threshold=0.5,
             per_video=False):
    """Full-pipeline evaluation of one split; see `training.restore_pipeline`.

    Defined here for the module surface; implemented in `pipeline` to keep
    import edges acyclic. `per_video` averages frame probabilities per
    video_id before computing metrics (the single supported aggregation).
    """
    from .pipeline import evaluate_checkpoint

    return evaluate_checkpoint(checkpoint_path, manifest, split, recon_model, out_path,
                               threshold, per_video=per_video)
