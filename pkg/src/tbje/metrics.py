"""Evaluation metrics: standard accuracy, positive-class (unweighted) F1,
support-weighted F1, and the sentiment binning rules.

Weighted F1 here means: compute a binary F1 twice, once treating 1 as the
positive class and once treating 0 as the positive class, then average the
two weighted by their gold support. Unweighted F1 is the positive-class F1
alone. The two coincide when the gold labels are all positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

EMOTIONS = ("happy", "sad", "angry", "fear", "disgust", "surprise")
SENTIMENT_MIN = -3.0
SENTIMENT_MAX = 3.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def support(self) -> int:
        """Gold examples of the positive class."""
        return self.tp + self.fn

    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    def f1(self) -> float:
        p, r = self.precision(), self.recall()
        return 2.0 * p * r / (p + r) if p + r else 0.0


def _as_labels(pred, gold):
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape:
        raise ContractError(
            f"prediction shape {pred.shape} != gold shape {gold.shape}")
    if pred.size == 0:
        raise ContractError("metrics need at least one example")
    return pred, gold


def confusion(pred, gold, positive=1) -> ConfusionCounts:
    pred, gold = _as_labels(pred, gold)
    p = pred == positive
    g = gold == positive
    return ConfusionCounts(tp=int(np.sum(p & g)), fp=int(np.sum(p & ~g)),
                           fn=int(np.sum(~p & g)), tn=int(np.sum(~p & ~g)))


def accuracy(pred, gold) -> float:
    """Exact-match fraction; 2-d multi-label inputs are scored per class
    (columns) and averaged."""
    pred, gold = _as_labels(pred, gold)
    if pred.ndim == 2:
        return float(np.mean([accuracy(pred[:, c], gold[:, c])
                              for c in range(pred.shape[1])]))
    return float(np.mean(pred == gold))


def f1_unweighted(pred, gold, positive=1) -> float:
    """Positive-class F1; zero when precision + recall is zero."""
    pred, gold = _as_labels(pred, gold)
    return confusion(pred, gold, positive).f1()


def f1_weighted(pred, gold) -> float:
    """Support-weighted mean of the two per-class binary F1 scores.

    A class absent from the gold labels carries no weight, so the result is
    then exactly the other class's F1 (not merely within rounding of it).
    """
    pred, gold = _as_labels(pred, gold)
    pos = confusion(pred, gold, positive=1)
    neg = confusion(pred, gold, positive=0)
    if neg.support == 0:
        return pos.f1()
    if pos.support == 0:
        return neg.f1()
    total = pos.support + neg.support
    return (pos.support * pos.f1() + neg.support * neg.f1()) / total


def _check_raw(raw):
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < SENTIMENT_MIN) or np.any(raw > SENTIMENT_MAX):
        bad = raw[(raw < SENTIMENT_MIN) | (raw > SENTIMENT_MAX)]
        raise ContractError(
            f"sentiment values outside [{SENTIMENT_MIN:g}, "
            f"{SENTIMENT_MAX:g}]: {bad[:5]}")
    return raw


def round_half_away(x):
    """Round halves away from zero (2.5 -> 3, -0.5 -> -1); numpy's default
    rounds halves to even, which would shift bin edges."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def sentiment_bins(raw, classes: int = 7, boundary: float = 0.0):
    """Map raw sentiment in [-3, 3] to class indices.

    7-class: round to the nearest integer (halves away from zero), shift to
    0..6. 2-class: 0 below the boundary, 1 at or above it.
    """
    raw = _check_raw(raw)
    if classes == 7:
        return (round_half_away(raw) + 3).astype(np.int64)
    if classes == 2:
        return (raw >= boundary).astype(np.int64)
    raise ContractError(f"sentiment supports 2 or 7 classes, got {classes}")


def emotion_predictions(probabilities, threshold: float = 0.5):
    """Binarize per-emotion probabilities."""
    return (np.asarray(probabilities, dtype=np.float64) >= threshold).astype(np.int64)


def evaluation_report(task: str, pred, gold) -> dict:
    """Machine-readable metric block for one task.

    Sentiment tasks report accuracy plus both F1 flavors of the predicted
    classes; the emotions task reports per-emotion accuracy and F1s plus
    their means.
    """
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if task == "emotions-6":
        per = {}
        for c, name in enumerate(EMOTIONS):
            per[name] = {
                "accuracy": accuracy(pred[:, c], gold[:, c]),
                "f1_weighted": f1_weighted(pred[:, c], gold[:, c]),
                "f1_unweighted": f1_unweighted(pred[:, c], gold[:, c]),
            }
        return {
            "task": task,
            "per_emotion": per,
            "accuracy": accuracy(pred, gold),
            "f1_weighted": float(np.mean([v["f1_weighted"] for v in per.values()])),
            "f1_unweighted": float(np.mean([v["f1_unweighted"] for v in per.values()])),
        }
    if task == "sentiment-2":
        return {
            "task": task,
            "accuracy": accuracy(pred, gold),
            "f1_weighted": f1_weighted(pred, gold),
            "f1_unweighted": f1_unweighted(pred, gold),
        }
    if task == "sentiment-7":
        return {"task": task, "accuracy": accuracy(pred, gold)}
    raise ContractError(f"unknown task {task!r}")
