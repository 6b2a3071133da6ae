"""Multi-label evaluation: confusion counts, F1/precision/recall/accuracy, AUC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .scenesim import ACTIONS, EXPLANATIONS

__all__ = [
    "ConfusionCounts",
    "Scores",
    "classification_metrics",
    "auc",
    "EvalReport",
    "evaluate_predictions",
    "evaluate",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @classmethod
    def from_bits(cls, predicted, truth) -> "ConfusionCounts":
        p = np.asarray(predicted).astype(bool)
        t = np.asarray(truth).astype(bool)
        return cls(int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & ~t)), int(np.sum(~p & t)))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


class Scores(NamedTuple):
    precision: float
    recall: float
    f1: float
    accuracy: float


def classification_metrics(counts: ConfusionCounts) -> Scores:
    """Precision, recall, F1 and accuracy; empty denominators give 0."""
    if counts.total <= 0:
        raise ValueError("cannot score an empty confusion matrix")
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (counts.tp + counts.tn) / counts.total
    return Scores(precision, recall, f1, accuracy)


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Computed from average ranks (Mann-Whitney U), O(n log n).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    _, first, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    # 1-based average rank for each tie group
    avg_rank = first + (counts + 1) / 2.0
    ranks = np.empty_like(s)
    ranks[order] = np.repeat(avg_rank, counts)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    n_samples: int
    action_heads: dict              # name -> Scores
    explanation_heads: dict         # name -> Scores
    action_counts: dict             # name -> ConfusionCounts
    explanation_counts: dict
    action_micro: Scores
    explanation_micro: Scores
    action_macro_f1: float
    explanation_macro_f1: float
    action_accuracy: float          # per-bit accuracy averaged over the 4 heads
    explanation_accuracy: float
    error_auc: float | None = None  # mean action uncertainty as a ranker of wrong scenes
    extras: dict = field(default_factory=dict)

    @property
    def macro_f1(self) -> float:
        return self.action_macro_f1

    def per_action_f1(self) -> dict:
        return {name: s.f1 for name, s in self.action_heads.items()}

    def summary(self) -> dict:
        out = {
            "n_samples": self.n_samples,
            "action_micro_f1": self.action_micro.f1,
            "action_micro_precision": self.action_micro.precision,
            "action_micro_recall": self.action_micro.recall,
            "action_macro_f1": self.action_macro_f1,
            "action_accuracy": self.action_accuracy,
            "explanation_micro_f1": self.explanation_micro.f1,
            "explanation_micro_precision": self.explanation_micro.precision,
            "explanation_micro_recall": self.explanation_micro.recall,
            "explanation_macro_f1": self.explanation_macro_f1,
            "explanation_accuracy": self.explanation_accuracy,
            "error_auc": self.error_auc,
        }
        for name, s in self.action_heads.items():
            out[f"f1_{name}"] = s.f1
        out.update(self.extras)
        return out

    def rows(self) -> list[dict]:
        """One record per head plus the group aggregates, for tabular output."""
        rows = []
        for group, heads, counts in (
            ("action", self.action_heads, self.action_counts),
            ("explanation", self.explanation_heads, self.explanation_counts),
        ):
            for name, s in heads.items():
                c = counts[name]
                rows.append({"group": group, "head": name, "precision": s.precision,
                             "recall": s.recall, "f1": s.f1, "accuracy": s.accuracy,
                             "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn})
        for group, micro, macro, acc in (
            ("action", self.action_micro, self.action_macro_f1, self.action_accuracy),
            ("explanation", self.explanation_micro, self.explanation_macro_f1,
             self.explanation_accuracy),
        ):
            rows.append({"group": group, "head": "micro", "precision": micro.precision,
                         "recall": micro.recall, "f1": micro.f1, "accuracy": acc})
            rows.append({"group": group, "head": "macro", "f1": macro})
        if self.error_auc is not None:
            rows.append({"group": "uncertainty", "head": "error_auc", "auc": self.error_auc})
        return rows


def _group(pred, truth, names):
    counts = {n: ConfusionCounts.from_bits(pred[:, j], truth[:, j]) for j, n in enumerate(names)}
    scores = {n: classification_metrics(c) for n, c in counts.items()}
    pooled = ConfusionCounts()
    for c in counts.values():
        pooled = pooled + c
    micro = classification_metrics(pooled)
    macro = float(np.mean([s.f1 for s in scores.values()]))
    acc = float(np.mean([s.accuracy for s in scores.values()]))
    return counts, scores, micro, macro, acc


def evaluate_predictions(pred_actions, true_actions, pred_explanations, true_explanations,
                         action_uncertainty=None) -> EvalReport:
    """Score predicted label bits against the truth (arrays of shape (N, heads))."""
    pa, ta = np.asarray(pred_actions), np.asarray(true_actions)
    pe, te = np.asarray(pred_explanations), np.asarray(true_explanations)
    if pa.shape != ta.shape or pe.shape != te.shape or pa.shape[0] != pe.shape[0]:
        raise ValueError("prediction and label arrays disagree in shape")
    if pa.shape[0] == 0:
        raise ValueError("nothing to evaluate")
    a_names = ACTIONS if pa.shape[1] == len(ACTIONS) else tuple(f"a{i}" for i in range(pa.shape[1]))
    e_names = (EXPLANATIONS if pe.shape[1] == len(EXPLANATIONS)
               else tuple(f"e{i}" for i in range(pe.shape[1])))
    a_counts, a_scores, a_micro, a_macro, a_acc = _group(pa, ta, a_names)
    e_counts, e_scores, e_micro, e_macro, e_acc = _group(pe, te, e_names)
    error_auc = None
    if action_uncertainty is not None:
        wrong = np.any(pa != ta, axis=1)
        if wrong.any() and not wrong.all():
            error_auc = auc(np.asarray(action_uncertainty), wrong)
    return EvalReport(pa.shape[0], a_scores, e_scores, a_counts, e_counts, a_micro, e_micro,
                      a_macro, e_macro, a_acc, e_acc, error_auc)


def evaluate(params, samples, config, chunk_size: int = 256) -> EvalReport:
    """Run the model over ``samples`` and score its thresholded predictions."""
    from .model import infer

    out = infer(params, samples, config, chunk_size)
    t = config.decision_threshold
    pred_a = (out.actions.probability[..., 0] >= t).astype(np.int8)
    pred_e = (out.explanations.probability[..., 0] >= t).astype(np.int8)
    true_a = np.stack([s.actions for s in samples])
    true_e = np.stack([s.explanations for s in samples])
    return evaluate_predictions(pred_a, true_a, pred_e, true_e,
                                out.actions.uncertainty.mean(axis=1))
