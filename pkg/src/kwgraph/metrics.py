"""Micro/macro F1 and accuracy for single-label predictions."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def evaluate(predictions: Sequence[int], gold: Sequence[int]) -> dict[str, float]:
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gold)} gold labels")
    if len(pred) == 0:
        raise ValueError("nothing to evaluate")
    tp_total = fp_total = fn_total = 0
    per_class = []
    for k in np.union1d(pred, gold):
        tp = int(np.sum((pred == k) & (gold == k)))
        fp = int(np.sum((pred == k) & (gold != k)))
        fn = int(np.sum((pred != k) & (gold == k)))
        tp_total, fp_total, fn_total = tp_total + tp, fp_total + fp, fn_total + fn
        per_class.append(2 * tp / (2 * tp + fp + fn))
    return {
        "micro_f1": 2 * tp_total / (2 * tp_total + fp_total + fn_total),
        "macro_f1": float(np.mean(per_class)),
        "accuracy": float(np.mean(pred == gold)),
    }
