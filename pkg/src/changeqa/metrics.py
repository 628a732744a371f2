"""Scoring of predicted answers against gold QA items.

OA is exact-match accuracy; AA is the unweighted mean of per-category
accuracies; precision/recall/F1 are computed per answer class and
macro-averaged over classes with support (gold or predicted). The macro-F1
choice is recorded in the report header.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .templates import ANSWER_INDEX, ANSWER_VOCABULARY, QAItem


@dataclass(frozen=True)
class EvalReport:
    overall_accuracy: float
    average_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_category_accuracy: dict[str, float]
    per_class_f1: dict[str, float]
    n_items: int


class PredictionSet:
    """Map (image_id, template_id) -> predicted answer token.

    Unknown answer tokens and duplicate keys are rejected at construction.
    """

    def __init__(self, entries):
        self.by_key: dict[tuple[str, str], str] = {}
        for image_id, template_id, answer in entries:
            if answer not in ANSWER_INDEX:
                raise ValueError(f"unknown answer token {answer!r} "
                                 f"for ({image_id}, {template_id})")
            key = (image_id, template_id)
            if key in self.by_key:
                raise ValueError(f"duplicate prediction for {key}")
            self.by_key[key] = answer

    def __len__(self):
        return len(self.by_key)


def _check_keys(gold: list[QAItem], preds: PredictionSet) -> None:
    gold_keys = {(g.image_id, g.template_id) for g in gold}
    if len(gold_keys) != len(gold):
        raise ValueError("duplicate (image_id, template_id) in gold items")
    pred_keys = set(preds.by_key)
    missing = sorted(gold_keys - pred_keys)
    extra = sorted(pred_keys - gold_keys)
    if missing or extra:
        msg = []
        if missing:
            msg.append(f"missing predictions for {missing[:10]}"
                       + (f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""))
        if extra:
            msg.append(f"extra predictions for {extra[:10]}"
                       + (f" (+{len(extra) - 10} more)" if len(extra) > 10 else ""))
        raise ValueError("; ".join(msg))


def _count_shard(shard: list[QAItem], by_key: dict):
    """Associative counting for one shard: (confusion, cat_correct, cat_total)."""
    v = len(ANSWER_VOCABULARY)
    cm = np.zeros((v, v), dtype=np.int64)
    cat_correct: dict[str, int] = {}
    cat_total: dict[str, int] = {}
    for g in shard:
        gi = ANSWER_INDEX[g.answer]
        pi = ANSWER_INDEX[by_key[(g.image_id, g.template_id)]]
        cm[gi, pi] += 1
        cat = g.category.value
        cat_total[cat] = cat_total.get(cat, 0) + 1
        if gi == pi:
            cat_correct[cat] = cat_correct.get(cat, 0) + 1
    return cm, cat_correct, cat_total


def _count(gold: list[QAItem], preds: PredictionSet, threads: int = 1):
    """Shard, count, merge. Counts are exact integers, so the merge is
    order-independent and results match any thread count."""
    if threads <= 1 or len(gold) < 2 * threads:
        return _count_shard(gold, preds.by_key)
    size = -(-len(gold) // threads)
    shards = [gold[i:i + size] for i in range(0, len(gold), size)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda s: _count_shard(s, preds.by_key), shards))
    cm = np.zeros_like(parts[0][0])
    cat_correct: dict[str, int] = {}
    cat_total: dict[str, int] = {}
    for pcm, pcorrect, ptotal in parts:
        cm += pcm
        for k, n in pcorrect.items():
            cat_correct[k] = cat_correct.get(k, 0) + n
        for k, n in ptotal.items():
            cat_total[k] = cat_total.get(k, 0) + n
    return cm, cat_correct, cat_total


def confusion_matrix(gold: list[QAItem], preds: PredictionSet) -> np.ndarray:
    """|V| x |V| counts; rows gold, columns predicted."""
    _check_keys(gold, preds)
    return _count_shard(gold, preds.by_key)[0]


def per_category_breakdown(gold: list[QAItem], preds: PredictionSet) -> dict[str, float]:
    """Accuracy restricted to each category's items; empty categories omitted."""
    _check_keys(gold, preds)
    _, correct, total = _count_shard(gold, preds.by_key)
    return {cat: correct.get(cat, 0) / n for cat, n in total.items()}


def score(gold: list[QAItem], preds: PredictionSet, threads: int = 1) -> EvalReport:
    if not gold:
        raise ValueError("empty gold set")
    _check_keys(gold, preds)
    cm, cat_correct, cat_total = _count(gold, preds, threads=threads)
    n = int(cm.sum())
    tp = np.diag(cm).astype(np.float64)
    gold_support = cm.sum(axis=1).astype(np.float64)
    pred_support = cm.sum(axis=0).astype(np.float64)

    oa = float(tp.sum() / n)

    # Classes participate in the macro averages iff they appear in gold or
    # predictions; zero-denominator precision/recall for such classes is 0.
    active = (gold_support + pred_support) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_support > 0, tp / np.maximum(pred_support, 1), 0.0)
        recall = np.where(gold_support > 0, tp / np.maximum(gold_support, 1), 0.0)
    pr = precision + recall
    f1 = np.where(pr > 0, 2 * precision * recall / np.maximum(pr, 1e-300), 0.0)

    macro_p = float(precision[active].mean())
    macro_r = float(recall[active].mean())
    macro_f1 = float(f1[active].mean())

    per_cat = {cat: cat_correct.get(cat, 0) / total
               for cat, total in cat_total.items()}
    aa = float(np.mean(list(per_cat.values())))

    per_class_f1 = {
        ANSWER_VOCABULARY[i]: float(f1[i]) for i in range(len(ANSWER_VOCABULARY)) if active[i]
    }
    return EvalReport(
        overall_accuracy=oa,
        average_accuracy=aa,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f1,
        per_category_accuracy=per_cat,
        per_class_f1=per_class_f1,
        n_items=n,
    )


def report_to_json(report: EvalReport) -> str:
    """Deterministic JSON: sorted keys, floats fixed to 4 decimals."""
    def r4(x: float) -> float:
        return round(x, 4)

    payload = {
        "f1_averaging": "macro over answer classes with support",
        "n_items": report.n_items,
        "overall_accuracy": r4(report.overall_accuracy),
        "average_accuracy": r4(report.average_accuracy),
        "macro_precision": r4(report.macro_precision),
        "macro_recall": r4(report.macro_recall),
        "macro_f1": r4(report.macro_f1),
        "per_category_accuracy": {k: r4(v) for k, v in report.per_category_accuracy.items()},
        "per_class_f1": {k: r4(v) for k, v in report.per_class_f1.items()},
    }
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
