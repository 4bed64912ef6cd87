"""Held-out evaluation: rank every (bag, relation) posterior against the
DS facts to trace a precision-recall curve, integrate it, and report P@N and
the best micro-F1 along the curve. Also hosts the test-set FN-removal
experiment with its random-removal control."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aligner import bag_rep, classify
from .corpus import Bag, RelationVocab, Sample, build_bags
from .encoder import encode_sentence
from .errors import ConfigError, ConsistencyError
from .model import ModelConfig, ModelParams


@dataclass(frozen=True)
class Prediction:
    bag_key: tuple[str, str, int]
    relation: int
    score: float


@dataclass(frozen=True)
class PRPoint:
    precision: float
    recall: float
    rank: int


def score_all(
    test_bags: Sequence[Bag],
    samples_by_id: dict[str, Sample],
    params: ModelParams,
    config: ModelConfig,
    relations: RelationVocab,
) -> list[Prediction]:
    """One prediction per (bag, non-N/A relation): the posterior of that
    relation when the bag is attended with its query. Deterministic order by
    (bag key, relation index)."""
    predictions = []
    for bag in sorted(test_bags, key=lambda b: b.key):
        reps = {sid: encode_sentence(samples_by_id[sid], params, config)
                for sid in bag.sample_ids}
        for r in range(relations.size):
            if r == relations.na_index:
                continue
            rep = bag_rep(bag, reps, params, r)
            score = float(classify(rep.g, params.cls_w, params.cls_b).value[r])
            predictions.append(Prediction(bag_key=bag.key, relation=r, score=score))
    return predictions


def gold_facts(test_bags: Sequence[Bag], relations: RelationVocab) -> set[tuple]:
    """DS facts of the non-N/A test bags (the standard held-out protocol)."""
    return {(bag.key, bag.ds_relation) for bag in test_bags
            if bag.ds_relation != relations.na_index}


def _ranked(predictions: Sequence[Prediction]) -> list[Prediction]:
    return sorted(predictions, key=lambda p: (-p.score, p.bag_key, p.relation))


def pr_curve(predictions: Sequence[Prediction], gold: set[tuple]) -> list[PRPoint]:
    """Precision and recall at every rank of the score-sorted predictions."""
    if not gold:
        raise ConfigError("pr_curve: empty gold set")
    points = []
    hits = 0
    for k, pred in enumerate(_ranked(predictions), start=1):
        hits += (pred.bag_key, pred.relation) in gold
        points.append(PRPoint(precision=hits / k, recall=hits / len(gold), rank=k))
    return points


def auc(points: Sequence[PRPoint]) -> float:
    """Trapezoidal area under the full (recall, precision) curve, prefixed
    with the first point's precision at recall 0."""
    if not points:
        raise ConfigError("auc: empty curve")
    area = 0.0
    prev_r, prev_p = 0.0, points[0].precision
    for pt in points:
        area += (pt.recall - prev_r) * (pt.precision + prev_p) / 2.0
        prev_r, prev_p = pt.recall, pt.precision
    return area


def p_at_n(predictions: Sequence[Prediction], gold: set[tuple], n: int) -> float:
    """Percentage of correct predictions among the top n; when fewer than n
    predictions exist the denominator is the list length."""
    if n < 1:
        raise ConfigError(f"p_at_n: n must be >= 1, got {n}")
    top = _ranked(predictions)[:n]
    if not top:
        return 0.0
    hits = sum((p.bag_key, p.relation) in gold for p in top)
    return 100.0 * hits / len(top)


def best_micro_f1(points: Sequence[PRPoint]) -> float:
    """Maximum of 2pr/(p+r) along the curve; 0 where p + r = 0."""
    if not points:
        raise ConfigError("best_micro_f1: empty curve")
    best = 0.0
    for pt in points:
        if pt.precision + pt.recall > 0.0:
            best = max(best, 2.0 * pt.precision * pt.recall / (pt.precision + pt.recall))
    return best


def summarize(predictions: Sequence[Prediction], gold: set[tuple]) -> dict:
    points = pr_curve(predictions, gold)
    return {
        "auc": auc(points),
        "p_at": {str(n): p_at_n(predictions, gold, n) for n in (100, 200, 300)},
        "best_micro_f1": best_micro_f1(points),
    }


def evaluate_samples(
    samples: Sequence[Sample],
    params: ModelParams,
    config: ModelConfig,
    relations: RelationVocab,
) -> tuple[dict, list[Prediction], list[PRPoint]]:
    bags = build_bags(samples)
    samples_by_id = {s.id: s for s in samples}
    predictions = score_all(bags, samples_by_id, params, config, relations)
    gold = gold_facts(bags, relations)
    return summarize(predictions, gold), predictions, pr_curve(predictions, gold)


def fn_removal_experiment(
    test_samples: Sequence[Sample],
    mined_test_ids: Sequence[str],
    params: ModelParams,
    config: ModelConfig,
    relations: RelationVocab,
    seed: int,
) -> dict:
    """Metrics on the test set before FN removal, after removing the mined
    test N/A sentences, and after removing an equally sized random N/A
    subset (the control), all with the same trained model."""
    na_ids = [s.id for s in test_samples if s.ds_relation == relations.na_index]
    mined = list(mined_test_ids)
    extra = set(mined) - set(na_ids)
    if extra:
        raise ConsistencyError(
            f"fn_removal_experiment: {len(extra)} mined ids are not test N/A sentences")

    before, _, _ = evaluate_samples(test_samples, params, config, relations)

    mined_set = set(mined)
    after_samples = [s for s in test_samples if s.id not in mined_set]
    after, _, _ = evaluate_samples(after_samples, params, config, relations)

    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(na_ids), size=len(mined), replace=False) if mined else []
    random_set = {na_ids[int(i)] for i in chosen}
    random_samples = [s for s in test_samples if s.id not in random_set]
    control, _, _ = evaluate_samples(random_samples, params, config, relations)

    return {
        "removed": len(mined),
        "test_na_size": len(na_ids),
        "before": before,
        "after": after,
        "random_control": control,
    }
