"""Stage I: train a binary noise filter on the positive/N\\A split with a
small epoch budget (clean patterns are learned before noisy ones get
memorized), then mine probable false negatives from the N/A set by
thresholding the filter's probability output."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .corpus import RelationVocab, Sample
from .encoder import encode_sentence
from .errors import ConfigError, DimensionError
from .model import ModelConfig, ModelParams
from .numerics import Node

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class MinedSet:
    """False-negative candidates mined from the N/A set."""

    entries: tuple[tuple[str, float], ...]  # (sample id, filter score)
    threshold: float

    @property
    def ids(self) -> list[str]:
        return [sid for sid, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class FilterEpochLog:
    epoch: int
    loss: float
    mean_score_p: float
    mean_score_n: float
    n_score_histogram: list[int]  # 10 uniform bins over [0, 1]


def binary_map(relation: int, relations: RelationVocab) -> int:
    """0 for the N/A relation, 1 for any predefined relation."""
    return 0 if relation == relations.na_index else 1


def filter_score_node(
    sample: Sample,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    v = encode_sentence(sample, params, config, train=train, rng=rng)
    logit = nm.pick(nm.affine(v, params.filter_w, params.filter_b), 0)
    return nm.sigmoid(logit)


def filter_score(sample: Sample, params: ModelParams, config: ModelConfig) -> float:
    """Probability that the sentence belongs to the positive set."""
    return filter_score_node(sample, params, config).item()


def filter_loss(
    batch: list[Sample],
    labels: list[int],
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    """Mean binary cross-entropy with probabilities clamped away from 0/1."""
    if not batch:
        raise DimensionError("filter_loss: empty batch")
    terms = []
    for sample, y in zip(batch, labels):
        o = nm.clamp(filter_score_node(sample, params, config, train=train, rng=rng),
                     PROB_FLOOR, 1.0 - PROB_FLOOR)
        if y == 1:
            terms.append(nm.neg(nm.log(o)))
        else:
            terms.append(nm.neg(nm.log(nm.add_const(nm.neg(o), 1.0))))
    return nm.mean_nodes(terms)


def _epoch_stats(samples_by_id, p_ids, n_ids, params, config):
    p_scores = [filter_score(samples_by_id[i], params, config) for i in p_ids]
    n_scores = [filter_score(samples_by_id[i], params, config) for i in n_ids]
    hist, _ = np.histogram(n_scores, bins=10, range=(0.0, 1.0))
    return float(np.mean(p_scores)), float(np.mean(n_scores)), [int(c) for c in hist]


def train_filter(
    samples: list[Sample],
    relations: RelationVocab,
    config: ModelConfig,
    epochs: int,
    batch_size: int,
    lr: float,
    weight_decay: float,
    seed: int,
) -> tuple[ModelParams, list[FilterEpochLog]]:
    """Mini-batch SGD on the encoder + filter head.

    The N/A side is down-sampled to |P| each epoch so the filter cannot win
    by predicting the majority class. Deterministic under the seed.
    """
    from .model import init_params
    from .trainer import sgd_step

    p_ids = [s.id for s in samples if binary_map(s.ds_relation, relations) == 1]
    n_ids = [s.id for s in samples if binary_map(s.ds_relation, relations) == 0]
    if not p_ids or not n_ids:
        raise ConfigError("train_filter: need both positive and N/A samples")
    samples_by_id = {s.id: s for s in samples}

    params = init_params(config, seed)
    rng = np.random.default_rng(seed + 1)
    trained = ("word_emb", "pos_head_emb", "pos_tail_emb", "filter_w", "filter_b") + tuple(
        f"conv_k{k}" for k in config.kernel_sizes)
    log: list[FilterEpochLog] = []

    for epoch in range(epochs):
        picked = rng.choice(len(n_ids), size=min(len(p_ids), len(n_ids)), replace=False)
        order = p_ids + [n_ids[int(j)] for j in picked]
        rng.shuffle(order)
        epoch_losses = []
        for lo in range(0, len(order), batch_size):
            batch = [samples_by_id[i] for i in order[lo:lo + batch_size]]
            labels = [binary_map(s.ds_relation, relations) for s in batch]
            params.zero_grads()
            loss = filter_loss(batch, labels, params, config, train=True, rng=rng)
            nm.backward(loss)
            sgd_step(params, lr, weight_decay, only=trained)
            epoch_losses.append(loss.item())
        mean_p, mean_n, hist = _epoch_stats(samples_by_id, p_ids, n_ids, params, config)
        log.append(FilterEpochLog(epoch, float(np.mean(epoch_losses)), mean_p, mean_n, hist))
    return params, log


def mine(
    n_ids: list[str],
    samples_by_id: dict[str, Sample],
    params: ModelParams,
    config: ModelConfig,
    threshold: float = 0.5,
) -> tuple[MinedSet, list[str]]:
    """Split N into mined candidates (score >= threshold, ties included) and
    the remainder; the two parts restore N exactly."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"mine: threshold must be in (0, 1), got {threshold}")
    entries = []
    kept = []
    for sid in n_ids:
        score = filter_score(samples_by_id[sid], params, config)
        if score >= threshold:
            entries.append((sid, score))
        else:
            kept.append(sid)
    return MinedSet(entries=tuple(entries), threshold=threshold), kept


def write_filter_log(path, log: list[FilterEpochLog]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "filter_loss", "mean_score_P", "mean_score_N"])
        for row in log:
            writer.writerow([row.epoch, repr(row.loss), repr(row.mean_score_p), repr(row.mean_score_n)])
