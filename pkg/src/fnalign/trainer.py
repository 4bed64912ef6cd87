"""Optimization loop: SGD with selective weight decay, the Stage-I driver
(train filter, then mine), and the Stage-II driver (mixed mini-batches over
labeled and mined bags, resumable via checkpoints)."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .aligner import PseudoLabel, assign_pseudo_labels, total_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (Bag, RelationVocab, Sample, TokenVocab, build_bags,
                     sample_to_obj, split_pn)
from .encoder import encode_sentence
from .errors import ConfigError, NumericError
from .miner import MinedSet, mine, train_filter, write_filter_log
from .model import ModelConfig, ModelParams, init_params

BIAS_NAMES = ("cls_b", "filter_b", "disc_b")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults follow the reference hyperparameter
    table except batch size, which is desk scale (production used 160)."""

    batch_size: int = 16
    learning_rate: float = 0.1
    weight_decay: float = 1e-5
    epochs: int = 50
    filter_epochs: int = 3
    seed: int = 0
    alpha: float = 0.01
    beta: float = 0.01
    gamma: float = 0.0001
    threshold: float = 0.5
    tau: float = 1.0
    adv_log_loss: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("TrainConfig: learning_rate must be positive, weight_decay >= 0")
        if self.batch_size < 2:
            raise ConfigError("TrainConfig: batch_size must be >= 2 (contrastive loss needs pairs)")
        if self.epochs < 0 or self.filter_epochs < 0:
            raise ConfigError("TrainConfig: epoch counts must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("TrainConfig: threshold must be in (0, 1)")


def sgd_step(params: ModelParams, lr: float, weight_decay: float, only=None) -> None:
    """w <- w - lr * (g + wd * w). Biases are never decayed; embedding rows
    left untouched by the step (zero gradient) are not decayed either."""
    for name, node in params.named():
        if only is not None and name not in only:
            continue
        g = node.grad
        if name in BIAS_NAMES or weight_decay == 0.0:
            update = g
        elif name.endswith("_emb"):
            touched = np.any(g != 0.0, axis=1, keepdims=True)
            update = g + weight_decay * (node.value * touched)
        else:
            update = g + weight_decay * node.value
        node.value -= lr * update
        if not np.all(np.isfinite(node.value)):
            raise NumericError(f"sgd_step: non-finite values in tensor {name}")


# ---------------------------------------------------------------------------
# Stage I driver
# ---------------------------------------------------------------------------

@dataclass
class Stage1Result:
    params: ModelParams
    mined: MinedSet
    n_prime: list[str]
    d_prime: list[str]  # all sample ids except the mined ones, input order
    log: list


def run_stage1(
    samples: list[Sample],
    relations: RelationVocab,
    model_config: ModelConfig,
    train_config: TrainConfig,
    token_vocab: TokenVocab | None = None,
    out_dir=None,
) -> Stage1Result:
    """Train the noise filter, mine the N/A set, and (optionally) persist the
    mined set, the refined-split log, and the filter checkpoint."""
    samples_by_id = {s.id: s for s in samples}
    _, n_ids = split_pn(samples, relations)
    params, log = train_filter(
        samples, relations, model_config,
        epochs=train_config.filter_epochs, batch_size=train_config.batch_size,
        lr=train_config.learning_rate, weight_decay=train_config.weight_decay,
        seed=train_config.seed,
    )
    mined, n_prime = mine(n_ids, samples_by_id, params, model_config, train_config.threshold)
    mined_ids = set(mined.ids)
    d_prime = [s.id for s in samples if s.id not in mined_ids]
    result = Stage1Result(params=params, mined=mined, n_prime=n_prime, d_prime=d_prime, log=log)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if token_vocab is None:
            raise ConfigError("run_stage1: token_vocab required to persist the mined set")
        write_mined_jsonl(out_dir / "mined.jsonl", mined, samples_by_id, token_vocab, relations)
        write_filter_log(out_dir / "filter_log.csv", log)
        save_checkpoint(out_dir / "filter.ckpt", params, relations, token_vocab,
                        rng_state=None, epoch=train_config.filter_epochs,
                        extra={"stage": 1, "train_config": asdict(train_config)})
    return result


def write_mined_jsonl(
    path,
    mined: MinedSet,
    samples_by_id: dict[str, Sample],
    token_vocab: TokenVocab,
    relations: RelationVocab,
    pseudo: dict[str, tuple[str, float]] | None = None,
) -> None:
    """Mined-set schema: the sample object plus pseudo_relation (empty until
    Stage II assigns one) and confidence."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for sid, score in mined.entries:
            obj = sample_to_obj(samples_by_id[sid], token_vocab, relations)
            if pseudo is not None and sid in pseudo:
                obj["pseudo_relation"], obj["confidence"] = pseudo[sid]
            else:
                obj["pseudo_relation"], obj["confidence"] = "", score
            fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# Stage II driver
# ---------------------------------------------------------------------------

STAGE2_FROZEN = ("filter_w", "filter_b")


@dataclass
class StepLog:
    step: int
    epoch: int
    parts: dict[str, float]


class Stage2Trainer:
    """Owns the Stage-II parameters, RNG stream, and epoch counter so a run
    can be checkpointed after any epoch and resumed bit-exactly."""

    def __init__(
        self,
        dprime_samples: list[Sample],
        m_samples: list[Sample],
        relations: RelationVocab,
        model_config: ModelConfig,
        train_config: TrainConfig,
        token_vocab: TokenVocab,
    ):
        self.samples_by_id = {s.id: s for s in list(dprime_samples) + list(m_samples)}
        self.dprime_bags = build_bags(dprime_samples)
        self.m_bags = build_bags(m_samples)
        self.relations = relations
        self.model_config = model_config
        self.train_config = train_config
        self.token_vocab = token_vocab
        # Stage II draws its own init stream: the stages share no weights.
        self.params = init_params(model_config, train_config.seed + 2)
        self.rng = np.random.default_rng(train_config.seed + 3)
        self.epoch = 0
        self.log_rows: list[StepLog] = []
        self._trained = tuple(
            name for name, _ in self.params.named() if name not in STAGE2_FROZEN)
        self._m_cursor = 0

    def _next_m_batch(self, m_order: list[int], count: int) -> list[Bag]:
        batch = []
        for _ in range(count):
            batch.append(self.m_bags[m_order[self._m_cursor % len(m_order)]])
            self._m_cursor += 1
        return batch

    def run_epoch(self) -> None:
        cfg = self.train_config
        order = list(self.rng.permutation(len(self.dprime_bags)))
        m_order = list(self.rng.permutation(len(self.m_bags))) if self.m_bags else []
        self._m_cursor = 0
        step_base = len(self.log_rows)
        for i, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [self.dprime_bags[j] for j in order[lo:lo + cfg.batch_size]]
            m_batch = self._next_m_batch(m_order, min(cfg.batch_size, len(m_order))) if m_order else []
            needed = {sid for bag in batch for sid in bag.sample_ids}
            needed |= {sid for bag in m_batch for sid in bag.sample_ids}
            reps = {
                sid: encode_sentence(self.samples_by_id[sid], self.params, self.model_config,
                                     train=True, rng=self.rng)
                for sid in sorted(needed)
            }
            self.params.zero_grads()
            loss, parts = total_loss(
                batch, m_batch, reps, self.params, self.relations.na_index,
                cfg.alpha, cfg.beta, cfg.gamma, cfg.tau, adv_log_loss=cfg.adv_log_loss)
            nm.backward(loss)
            sgd_step(self.params, cfg.learning_rate, cfg.weight_decay, only=self._trained)
            self.log_rows.append(StepLog(step=step_base + i, epoch=self.epoch, parts=parts))
        self.epoch += 1

    def train(self, epochs: int | None = None) -> None:
        target = self.train_config.epochs if epochs is None else epochs
        while self.epoch < target:
            self.run_epoch()

    def pseudo_labels(self) -> list[PseudoLabel]:
        return assign_pseudo_labels(
            self.m_bags, self.samples_by_id, self.params, self.model_config,
            self.relations.na_index)

    def save(self, path) -> None:
        save_checkpoint(
            path, self.params, self.relations, self.token_vocab,
            rng_state=self.rng.bit_generator.state, epoch=self.epoch,
            extra={"stage": 2, "train_config": asdict(self.train_config)})

    def restore(self, path) -> None:
        ckpt = load_checkpoint(path)
        self.params.load_values(ckpt.params.copy_values())
        self.rng.bit_generator.state = ckpt.rng_state
        self.epoch = ckpt.epoch


def epoch_means(log_rows: list[StepLog], key: str) -> list[float]:
    by_epoch: dict[int, list[float]] = {}
    for row in log_rows:
        by_epoch.setdefault(row.epoch, []).append(row.parts[key])
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def write_train_log(path, log_rows: list[StepLog]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "L_cls", "L_g", "L_d", "L_ctra", "L_total"])
        for row in log_rows:
            writer.writerow([row.step, row.epoch] + [
                repr(row.parts[k]) for k in ("L_cls", "L_g", "L_d", "L_ctra", "L_total")])


def run_stage2(
    dprime_samples: list[Sample],
    m_samples: list[Sample],
    relations: RelationVocab,
    model_config: ModelConfig,
    train_config: TrainConfig,
    token_vocab: TokenVocab,
    out_dir=None,
    checkpoint_path=None,
) -> tuple[Stage2Trainer, list[PseudoLabel]]:
    """Train end to end, then assign pseudo labels to every mined bag."""
    trainer = Stage2Trainer(dprime_samples, m_samples, relations, model_config,
                            train_config, token_vocab)
    trainer.train()
    labels = trainer.pseudo_labels()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_train_log(out_dir / "train_log.csv", trainer.log_rows)
        write_pseudo_labels(out_dir / "pseudo_labels.jsonl", labels, trainer, relations)
    if checkpoint_path is not None:
        trainer.save(checkpoint_path)
    return trainer, labels


def write_pseudo_labels(path, labels: list[PseudoLabel], trainer: Stage2Trainer,
                        relations: RelationVocab) -> None:
    """Mined-set schema with pseudo_relation and confidence populated, one
    row per member sample of each mined bag."""
    by_key = {bag.key: bag for bag in trainer.m_bags}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for label in labels:
            bag = by_key[label.bag_key]
            for sid in bag.sample_ids:
                obj = sample_to_obj(trainer.samples_by_id[sid], trainer.token_vocab, relations)
                obj["pseudo_relation"] = relations.name(label.relation)
                obj["confidence"] = label.confidence
                fh.write(json.dumps(obj) + "\n")
