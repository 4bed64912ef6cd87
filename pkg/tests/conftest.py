"""Shared fixtures: micro-scale worlds for unit tests and the committed
synthetic pipeline runs the acceptance suite measures."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np
import pytest

from fnalign.corpus import (Sample, SynthConfig, build_bags, split_pn,
                            synth_generate)
from fnalign.model import ModelConfig, ModelParams, init_params
from fnalign.trainer import Stage2Trainer, TrainConfig, run_stage1

ACCEPT_SEEDS = (0, 1, 2)

TRAIN_SYNTH = dict(vocab_size=40, relation_count=6, sentences_per_relation=100,
                   na_sentences=900, fn_rate=0.2)
TEST_SYNTH = dict(TRAIN_SYNTH, sentences_per_relation=60, na_sentences=400)


def micro_config(vocab_size=12, n_relations=4) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, n_relations=n_relations,
                       word_dim=6, pos_dim=2, max_offset=4,
                       kernel_sizes=(2, 3), filters_per_size=2)


def make_sample(rng: np.random.Generator, config: ModelConfig, sid: str,
                relation: int, pair: tuple[str, str] | None = None) -> Sample:
    n = int(rng.integers(5, 9))
    tokens = tuple(int(t) for t in rng.integers(0, config.vocab_size, size=n))
    a, b = sorted(rng.choice(n, size=2, replace=False))
    head, tail = pair if pair else (f"h{sid}", f"t{sid}")
    return Sample(id=sid, tokens=tokens, head_span=(int(a), int(a) + 1),
                  tail_span=(int(b), int(b) + 1), ds_relation=relation,
                  head_entity=head, tail_entity=tail)


def make_micro_bags(rng, config, relations_per_bag, bag_size=2, start=0):
    """One bag per requested relation, `bag_size` fresh samples each."""
    samples, bags_samples = [], []
    counter = start
    for rel in relations_per_bag:
        pair = (f"h{counter}", f"t{counter}")
        members = []
        for _ in range(bag_size):
            members.append(make_sample(rng, config, f"s{counter}", rel, pair))
            counter += 1
        samples.extend(members)
        bags_samples.append(members)
    bags = build_bags(samples)
    return samples, bags


def reencode(samples, src_vocab, dst_vocab):
    """Re-map token ids from one vocabulary to another (OOV -> 0)."""
    return [
        dataclasses.replace(s, tokens=tuple(dst_vocab.encode(src_vocab.decode(t))
                                            for t in s.tokens))
        for s in samples
    ]


@dataclass
class PipelineRun:
    seed: int
    samples: list
    truth: dict
    relations: object
    token_vocab: object
    planted: set
    n_ids: list
    model_config: ModelConfig
    train_config: TrainConfig
    stage1: object
    stage1_seconds: float
    trainer: Stage2Trainer
    labels: list
    test_samples: list          # encoded with the train vocabulary
    test_truth: dict
    mined_test_ids: list


def run_pipeline(seed: int) -> PipelineRun:
    train_syn = SynthConfig(seed=seed, **TRAIN_SYNTH)
    test_syn = SynthConfig(seed=seed + 1, **TEST_SYNTH)
    samples, truth, relations, token_vocab = synth_generate(train_syn)
    planted = {s.id for s in samples if truth[s.id] != s.ds_relation}
    _, n_ids = split_pn(samples, relations)

    model_cfg = ModelConfig(vocab_size=token_vocab.size, n_relations=relations.size)
    train_cfg = TrainConfig(batch_size=16, epochs=12, filter_epochs=3, seed=seed + 10)

    t0 = time.time()
    stage1 = run_stage1(samples, relations, model_cfg, train_cfg)
    stage1_seconds = time.time() - t0

    mined = set(stage1.mined.ids)
    trainer = Stage2Trainer(
        [s for s in samples if s.id not in mined],
        [s for s in samples if s.id in mined],
        relations, model_cfg, train_cfg, token_vocab)
    trainer.train()
    labels = trainer.pseudo_labels()

    test_raw, test_truth, _, test_vocab = synth_generate(test_syn)
    test_samples = reencode(test_raw, test_vocab, token_vocab)

    # Stage I applied to the test corpus, with its own vocabulary and filter.
    filter_cfg = ModelConfig(vocab_size=test_vocab.size, n_relations=relations.size)
    stage1_test = run_stage1(test_raw, relations, filter_cfg,
                             dataclasses.replace(train_cfg, seed=seed + 7))

    return PipelineRun(
        seed=seed, samples=samples, truth=truth, relations=relations,
        token_vocab=token_vocab, planted=planted, n_ids=n_ids,
        model_config=model_cfg, train_config=train_cfg, stage1=stage1,
        stage1_seconds=stage1_seconds, trainer=trainer, labels=labels,
        test_samples=test_samples, test_truth=test_truth,
        mined_test_ids=list(stage1_test.mined.ids),
    )


@pytest.fixture(scope="session")
def accept_runs() -> dict[int, PipelineRun]:
    return {seed: run_pipeline(seed) for seed in ACCEPT_SEEDS}
