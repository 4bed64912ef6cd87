"""Command-line front end: synth, mine, train, eval.

Exit codes: 0 success, 1 numeric/training failure, 2 input error,
3 config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import traceback
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, load_run_config
from .corpus import (build_bags, load_jsonl, scan_relation_vocab, split_pn,
                     synth_generate, write_jsonl, write_truth)
from .encoder import encode_sentence
from .errors import (ConfigError, ConsistencyError, FormatError, NumericError,
                     ParseError)
from .evalkit import evaluate_samples, fn_removal_experiment, _ranked
from .miner import write_filter_log
from .trainer import run_stage1, run_stage2, write_mined_jsonl


def _load_config(args) -> RunConfig:
    config = load_run_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    return apply_overrides(config, args.set or [])


def _load_train_corpus(config: RunConfig):
    train_path = config.path("train")
    relations = scan_relation_vocab(train_path)
    samples, token_vocab = load_jsonl(train_path, relations)
    return samples, relations, token_vocab


def cmd_synth(args) -> None:
    config = _load_config(args)
    jobs = [
        ("train", "train_truth", config.synth_config()),
        ("test", "test_truth", config.synth_test_config()),
    ]
    for path_key, truth_key, synth_cfg in jobs:
        samples, truth, relations, token_vocab = synth_generate(synth_cfg)
        corpus_path = config.path(path_key)
        truth_path = config.path(truth_key, str(corpus_path) + ".truth")
        write_jsonl(corpus_path, samples, token_vocab, relations)
        write_truth(truth_path, truth, [s.id for s in samples], relations)
        planted = sum(truth[s.id] != s.ds_relation for s in samples)
        print(f"wrote {corpus_path}: {len(samples)} sentences ({planted} planted FN)")
        print(f"wrote {truth_path}: {len(samples)} truth entries")


def cmd_mine(args) -> None:
    config = _load_config(args)
    samples, relations, token_vocab = _load_train_corpus(config)
    samples_by_id = {s.id: s for s in samples}
    positive, negative = split_pn(samples, relations)
    mined_path = config.path("mined", str(config.out_path("mined.jsonl")))

    if not negative:
        mined_path.parent.mkdir(parents=True, exist_ok=True)
        mined_path.write_text("")
        print(f"N/A set is empty; wrote {mined_path}: 0 mined sentences")
        return

    train_cfg = config.train_config()
    model_cfg = config.model_config(token_vocab.size, relations.size)
    result = run_stage1(samples, relations, model_cfg, train_cfg)
    write_mined_jsonl(mined_path, result.mined, samples_by_id, token_vocab, relations)
    write_filter_log(config.out_path("filter_log.csv"), result.log)
    save_checkpoint(config.out_path("filter.ckpt"), result.params, relations, token_vocab,
                    rng_state=None, epoch=train_cfg.filter_epochs,
                    extra={"stage": 1, "train_config": dataclasses.asdict(train_cfg)})
    print(f"trained filter on {len(positive)} positive / {len(negative)} N/A sentences")
    print(f"wrote {mined_path}: {len(result.mined)} mined sentences "
          f"(threshold {train_cfg.threshold}, {len(result.n_prime)} kept in N)")


def _read_mined_ids(path) -> list[str]:
    ids = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            ids.append(str(json.loads(line)["id"]))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ParseError(f"line {i + 1}: malformed mined entry ({exc})") from None
    return ids


def cmd_train(args) -> None:
    config = _load_config(args)
    samples, relations, token_vocab = _load_train_corpus(config)
    if args.no_mined:
        mined_ids: list[str] = []
    else:
        mined_ids = _read_mined_ids(config.path("mined", str(config.out_path("mined.jsonl"))))
    known = {s.id for s in samples}
    unknown = [i for i in mined_ids if i not in known]
    if unknown:
        raise ConsistencyError(
            f"mined set has {len(unknown)} ids not in the training corpus, e.g. {unknown[0]!r}")
    mined_set = set(mined_ids)
    dprime = [s for s in samples if s.id not in mined_set]
    m_samples = [s for s in samples if s.id in mined_set]

    train_cfg = config.train_config()
    model_cfg = config.model_config(token_vocab.size, relations.size)
    ckpt_path = config.path("checkpoint", str(config.out_path("stage2.ckpt")))
    trainer, labels = run_stage2(dprime, m_samples, relations, model_cfg, train_cfg,
                                 token_vocab, out_dir=config.out_dir,
                                 checkpoint_path=ckpt_path)
    print(f"trained {train_cfg.epochs} epochs on {len(trainer.dprime_bags)} labeled bags "
          f"+ {len(trainer.m_bags)} mined bags")
    print(f"wrote {ckpt_path} and {len(labels)} bag pseudo labels")


def _write_pr_csv(path, predictions, points) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "score", "precision", "recall"])
        for pred, pt in zip(_ranked(predictions), points):
            writer.writerow([pt.rank, repr(pred.score), repr(pt.precision), repr(pt.recall)])


def _write_json(path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _dump_bag_reps(path, samples, params, model_cfg, relations) -> None:
    samples_by_id = {s.id: s for s in samples}
    path.parent.mkdir(parents=True, exist_ok=True)
    from .aligner import bag_rep
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for bag in build_bags(samples):
            reps = {sid: encode_sentence(samples_by_id[sid], params, model_cfg)
                    for sid in bag.sample_ids}
            g = bag_rep(bag, reps, params, bag.ds_relation).g.value
            writer.writerow([bag.head_entity, bag.tail_entity,
                             relations.name(bag.ds_relation)] + [repr(x) for x in g])


def cmd_eval(args) -> None:
    config = _load_config(args)
    ckpt = load_checkpoint(config.path("checkpoint", str(config.out_path("stage2.ckpt"))))
    test_path = config.path("test")
    samples, _ = load_jsonl(test_path, ckpt.relations, ckpt.token_vocab)
    summary, predictions, points = evaluate_samples(
        samples, ckpt.params, ckpt.params.config, ckpt.relations)
    _write_json(config.out_path("metrics.json"), summary)
    _write_pr_csv(config.out_path("pr_curve.csv"), predictions, points)
    print(f"evaluated {len(samples)} test sentences: auc={summary['auc']:.4f} "
          f"best_micro_f1={summary['best_micro_f1']:.4f}")

    if args.dump_bag_reps:
        _dump_bag_reps(config.out_path("bag_reps.csv"), samples, ckpt.params,
                       ckpt.params.config, ckpt.relations)
        print(f"wrote {config.out_path('bag_reps.csv')}")

    if args.mine_test:
        # Stage I applied to the test corpus, with its own token vocabulary.
        test_samples_fresh, test_vocab = load_jsonl(test_path, ckpt.relations)
        _, test_na = split_pn(test_samples_fresh, ckpt.relations)
        train_cfg = dataclasses.replace(config.train_config(), seed=config.seed + 7)
        if test_na:
            filter_cfg = dataclasses.replace(
                config.model_config(test_vocab.size, ckpt.relations.size))
            result = run_stage1(test_samples_fresh, ckpt.relations, filter_cfg, train_cfg)
            mined_test_ids = result.mined.ids
        else:
            mined_test_ids = []
        report = fn_removal_experiment(samples, mined_test_ids, ckpt.params,
                                       ckpt.params.config, ckpt.relations, seed=config.seed)
        _write_json(config.out_path("fn_removal.json"), report)
        print(f"fn-removal: removed {report['removed']} of {report['test_na_size']} test N/A; "
              f"auc {report['before']['auc']:.4f} -> {report['after']['auc']:.4f} "
              f"(random control {report['random_control']['auc']:.4f})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fnalign",
        description="Mine false negatives from a distantly supervised N/A set, "
                    "align them adversarially, and evaluate the bag classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key, e.g. train.epochs=5")

    p = sub.add_parser("synth", help="generate the synthetic train/test corpora")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine", help="train the noise filter and mine the N/A set")
    common(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", help="train the bag classifier with adversarial alignment")
    common(p)
    p.add_argument("--no-mined", action="store_true",
                   help="train without a mined set (M empty)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out evaluation of a checkpoint")
    common(p)
    p.add_argument("--mine-test", action="store_true",
                   help="also mine the test N/A set and report the FN-removal experiment")
    p.add_argument("--dump-bag-reps", action="store_true",
                   help="dump bag representations for external projection")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except (ParseError, FormatError, ConsistencyError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
