"""Corpus data model, JSONL ingestion, bag construction, and a synthetic
generator that plants false negatives at a known rate.

The JSONL schema is one object per line:

    {"token": [str] or "text": str,
     "h": {"id": str, "name": str, "pos": [start, end]},
     "t": {"id": str, "name": str, "pos": [start, end]},
     "relation": str}

With "token" input, "pos" is a half-open token index span; with "text" input,
"pos" is a character span which is mapped onto whitespace tokens. Written
files always use the canonical "token" form and carry an extra "id" field so
downstream artifacts (mined sets, pseudo labels) can refer back to samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

OOV_ID = 0
OOV_TOKEN = "<unk>"


@dataclass(frozen=True)
class Sample:
    """One distantly supervised sentence."""

    id: str
    tokens: tuple[int, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    ds_relation: int
    head_entity: str
    tail_entity: str
    head_name: str = ""
    tail_name: str = ""

    def __post_init__(self):
        n = len(self.tokens)
        if n < 1:
            raise ParseError(f"sample {self.id}: empty token sequence")
        for label, (start, end) in (("head", self.head_span), ("tail", self.tail_span)):
            if not (0 <= start < end <= n):
                raise ParseError(
                    f"sample {self.id}: {label} span [{start}, {end}) outside sentence of length {n}")
        if self.head_span == (0, n) and self.tail_span == (0, n):
            raise ParseError(f"sample {self.id}: both entity spans cover the whole sentence")

    @property
    def pair(self) -> tuple[str, str]:
        return (self.head_entity, self.tail_entity)


@dataclass(frozen=True)
class RelationVocab:
    """Bidirectional map between relation names and indices."""

    names: tuple[str, ...]
    na_index: int

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ConfigError("RelationVocab: duplicate relation names")
        if not 0 <= self.na_index < len(self.names):
            raise ConfigError("RelationVocab: na_index out of range")

    @classmethod
    def from_names(cls, names, na_name: str = "NA") -> "RelationVocab":
        names = tuple(names)
        if na_name not in names:
            raise ConfigError(f"RelationVocab: N/A relation {na_name!r} missing from names")
        return cls(names, names.index(na_name))

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def name(self, index: int) -> str:
        return self.names[index]


class TokenVocab:
    """Token-string to id map; id 0 is reserved for out-of-vocabulary."""

    def __init__(self, tokens=()):
        self._tokens: list[str] = [OOV_TOKEN, *tokens]
        self._ids: dict[str, int] = {t: i for i, t in enumerate(self._tokens)}

    @property
    def size(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def add(self, token: str) -> int:
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)
        return self._ids[token]

    def encode(self, token: str) -> int:
        return self._ids.get(token, OOV_ID)

    def decode(self, token_id: int) -> str:
        return self._tokens[token_id]

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenVocab) and self._tokens == other._tokens


@dataclass(frozen=True)
class Bag:
    """All samples sharing one (head entity, tail entity, relation) key."""

    head_entity: str
    tail_entity: str
    ds_relation: int
    sample_ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.sample_ids) < 1:
            raise ConfigError("Bag: needs at least one sample")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.head_entity, self.tail_entity, self.ds_relation)

    @property
    def size(self) -> int:
        return len(self.sample_ids)


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic corpus settings; fn_rate is the planted false-negative rate."""

    vocab_size: int = 40
    relation_count: int = 6
    sentences_per_relation: int = 100
    na_sentences: int = 900
    fn_rate: float = 0.2
    seed: int = 0
    max_len: int = 12

    def __post_init__(self):
        if not 0.0 <= self.fn_rate < 1.0:
            raise ConfigError("SynthConfig: fn_rate must be in [0, 1)")
        if self.relation_count < 2:
            raise ConfigError("SynthConfig: need at least one predefined relation plus N/A")
        if self.vocab_size < 1 or self.sentences_per_relation < 1 or self.na_sentences < 0:
            raise ConfigError("SynthConfig: counts must be positive")
        if self.max_len < 10:
            raise ConfigError("SynthConfig: max_len must be at least 10")


GroundTruth = dict[str, int]  # sample id -> true relation index


# ---------------------------------------------------------------------------
# JSONL ingestion and serialization
# ---------------------------------------------------------------------------

def _char_span_to_token_span(text: str, tokens: list[str], span, line_no: int):
    starts = []
    offset = 0
    for tok in tokens:
        idx = text.index(tok, offset)
        starts.append(idx)
        offset = idx + len(tok)
    lo, hi = int(span[0]), int(span[1])
    covered = [i for i, s in enumerate(starts) if s < hi and s + len(tokens[i]) > lo]
    if not covered:
        raise ParseError(f"line {line_no}: character span [{lo}, {hi}) covers no token")
    return (covered[0], covered[-1] + 1)


def _parse_line(obj: dict, line_no: int, relations: RelationVocab):
    try:
        if "token" in obj:
            tokens = [str(t) for t in obj["token"]]
            spans = {side: tuple(int(p) for p in obj[side]["pos"]) for side in ("h", "t")}
        else:
            text = str(obj["text"])
            tokens = text.split()
            spans = {
                side: _char_span_to_token_span(text, tokens, obj[side]["pos"], line_no)
                for side in ("h", "t")
            }
        rel_name = str(obj["relation"])
        head, tail = obj["h"], obj["t"]
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ParseError(f"line {line_no}: missing or malformed field ({exc})") from None
    try:
        relation = relations.index(rel_name)
    except KeyError:
        raise ParseError(f"line {line_no}: unknown relation {rel_name!r}") from None
    return tokens, spans, relation, head, tail


def load_jsonl(
    path,
    relations: RelationVocab,
    token_vocab: TokenVocab | None = None,
) -> tuple[list[Sample], TokenVocab]:
    """Load one Sample per line.

    When `token_vocab` is None, a vocabulary is built from the file in first
    occurrence order (the deterministic first pass); otherwise unseen tokens
    map to the out-of-vocabulary id.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    build = token_vocab is None
    vocab = TokenVocab() if build else token_vocab
    samples: list[Sample] = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {i + 1}: invalid JSON ({exc.msg})") from None
        tokens, spans, relation, head, tail = _parse_line(obj, i + 1, relations)
        ids = tuple((vocab.add(t) if build else vocab.encode(t)) for t in tokens)
        samples.append(
            Sample(
                id=str(obj.get("id", f"s{i:06d}")),
                tokens=ids,
                head_span=spans["h"],
                tail_span=spans["t"],
                ds_relation=relation,
                head_entity=str(head["id"]),
                tail_entity=str(tail["id"]),
                head_name=str(head.get("name", "")),
                tail_name=str(tail.get("name", "")),
            )
        )
    return samples, vocab


def sample_to_obj(sample: Sample, token_vocab: TokenVocab, relations: RelationVocab) -> dict:
    return {
        "id": sample.id,
        "token": [token_vocab.decode(t) for t in sample.tokens],
        "h": {"id": sample.head_entity, "name": sample.head_name, "pos": list(sample.head_span)},
        "t": {"id": sample.tail_entity, "name": sample.tail_name, "pos": list(sample.tail_span)},
        "relation": relations.name(sample.ds_relation),
    }


def write_jsonl(path, samples, token_vocab: TokenVocab, relations: RelationVocab) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_obj(sample, token_vocab, relations)) + "\n")


def write_truth(path, truth: GroundTruth, order, relations: RelationVocab) -> None:
    """Sidecar file: one {"id", "true_relation"} object per sample."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for sample_id in order:
            obj = {"id": sample_id, "true_relation": relations.name(truth[sample_id])}
            fh.write(json.dumps(obj) + "\n")


def load_truth(path, relations: RelationVocab) -> GroundTruth:
    truth: GroundTruth = {}
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            truth[str(obj["id"])] = relations.index(str(obj["true_relation"]))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ParseError(f"line {i + 1}: malformed truth entry ({exc})") from None
    return truth


def scan_relation_vocab(path, na_name: str = "NA") -> RelationVocab:
    """Relation vocabulary from a corpus file: sorted unique relation names,
    with the N/A name always present."""
    names = set()
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            names.add(str(json.loads(line)["relation"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"line {i + 1}: missing or malformed relation ({exc})") from None
    names.add(na_name)
    return RelationVocab.from_names(sorted(names), na_name)


# ---------------------------------------------------------------------------
# splitting and bagging
# ---------------------------------------------------------------------------

def split_pn(samples, relations: RelationVocab) -> tuple[list[str], list[str]]:
    """Partition sample ids into (positive, N/A), preserving input order."""
    positive = [s.id for s in samples if s.ds_relation != relations.na_index]
    negative = [s.id for s in samples if s.ds_relation == relations.na_index]
    return positive, negative


def build_bags(samples) -> list[Bag]:
    """Group samples by (head entity, tail entity, relation), sorted by key."""
    groups: dict[tuple[str, str, int], list[str]] = {}
    for s in samples:
        groups.setdefault((s.head_entity, s.tail_entity, s.ds_relation), []).append(s.id)
    return [
        Bag(head_entity=h, tail_entity=t, ds_relation=r, sample_ids=tuple(ids))
        for (h, t, r), ids in sorted(groups.items())
    ]


# ---------------------------------------------------------------------------
# synthetic corpus with planted false negatives
# ---------------------------------------------------------------------------

def synth_relation_vocab(relation_count: int) -> RelationVocab:
    names = tuple(f"rel{r}" for r in range(relation_count - 1)) + ("NA",)
    return RelationVocab(names, na_index=relation_count - 1)


def _cue_tokens(relation: int) -> list[str]:
    # 2- or 3-token collocation, fixed per relation.
    cues = [f"cue{relation}a", f"cue{relation}b", f"cue{relation}c"]
    return cues[: 2 + relation % 2]


def _filler(rng: np.random.Generator, config: SynthConfig, count: int) -> list[str]:
    return [f"w{rng.integers(config.vocab_size):03d}" for _ in range(count)]


def _make_sentence(rng, config, head_tok: str, tail_tok: str, cues: list[str]):
    pre = _filler(rng, config, int(rng.integers(0, 3)))
    mid1 = _filler(rng, config, int(rng.integers(0, 2)))
    mid2 = _filler(rng, config, int(rng.integers(0, 2)))
    post = _filler(rng, config, int(rng.integers(0, 3)))
    tokens = pre + [head_tok] + mid1 + cues + mid2 + [tail_tok] + post
    if len(tokens) > config.max_len:
        # trim filler from the outside in; cue and entity tokens are kept
        excess = len(tokens) - config.max_len
        drop_post = min(excess, len(post))
        tokens = tokens[: len(tokens) - drop_post]
        excess -= drop_post
        tokens = tokens[excess:]
        pre = pre[excess:]
    head_start = len(pre)
    tail_start = head_start + 1 + len(mid1) + len(cues) + len(mid2)
    return tokens, (head_start, head_start + 1), (tail_start, tail_start + 1)


def synth_generate(config: SynthConfig) -> tuple[list[Sample], GroundTruth, RelationVocab, TokenVocab]:
    """Template corpus: each predefined relation has a distinctive cue
    collocation between its entity slots, genuine N/A sentences have none,
    and exactly floor(fn_rate * sentences_per_relation) sentences per relation
    are relabeled N/A while the ground truth keeps their real relation."""
    rng = np.random.default_rng(config.seed)
    relations = synth_relation_vocab(config.relation_count)
    na = relations.na_index
    vocab = TokenVocab()
    samples: list[Sample] = []
    truth: GroundTruth = {}
    counter = 0

    def emit(tokens, head_span, tail_span, ds_rel, true_rel, head_id, tail_id):
        nonlocal counter
        sid = f"syn{counter:05d}"
        counter += 1
        ids = tuple(vocab.add(t) for t in tokens)
        samples.append(
            Sample(
                id=sid, tokens=ids, head_span=head_span, tail_span=tail_span,
                ds_relation=ds_rel, head_entity=head_id, tail_entity=tail_id,
                head_name=head_id, tail_name=tail_id,
            )
        )
        truth[sid] = true_rel

    for r in range(config.relation_count - 1):
        count = config.sentences_per_relation
        pairs = max(1, count // 2)
        planted = set(map(int, rng.permutation(count)[: int(config.fn_rate * count)]))
        cues = _cue_tokens(r)
        for i in range(count):
            p = int(rng.integers(pairs))
            head_id, tail_id = f"h{r}_{p}", f"t{r}_{p}"
            tokens, hs, ts = _make_sentence(rng, config, f"ent_{head_id}", f"ent_{tail_id}", cues)
            emit(tokens, hs, ts, na if i in planted else r, r, head_id, tail_id)

    na_pairs = max(1, config.na_sentences // 2)
    for _ in range(config.na_sentences):
        p = int(rng.integers(na_pairs))
        head_id, tail_id = f"hNA_{p}", f"tNA_{p}"
        tokens, hs, ts = _make_sentence(rng, config, f"ent_{head_id}", f"ent_{tail_id}", [])
        emit(tokens, hs, ts, na, na, head_id, tail_id)

    return samples, truth, relations, vocab
