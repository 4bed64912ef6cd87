"""Versioned binary checkpoint container.

Layout (all bytes deterministic for a given payload, no timestamps):

    magic line           b"FNCK0001\\n"
    header length line   ascii decimal + b"\\n"
    header               UTF-8 JSON, sorted keys
    tensor data          float64 little-endian, concatenated in header order

The header carries the model config, relation and token vocabularies, the
RNG state, the epoch counter, the tensor manifest, and a free-form "extra"
dict (the run's config snapshot).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import RelationVocab, TokenVocab
from .errors import FormatError
from .model import ModelConfig, ModelParams

MAGIC = b"FNCK0001\n"


@dataclass
class Checkpoint:
    params: ModelParams
    relations: RelationVocab
    token_vocab: TokenVocab
    rng_state: dict | None
    epoch: int
    extra: dict


def _config_to_dict(config: ModelConfig) -> dict:
    return {
        "vocab_size": config.vocab_size,
        "n_relations": config.n_relations,
        "word_dim": config.word_dim,
        "pos_dim": config.pos_dim,
        "max_offset": config.max_offset,
        "kernel_sizes": list(config.kernel_sizes),
        "filters_per_size": config.filters_per_size,
        "dropout": config.dropout,
    }


def _config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["kernel_sizes"] = tuple(d["kernel_sizes"])
    return ModelConfig(**d)


def save_checkpoint(
    path,
    params: ModelParams,
    relations: RelationVocab,
    token_vocab: TokenVocab,
    rng_state: dict | None,
    epoch: int,
    extra: dict | None = None,
) -> None:
    names = [name for name, _ in params.named()]
    header = {
        "model_config": _config_to_dict(params.config),
        "relations": {"names": list(relations.names), "na_index": relations.na_index},
        "token_vocab": token_vocab.tokens[1:],  # OOV row is implicit
        "rng_state": rng_state,
        "epoch": epoch,
        "tensors": [{"name": n, "shape": list(params._nodes[n].value.shape)} for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(blob)}\n".encode())
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(params._nodes[name].value, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a checkpoint or unsupported version")
    rest = raw[len(MAGIC):]
    newline = rest.index(b"\n")
    try:
        header_len = int(rest[:newline])
        header = json.loads(rest[newline + 1: newline + 1 + header_len])
    except (ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header ({exc})") from None
    config = _config_from_dict(header["model_config"])
    data = raw[len(MAGIC) + newline + 1 + header_len:]
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += count * 8
    params = ModelParams(config, tensors)
    relations = RelationVocab(tuple(header["relations"]["names"]), header["relations"]["na_index"])
    return Checkpoint(
        params=params,
        relations=relations,
        token_vocab=TokenVocab(header["token_vocab"]),
        rng_state=header["rng_state"],
        epoch=int(header["epoch"]),
        extra=header.get("extra", {}),
    )
