"""Learnable parameter set shared by both pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import Node, param, zero_grads


@dataclass(frozen=True)
class ModelConfig:
    """Dimension settings. Defaults are desk scale; production scale uses
    word_dim=768, pos_dim=50, filters_per_size=230."""

    vocab_size: int
    n_relations: int
    word_dim: int = 64
    pos_dim: int = 8
    max_offset: int = 30
    kernel_sizes: tuple[int, ...] = (2, 3, 4, 5)
    filters_per_size: int = 4
    dropout: float = 0.5

    def __post_init__(self):
        if self.vocab_size < 1 or self.n_relations < 2:
            raise ConfigError("ModelConfig: need vocab_size >= 1 and n_relations >= 2")
        if any(k < 1 for k in self.kernel_sizes) or self.filters_per_size < 1:
            raise ConfigError("ModelConfig: kernel sizes and filter count must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("ModelConfig: dropout must be in [0, 1)")

    @property
    def conv_in_dim(self) -> int:
        return self.word_dim + 2 * self.pos_dim

    @property
    def n_filters(self) -> int:
        return len(self.kernel_sizes) * self.filters_per_size

    @property
    def rep_dim(self) -> int:
        """Sentence representation width: three pooled values per filter."""
        return 3 * self.n_filters


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ModelParams:
    """Named parameter nodes in a fixed order, with their gradient buffers."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        self._nodes: dict[str, Node] = {name: param(arr) for name, arr in tensors.items()}

    def __getattr__(self, name: str) -> Node:
        nodes = object.__getattribute__(self, "_nodes")
        if name in nodes:
            return nodes[name]
        raise AttributeError(name)

    def conv(self, kernel_size: int) -> Node:
        return self._nodes[f"conv_k{kernel_size}"]

    def named(self) -> list[tuple[str, Node]]:
        return list(self._nodes.items())

    def zero_grads(self) -> None:
        zero_grads(self._nodes.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self._nodes.items()}

    def load_values(self, tensors: dict[str, np.ndarray]) -> None:
        for name, node in self._nodes.items():
            node.value[...] = tensors[name]


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Xavier-uniform weights, zero biases, 1/sqrt(dim)-uniform embeddings.

    Tensors are drawn in a fixed name order, so a seed fully determines the
    initialization.
    """
    rng = np.random.default_rng(seed)
    d, r, l = config.conv_in_dim, config.rep_dim, config.n_relations
    tensors: dict[str, np.ndarray] = {}
    wb = 1.0 / np.sqrt(config.word_dim)
    pb = 1.0 / np.sqrt(config.pos_dim)
    pos_rows = 2 * config.max_offset + 1
    tensors["word_emb"] = rng.uniform(-wb, wb, size=(config.vocab_size, config.word_dim))
    tensors["pos_head_emb"] = rng.uniform(-pb, pb, size=(pos_rows, config.pos_dim))
    tensors["pos_tail_emb"] = rng.uniform(-pb, pb, size=(pos_rows, config.pos_dim))
    for k in config.kernel_sizes:
        tensors[f"conv_k{k}"] = _xavier(
            rng, k * d, config.filters_per_size, (config.filters_per_size, k * d))
    tensors["queries"] = _xavier(rng, r, l, (l, r))
    tensors["cls_w"] = _xavier(rng, r, l, (l, r))
    tensors["cls_b"] = np.zeros(l)
    tensors["filter_w"] = _xavier(rng, r, 1, (1, r))
    tensors["filter_b"] = np.zeros(1)
    tensors["disc_w"] = _xavier(rng, r, 1, (1, r))
    tensors["disc_b"] = np.zeros(1)
    return ModelParams(config, tensors)
