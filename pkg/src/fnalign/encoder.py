"""Sentence encoder: token + relative-position embeddings, multi-kernel
convolution over k-grams, piecewise max pooling around the two entities, and
a tanh nonlinearity. The output width is 3 * n_filters regardless of
sentence length."""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .corpus import Sample
from .errors import VocabularyError
from .model import ModelConfig, ModelParams
from .numerics import Node


def _clipped_offsets(n: int, start: int, max_offset: int) -> np.ndarray:
    # relative offset to the entity start, clipped, then shifted to row index
    return np.clip(np.arange(n) - start, -max_offset, max_offset) + max_offset


def embed(sample: Sample, params: ModelParams, config: ModelConfig) -> Node:
    """Per-token rows: word embedding concatenated with the two relative
    position embeddings (offsets to head start and tail start)."""
    ids = np.asarray(sample.tokens, dtype=np.int64)
    if ids.max() >= config.vocab_size:
        raise VocabularyError(
            f"sample {sample.id}: token id {int(ids.max())} outside vocabulary of size {config.vocab_size}")
    n = len(sample.tokens)
    words = nm.gather_rows(params.word_emb, ids)
    head = nm.gather_rows(params.pos_head_emb, _clipped_offsets(n, sample.head_span[0], config.max_offset))
    tail = nm.gather_rows(params.pos_tail_emb, _clipped_offsets(n, sample.tail_span[0], config.max_offset))
    return nm.hconcat([words, head, tail])


def convolve(H: Node, kernel_size: int, filters: Node) -> Node:
    """Dot product of each filter with every k-gram, zero-padded on the left
    so the output keeps length n. Returns an (n, n_filters) matrix, one
    column per filter; filter rows are flattened k-grams."""
    windows = nm.unfold(H, kernel_size)
    return nm.matmul(windows, nm.transpose(filters))


def segment_bounds(n: int, head_span, tail_span) -> tuple[int, int]:
    """Three-way split boundaries: segment 1 runs through the last token of
    the earlier-ending entity, segment 2 through the last token of the
    later-ending entity, segment 3 is the remainder."""
    first_end = min(head_span[1], tail_span[1])
    last_end = max(head_span[1], tail_span[1])
    return first_end, last_end


def piecewise_max_pool(p: Node, head_span, tail_span) -> Node:
    """Segment-wise maxima of a length-n feature row; an empty segment pools
    to 0. Backward routes each segment's gradient to its argmax position."""
    n = p.value.shape[0]
    b1, b2 = segment_bounds(n, head_span, tail_span)
    edges = ((0, b1), (b1, b2), (b2, n))
    values = np.zeros(3)
    argmax = [-1, -1, -1]
    for s, (lo, hi) in enumerate(edges):
        if hi > lo:
            j = lo + int(np.argmax(p.value[lo:hi]))
            argmax[s] = j
            values[s] = p.value[j]
    out = Node(values, (p,))

    def _backward():
        for s, j in enumerate(argmax):
            if j >= 0:
                p.grad[j] += out.grad[s]

    out._backward = _backward
    return out


def _pool_columns(P: Node, head_span, tail_span) -> Node:
    """piecewise_max_pool applied to every column of an (n, F) feature matrix
    at once; output layout is [f0 seg1, f0 seg2, f0 seg3, f1 seg1, ...]."""
    n, f = P.value.shape
    b1, b2 = segment_bounds(n, head_span, tail_span)
    edges = ((0, b1), (b1, b2), (b2, n))
    pooled = np.zeros((f, 3))
    argmax = np.full((f, 3), -1, dtype=np.int64)
    for s, (lo, hi) in enumerate(edges):
        if hi > lo:
            rows = lo + np.argmax(P.value[lo:hi], axis=0)
            argmax[:, s] = rows
            pooled[:, s] = P.value[rows, np.arange(f)]
    out = Node(pooled.ravel(), (P,))

    def _backward():
        g = out.grad.reshape(f, 3)
        for s in range(3):
            rows = argmax[:, s]
            live = rows >= 0
            np.add.at(P.grad, (rows[live], np.arange(f)[live]), g[live, s])

    out._backward = _backward
    return out


def encode_sentence(
    sample: Sample,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    """Sentence representation: pooled 3-vectors of all filters concatenated
    in kernel-size-major order, then tanh; inverted dropout in training."""
    H = embed(sample, params, config)
    pieces = [
        _pool_columns(convolve(H, k, params.conv(k)), sample.head_span, sample.tail_span)
        for k in config.kernel_sizes
    ]
    v = nm.tanh(nm.concat(pieces))
    if train and config.dropout > 0.0:
        v = nm.dropout(v, config.dropout, rng)
    return v
