"""Stage II: selective-attention bag encoding, relation classification,
adversarial alignment of mined bags with the positive distribution (gradient
reversal into the encoder, plain gradients into the discriminator head), a
margin contrastive term over positive bags, and pseudo-label assignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .corpus import Bag, Sample
from .encoder import encode_sentence
from .errors import DimensionError
from .miner import PROB_FLOOR
from .model import ModelConfig, ModelParams
from .numerics import Node, grl, stop_gradient


@dataclass
class BagRep:
    """Attention-weighted bag representation with its weights."""

    g: Node
    alpha: Node


@dataclass(frozen=True)
class PseudoLabel:
    """Relation hypothesis for a mined bag; never the N/A relation."""

    bag_key: tuple[str, str, int]
    relation: int
    confidence: float


def attend_bag(sentence_reps: Sequence[Node], query: Node) -> BagRep:
    """Softmax over sentence/query dot products, then the weighted sum."""
    if not sentence_reps:
        raise DimensionError("attend_bag: empty bag")
    V = nm.stack(sentence_reps)
    alpha = nm.softmax(nm.matmul(V, query))
    return BagRep(g=nm.matmul(nm.transpose(V), alpha), alpha=alpha)


def classify(g: Node, cls_w: Node, cls_b: Node) -> Node:
    """Distribution over all relations (N/A included)."""
    return nm.softmax(nm.affine(g, cls_w, cls_b))


def discriminate(g: Node, disc_w: Node, disc_b: Node) -> Node:
    return nm.sigmoid(nm.pick(nm.affine(g, disc_w, disc_b), 0))


def bag_rep(bag: Bag, reps_by_id: dict[str, Node], params: ModelParams, relation: int) -> BagRep:
    reps = [reps_by_id[sid] for sid in bag.sample_ids]
    return attend_bag(reps, nm.row(params.queries, relation))


def _log_prob(probs: Node, index: int) -> Node:
    return nm.log(nm.clamp(nm.pick(probs, index), PROB_FLOOR, 1.0 - PROB_FLOOR))


def cls_loss(bags: Sequence[Bag], reps_by_id: dict[str, Node], params: ModelParams) -> Node:
    """Mean negative log posterior of each bag's DS relation, with the bag
    attended by that relation's query."""
    if not bags:
        raise DimensionError("cls_loss: empty batch")
    terms = []
    for bag in bags:
        rep = bag_rep(bag, reps_by_id, params, bag.ds_relation)
        probs = classify(rep.g, params.cls_w, params.cls_b)
        terms.append(nm.neg(_log_prob(probs, bag.ds_relation)))
    return nm.mean_nodes(terms)


def _select_max(nodes: list[Node]) -> Node:
    best = nodes[0]
    for node in nodes[1:]:
        if node.item() > best.item():
            best = node
    return best


def _select_min(nodes: list[Node]) -> Node:
    best = nodes[0]
    for node in nodes[1:]:
        if node.item() < best.item():
            best = node
    return best


def contrastive_loss(bag_reps: Sequence[tuple[Node, int]], tau: float) -> Node | None:
    """Margin contrastive term over a batch of (representation, relation)
    pairs: each bag is pulled toward its farthest same-relation bag and
    pushed from its closest different-relation bag, distances built from
    cosine similarity. Bags with no counterpart (or a zero representation)
    drop the affected term; returns None when nothing survives."""
    live = [(g, rel) for g, rel in bag_reps if float(np.linalg.norm(g.value)) > 0.0]
    terms = []
    for i, (g, rel) in enumerate(live):
        same = [g2 for j, (g2, r2) in enumerate(live) if j != i and r2 == rel]
        other = [g2 for j, (g2, r2) in enumerate(live) if r2 != rel]
        parts = []
        if same:
            pull = [nm.square(nm.relu(nm.add_const(nm.neg(nm.cosine(g, g2)), tau))) for g2 in same]
            parts.append(_select_max(pull))
        if other:
            push = [nm.add_const(nm.neg(nm.square(nm.relu(nm.cosine(g, g2)))), 1.0) for g2 in other]
            parts.append(nm.neg(_select_min(push)))
        if parts:
            terms.append(parts[0] if len(parts) == 1 else nm.add(parts[0], parts[1]))
    if not terms:
        return None
    return nm.mean_nodes(terms)


def gen_loss(m_reps: Sequence[Node], params: ModelParams, freeze_disc: bool = True) -> Node | None:
    """Negated mean discriminator output on mined bags; the head is frozen
    for this term so only the encoder moves. `freeze_disc=False` builds the
    plainly differentiable graph for gradient certification."""
    if not m_reps:
        return None
    w, b = params.disc_w, params.disc_b
    if freeze_disc:
        w, b = stop_gradient(w), stop_gradient(b)
    return nm.neg(nm.mean_nodes([discriminate(g, w, b) for g in m_reps]))


def disc_loss(
    p_reps: Sequence[Node],
    m_reps: Sequence[Node],
    params: ModelParams,
    use_grl: bool = True,
) -> Node | None:
    """Mean discriminator margin between positive and mined bags. Encoder
    parameters sit behind the reversal layer, so their gradient from this
    term is negated; the head's gradient is direct. `use_grl=False` is the
    reversal-free twin used to certify the reversal law."""
    if not p_reps or not m_reps:
        return None
    gate = grl if use_grl else (lambda g: g)
    p_term = nm.neg(nm.mean_nodes(
        [discriminate(gate(g), params.disc_w, params.disc_b) for g in p_reps]))
    m_term = nm.mean_nodes(
        [discriminate(gate(g), params.disc_w, params.disc_b) for g in m_reps])
    return nm.add(p_term, m_term)


def adversarial_log_losses(
    p_reps: Sequence[Node],
    m_reps: Sequence[Node],
    params: ModelParams,
    freeze_disc: bool = True,
    use_grl: bool = True,
) -> tuple[Node | None, Node | None]:
    """Optional log-loss variant of the two adversarial terms (off by
    default; the literal expectation form above is the contract)."""
    gen = None
    if m_reps:
        w, b = params.disc_w, params.disc_b
        if freeze_disc:
            w, b = stop_gradient(w), stop_gradient(b)
        gen = nm.neg(nm.mean_nodes(
            [nm.log(nm.clamp(discriminate(g, w, b), PROB_FLOOR, 1.0 - PROB_FLOOR)) for g in m_reps]))
    disc = None
    if p_reps and m_reps:
        gate = grl if use_grl else (lambda g: g)

        def log_d(g):
            return nm.log(nm.clamp(discriminate(gate(g), params.disc_w, params.disc_b),
                                   PROB_FLOOR, 1.0 - PROB_FLOOR))

        def log_1md(g):
            d = nm.clamp(discriminate(gate(g), params.disc_w, params.disc_b),
                         PROB_FLOOR, 1.0 - PROB_FLOOR)
            return nm.log(nm.add_const(nm.neg(d), 1.0))

        disc = nm.add(
            nm.neg(nm.mean_nodes([log_d(g) for g in p_reps])),
            nm.neg(nm.mean_nodes([log_1md(g) for g in m_reps])),
        )
    return gen, disc


def pseudo_choice(
    bag: Bag,
    reps_by_id: dict[str, Node],
    params: ModelParams,
    na_index: int,
) -> tuple[int, float, BagRep]:
    """Attend the bag with every non-N/A query, classify each result, and
    keep the relation whose own-query posterior is maximal (ties break to
    the lowest relation index)."""
    best_rel, best_post, best_rep = -1, -1.0, None
    for r in range(params.config.n_relations):
        if r == na_index:
            continue
        rep = bag_rep(bag, reps_by_id, params, r)
        post = float(classify(rep.g, params.cls_w, params.cls_b).value[r])
        if post > best_post:
            best_rel, best_post, best_rep = r, post, rep
    return best_rel, best_post, best_rep


def total_loss(
    dprime_bags: Sequence[Bag],
    m_bags: Sequence[Bag],
    reps_by_id: dict[str, Node],
    params: ModelParams,
    na_index: int,
    alpha: float,
    beta: float,
    gamma: float,
    tau: float,
    adv_log_loss: bool = False,
    plain_backward: bool = False,
) -> tuple[Node, dict[str, float]]:
    """Weighted multi-task objective over one mixed mini-batch.

    Classification runs over all labeled bags (N/A ones under the N/A
    label); the contrastive term sees only the positive bags' gold-query
    representations; the adversarial pair sees positive representations and
    the mined bags' current pseudo-label representations. Terms with an
    empty side are skipped and logged as 0.

    `plain_backward=True` drops the gradient reversal and the head freeze so
    the whole objective is plainly differentiable; the forward value is
    unchanged. Training never uses it, gradient certification does.
    """
    if not dprime_bags:
        raise DimensionError("total_loss: empty labeled batch")

    gold_reps = {bag.key: bag_rep(bag, reps_by_id, params, bag.ds_relation) for bag in dprime_bags}
    cls_terms = []
    for bag in dprime_bags:
        probs = classify(gold_reps[bag.key].g, params.cls_w, params.cls_b)
        cls_terms.append(nm.neg(_log_prob(probs, bag.ds_relation)))
    l_cls = nm.mean_nodes(cls_terms)

    p_bags = [bag for bag in dprime_bags if bag.ds_relation != na_index]
    p_reps = [gold_reps[bag.key].g for bag in p_bags]
    m_reps = [pseudo_choice(bag, reps_by_id, params, na_index)[2].g for bag in m_bags]

    if adv_log_loss:
        l_g, l_d = adversarial_log_losses(p_reps, m_reps, params,
                                          freeze_disc=not plain_backward,
                                          use_grl=not plain_backward)
    else:
        l_g = gen_loss(m_reps, params, freeze_disc=not plain_backward)
        l_d = disc_loss(p_reps, m_reps, params, use_grl=not plain_backward)
    l_ctra = contrastive_loss([(g, bag.ds_relation) for g, bag in zip(p_reps, p_bags)], tau)

    total = l_cls
    if l_g is not None:
        total = nm.add(total, nm.scale(l_g, alpha))
    if l_d is not None:
        total = nm.add(total, nm.scale(l_d, beta))
    if l_ctra is not None:
        total = nm.add(total, nm.scale(l_ctra, gamma))
    parts = {
        "L_cls": l_cls.item(),
        "L_g": l_g.item() if l_g is not None else 0.0,
        "L_d": l_d.item() if l_d is not None else 0.0,
        "L_ctra": l_ctra.item() if l_ctra is not None else 0.0,
        "L_total": total.item(),
    }
    return total, parts


def assign_pseudo_labels(
    m_bags: Sequence[Bag],
    samples_by_id: dict[str, Sample],
    params: ModelParams,
    config: ModelConfig,
    na_index: int,
) -> list[PseudoLabel]:
    """Deterministic inference-mode pseudo labels for all mined bags."""
    out = []
    for bag in m_bags:
        reps = {sid: encode_sentence(samples_by_id[sid], params, config) for sid in bag.sample_ids}
        relation, confidence, _ = pseudo_choice(bag, reps, params, na_index)
        out.append(PseudoLabel(bag_key=bag.key, relation=relation, confidence=confidence))
    return out
