"""Importance-alignment losses and the fine-tuning loop.

The alignment term searches all proposal pairs where the network's
importance ordering disagrees with the human ordering and sums the
importance margins of the offenders:

    L_rank = sum_{(r', r) in S} (alpha_r' - alpha_r)

with S = {(r', r) : s_r - s_r' > tie_eps and alpha_r' >= alpha_r}.
Every pair in S satisfies alpha_r' >= alpha_r at construction, so the
value equals the absolute-difference form while the gradient stays
exactly +1 per appearance as r' and -1 per appearance as r, ties
included. The full objective adds a task-loss term:

    L = L_rank + lambda * L_task

When alpha comes from gradients (hint mode), optimizing L is a
second-order step: the backward pass differentiates through the first
backward pass. The attention-alignment baseline applies the same ranking
machinery to the feed-forward attention weights instead, which is a
plain first-order update.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, dot, grad, stack_rows
from .importance import human_importance, network_importance
from .model import (
    AdamState,
    ModelParams,
    adam_step,
    batch_task_loss_terms,
    forward,
    forward_batch,
    insert_params,
    task_loss,
)
from .synthdata import check_dataset

MODES = ("base", "hint", "attn_align")


@dataclass
class MisrankedPairSet:
    """Pairs (r_prime, r): humans rank r above r_prime, the network does not."""

    pairs: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.pairs)

    def coefficients(self, k: int) -> np.ndarray:
        """Signed appearance counts: the exact gradient of the ranking term."""
        c = np.zeros(k)
        for r_prime, r in self.pairs:
            c[r_prime] += 1.0
            c[r] -= 1.0
        return c


@dataclass
class TrainConfig:
    mode: str = "hint"
    lambda_task: float = 10.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 64
    tie_eps: float = 1e-6
    supervised_fraction: float = 0.06
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda_task < 0:
            raise ValueError("lambda_task must be >= 0")
        if not 0.0 <= self.supervised_fraction <= 1.0:
            raise ValueError("supervised_fraction must lie in [0, 1]")


def misranked_pairs(
    alpha_values: Sequence[float], s: Sequence[float], tie_eps: float
) -> MisrankedPairSet:
    """All (r_prime, r) with s_r - s_r' > tie_eps but alpha_r' >= alpha_r.

    Human ties (within tie_eps) never produce a pair; network ties count
    as misranked so agreement requires a strict ordering.
    """
    a = np.asarray(alpha_values, dtype=np.float64)
    sv = np.asarray(s, dtype=np.float64)
    if a.shape != sv.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: alpha {a.shape} vs s {sv.shape}")
    human_prefers = (sv[None, :] - sv[:, None]) > tie_eps  # [r_prime, r]
    network_disagrees = a[:, None] >= a[None, :]
    rp, r = np.nonzero(human_prefers & network_disagrees)
    return MisrankedPairSet(pairs=list(zip(rp.tolist(), r.tolist())))


def ranking_loss(alpha_nodes, pairs: MisrankedPairSet) -> Node:
    """Sum of misranked margins as a graph scalar.

    ``alpha_nodes`` is either a 1-D node of K importances or a list of K
    scalar nodes. Built as a signed linear combination so the gradient is
    the pair-appearance count vector exactly.
    """
    if isinstance(alpha_nodes, Node):
        vec = alpha_nodes
        if vec.ndim != 1:
            raise ValueError("alpha node must be 1-D")
    else:
        vec = stack_rows([n.reshape((1,)) for n in alpha_nodes]).reshape(
            (len(alpha_nodes),)
        )
    graph = vec.graph
    if not pairs.pairs:
        return graph.constant(np.zeros(1))
    return dot(graph.constant(pairs.coefficients(vec.size)), vec)


def _usable_scores(example):
    if example.attention is None:
        return None
    hi = human_importance(example.attention, [p.box for p in example.proposals])
    return hi.s if hi.supervisable else None


def hint_loss(example, param_nodes: dict[str, Node], cfg: TrainConfig) -> Node:
    """Ranking-on-gradient-importance loss plus lambda-weighted task loss.

    Examples without a usable raster fall back to the task term alone.
    """
    out = forward(param_nodes, example)
    task = task_loss(out, example.answer)
    s = _usable_scores(example)
    if s is None:
        return task.scale(cfg.lambda_task)
    ni = network_importance(out, example.answer, create_graph=True)
    pairs = misranked_pairs(ni.values, s, cfg.tie_eps)
    return ranking_loss(ni.nodes, pairs) + task.scale(cfg.lambda_task)


def attn_align_loss(example, param_nodes: dict[str, Node], cfg: TrainConfig) -> Node:
    """Baseline: the same ranking loss on feed-forward attention weights."""
    out = forward(param_nodes, example)
    task = task_loss(out, example.answer)
    s = _usable_scores(example)
    if s is None:
        return task.scale(cfg.lambda_task)
    attn = out.attention_weights
    pairs = misranked_pairs(attn.value, s, cfg.tie_eps)
    return ranking_loss(attn, pairs) + task.scale(cfg.lambda_task)


def select_supervised(dataset, fraction: float, seed: int) -> set[int]:
    """Seeded sample (without replacement) of raster-bearing example indices."""
    pool = [i for i, ex in enumerate(dataset) if _usable_scores(ex) is not None]
    target = int(round(fraction * len(dataset)))
    if target > len(pool):
        warnings.warn(
            f"requested {target} supervised examples but only {len(pool)} "
            "carry usable rasters; clamping",
            stacklevel=2,
        )
        target = len(pool)
    if target == 0:
        return set()
    rng = np.random.default_rng([seed, 1])
    return set(int(i) for i in rng.choice(pool, size=target, replace=False))


def _batch_objective(param_nodes, batch, cfg, row_scores):
    """Build the batch-mean loss node; returns (loss, task values, rank values).

    ``row_scores`` holds the human scores per batch row, None where the
    example trains unsupervised.
    """
    bout = forward_batch(param_nodes, batch)
    graph = param_nodes["embed"].graph
    b, k = bout.batch, bout.k
    task_terms = batch_task_loss_terms(bout, [ex.answer for ex in batch])
    total = task_terms.sum().scale(cfg.lambda_task / b)
    rank_values = {}
    sup_rows = [i for i, s in enumerate(row_scores) if s is not None]
    if cfg.mode != "base" and sup_rows:
        if cfg.mode == "hint":
            onehot = np.zeros((b, bout.logits.shape[1]))
            for i in sup_rows:
                onehot[i, batch[i].answer] = 1.0
            gt_sum = (bout.logits * graph.constant(onehot)).sum()
            (gmat,) = grad(gt_sum, [bout.proposal_matrix], create_graph=True)
            alpha_flat = gmat.sum(axis=1)
        else:
            alpha_flat = bout.attention_weights.reshape((b * k,))
        alpha_vals = alpha_flat.value.reshape(b, k)
        coeff = np.zeros(b * k)
        for i in sup_rows:
            pairs = misranked_pairs(alpha_vals[i], row_scores[i], cfg.tie_eps)
            c = pairs.coefficients(k)
            coeff[i * k : (i + 1) * k] = c
            rank_values[i] = float(c @ alpha_vals[i])
        if np.any(coeff):
            total = dot(graph.constant(coeff), alpha_flat).scale(1.0 / b) + total
        # all-zero coefficients mean every supervised example is perfectly
        # ranked; the term is identically zero and is not built
    return total, task_terms.value, rank_values


def finetune(
    params: ModelParams, dataset: Sequence, cfg: TrainConfig
) -> tuple[ModelParams, list[dict]]:
    """Train for cfg.epochs of shuffled minibatches; returns (params, log).

    Supervision membership is drawn once from [seed, 1]; shuffling comes
    from the independent stream [seed, 2], so trajectories of different
    modes stay comparable under a shared seed. Per-example loss is the
    mode's alignment term (supervised examples only) plus lambda times
    the task loss; batches contribute their mean.
    """
    check_dataset(dataset)
    if cfg.mode == "base":
        chosen: set[int] = set()
    else:
        chosen = select_supervised(dataset, cfg.supervised_fraction, cfg.seed)
    s_cache = {i: _usable_scores(dataset[i]) for i in chosen}
    rng_shuffle = np.random.default_rng([cfg.seed, 2])
    state = AdamState.zeros_like(params)
    names = list(params)
    log = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(n)
        task_total = 0.0
        rank_total = 0.0
        rank_count = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = [dataset[i] for i in idx]
            row_scores = [s_cache.get(int(i)) for i in idx]
            graph = Graph()
            pnodes = insert_params(graph, params)
            loss, task_vals, rank_vals = _batch_objective(
                pnodes, batch, cfg, row_scores
            )
            grads = grad(loss, [pnodes[name] for name in names])
            params, state = adam_step(
                params,
                dict(zip(names, (g.value for g in grads))),
                state,
                lr=cfg.lr,
                beta1=cfg.beta1,
                beta2=cfg.beta2,
                eps=cfg.eps,
            )
            task_total += float(task_vals.sum())
            rank_total += sum(rank_vals.values())
            rank_count += sum(s is not None for s in row_scores)
        log.append(
            {
                "epoch": epoch,
                "mean_task_loss": task_total / n,
                "mean_rank_loss": rank_total / rank_count if rank_count else 0.0,
                "supervised_count": len(chosen),
            }
        )
    return params, log
