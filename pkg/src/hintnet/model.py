"""Toy question-guided attention classifier over region proposals.

The architecture is a reduced bottom-up/top-down attention model: the
question (two tokens) is embedded and mean-pooled, a one-hidden-layer
additive attention scores each proposal feature against the question,
the attention-pooled feature is fused multiplicatively with the question
projection, and a linear head produces answer logits.

Proposal features always enter the graph as requires-grad leaves so that
per-proposal gradient importances are well defined downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Node, gather_rows, matmul, matvec, stack_rows, vecmat

ModelParams = dict[str, np.ndarray]


@dataclass(frozen=True)
class HyperParams:
    """Model dimensions.

    V: vocabulary size, E: embedding dim, H: hidden dim,
    D: proposal feature dim, K: proposals per example, A: answer count.
    """

    V: int = 32
    E: int = 16
    H: int = 32
    D: int = 16
    K: int = 8
    A: int = 4

    def __post_init__(self):
        for name in ("V", "E", "H", "D", "K", "A"):
            if getattr(self, name) <= 0:
                raise ValueError(f"HyperParams.{name} must be positive")


def param_shapes(hp: HyperParams) -> dict[str, tuple]:
    """Named tensor shapes, in checkpoint declaration order."""
    return {
        "embed": (hp.V, hp.E),
        "W_q": (hp.E, hp.H),
        "W_v": (hp.D, hp.H),
        "W_u": (hp.H, hp.H),
        "w_a": (hp.H,),
        "W_h": (hp.D, hp.H),
        "W_g": (hp.H, hp.H),
        "W_o": (hp.H, hp.A),
    }


def init_params(hp: HyperParams, seed: int) -> ModelParams:
    """Glorot-uniform initialization: U(-sqrt(6/(fan_in+fan_out)), +...)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(hp).items():
        fan_in = shape[0]
        fan_out = shape[1] if len(shape) == 2 else 1
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, shape)
    return params


def insert_params(graph: Graph, params: ModelParams) -> dict[str, Node]:
    """Re-insert parameters as requires-grad leaves of a fresh graph."""
    return {name: graph.leaf(value, requires_grad=True) for name, value in params.items()}


@dataclass
class ModelOutput:
    """Forward-pass handles for one example.

    ``proposal_leafs`` are the K requires-grad feature leaves; gradient
    importances are taken with respect to them.
    """

    logits: Node
    attention_weights: Node
    proposal_leafs: list[Node]


def _encode_question(p: dict[str, Node], tokens: Sequence[int]) -> Node:
    V = p["embed"].shape[0]
    if any(t < 0 or t >= V for t in tokens):
        raise ValueError(f"question token out of range for vocabulary {V}")
    emb = gather_rows(p["embed"], tokens)
    return vecmat(emb.mean(axis=0), p["W_q"]).tanh()


def forward(p: dict[str, Node], example) -> ModelOutput:
    """Run one example through the classifier.

    ``p`` is a node map from insert_params; ``example`` needs .question
    (token ids) and .proposals (objects with a .feature vector).
    """
    graph = p["embed"].graph
    D = p["W_v"].shape[0]
    q = _encode_question(p, example.question)
    leafs = []
    for prop in example.proposals:
        feat = np.asarray(prop.feature, dtype=np.float64)
        if feat.shape != (D,):
            raise ValueError(f"proposal feature has shape {feat.shape}, expected ({D},)")
        leafs.append(graph.leaf(feat, requires_grad=True))
    props = stack_rows(leafs)
    pre = (matmul(props, p["W_v"]) + vecmat(q, p["W_u"])).tanh()
    attn = matvec(pre, p["w_a"]).softmax()
    pooled = vecmat(attn, props)
    h = vecmat(pooled, p["W_h"]).tanh() * vecmat(q, p["W_g"]).tanh()
    logits = vecmat(h, p["W_o"])
    return ModelOutput(logits=logits, attention_weights=attn, proposal_leafs=leafs)


@dataclass
class BatchOutput:
    """Vectorized forward over a list of examples.

    ``proposal_matrix`` is a single [B*K, D] leaf whose row blocks are the
    per-example proposal features; gradients of any sum of per-example
    scalars with respect to it decompose row-block-wise because examples
    never mix before the logits.
    """

    logits: Node
    attention_weights: Node
    proposal_matrix: Node
    batch: int
    k: int


def forward_batch(p: dict[str, Node], examples: Sequence) -> BatchOutput:
    """Same computation as forward(), vectorized across a batch."""
    graph = p["embed"].graph
    D = p["W_v"].shape[0]
    B = len(examples)
    K = len(examples[0].proposals)
    if any(len(ex.question) != 2 for ex in examples):
        raise ValueError("batched forward expects two-token questions")
    t0 = [ex.question[0] for ex in examples]
    t1 = [ex.question[1] for ex in examples]
    V = p["embed"].shape[0]
    if any(t < 0 or t >= V for t in t0 + t1):
        raise ValueError(f"question token out of range for vocabulary {V}")
    m = (gather_rows(p["embed"], t0) + gather_rows(p["embed"], t1)).scale(0.5)
    q = matmul(m, p["W_q"]).tanh()

    feats = np.empty((B * K, D))
    for i, ex in enumerate(examples):
        if len(ex.proposals) != K:
            raise ValueError("all examples in a batch must have the same proposal count")
        for k, prop in enumerate(ex.proposals):
            feats[i * K + k] = prop.feature
    props = graph.leaf(feats, requires_grad=True)

    qu = matmul(q, p["W_u"])
    qu_rep = gather_rows(qu, np.repeat(np.arange(B), K))
    pre = (matmul(props, p["W_v"]) + qu_rep).tanh()
    attn = matvec(pre, p["w_a"]).reshape((B, K)).softmax()

    # attention-pool each example's block: elementwise-weight rows, then a
    # constant block-diagonal 0/1 matrix sums each block of K rows.
    ones_d = graph.constant(np.ones((1, D)))
    weights = matmul(attn.reshape((B * K, 1)), ones_d)
    seg = np.zeros((B, B * K))
    seg[np.repeat(np.arange(B), K), np.arange(B * K)] = 1.0
    pooled = matmul(graph.constant(seg), props * weights)

    h = matmul(pooled, p["W_h"]).tanh() * matmul(q, p["W_g"]).tanh()
    logits = matmul(h, p["W_o"])
    return BatchOutput(
        logits=logits, attention_weights=attn, proposal_matrix=props, batch=B, k=K
    )


def task_loss(output: ModelOutput, answer: int) -> Node:
    """Cross entropy -log softmax(logits)[answer], built stably in-graph."""
    logits = output.logits
    A = logits.size
    if not 0 <= answer < A:
        raise ValueError(f"answer index {answer} out of range for {A} answers")
    graph = logits.graph
    # max-subtraction with a constant leaves gradients untouched
    m = float(logits.value.max())
    shifted = logits - graph.constant(np.full(A, m))
    lse = shifted.exp().sum().log()
    picked = ad.dot(logits, graph.constant(np.eye(A)[answer]))
    return lse + m - picked


def batch_task_loss_terms(out: BatchOutput, answers: Sequence[int]) -> Node:
    """Per-example cross entropies of a batched forward, as a [B] node."""
    logits = out.logits
    B, A = logits.shape
    answers = np.asarray(answers)
    if answers.shape != (B,) or answers.min() < 0 or answers.max() >= A:
        raise ValueError("answers must hold one valid index per example")
    graph = logits.graph
    maxes = logits.value.max(axis=1)
    shifted = logits - graph.constant(np.repeat(maxes[:, None], A, axis=1))
    lse = shifted.exp().sum(axis=1).log() + graph.constant(maxes)
    onehot = np.zeros((B, A))
    onehot[np.arange(B), answers] = 1.0
    picked = (logits * graph.constant(onehot)).sum(axis=1)
    return lse - picked


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update. Returns fresh params and state."""
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)
