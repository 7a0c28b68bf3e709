"""Grounding and generalization metrics.

Beyond plain accuracy, three views of whether the model relies on the
regions humans marked:

- rank correlation between per-proposal importances (gradient-based for
  the ground-truth answer, or feed-forward attention) and the human
  energy scores;
- occlusion faithfulness: rank correlation between an importance signal
  and the actual drop in the predicted-answer logit when each proposal's
  feature is zeroed out;
- IoU between the highest-attention proposal's box and the thresholded
  human map.

Undefined correlations (a constant vector on either side) are reported
as 0 and counted, never dropped silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .autodiff import Graph
from .importance import human_importance, network_importance
from .model import ModelParams, forward, insert_params
from .synthdata import check_dataset


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with averaged tied ranks.

    Returns 0.0 when either side is constant (correlation undefined).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two observations")
    if _degenerate(x) or _degenerate(y):
        return 0.0
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


def _degenerate(v: np.ndarray) -> bool:
    return bool(np.all(v == v[0]))


def occlusion_importance(params: ModelParams, example) -> np.ndarray:
    """Predicted-answer logit drop when each proposal's feature is zeroed.

    The predicted answer is fixed from the unmasked forward pass.
    """
    g = Graph()
    out = forward(insert_params(g, params), example)
    pred = int(out.logits.value.argmax())
    full = out.logits.value[pred]
    deltas = np.zeros(len(example.proposals))
    for r in range(len(example.proposals)):
        masked = _with_zeroed_feature(example, r)
        g2 = Graph()
        masked_out = forward(insert_params(g2, params), masked)
        deltas[r] = full - masked_out.logits.value[pred]
    return deltas


def _with_zeroed_feature(example, r: int):
    from .synthdata import Example, Proposal

    proposals = list(example.proposals)
    proposals[r] = Proposal(box=proposals[r].box, feature=np.zeros_like(proposals[r].feature))
    return Example(
        id=example.id,
        question=example.question,
        answer=example.answer,
        proposals=proposals,
        attention=example.attention,
        referent=example.referent,
    )


def faithfulness(
    params: ModelParams, dataset: Sequence, max_examples: int | None = None
) -> tuple[float, float, int]:
    """Mean per-example Spearman of occlusion deltas against (grad, attn).

    Returns (corr_grad_occlusion, corr_attn_occlusion, degenerate_count).
    Both importances are taken for the predicted answer, matching the
    occlusion protocol.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if max_examples is not None:
        dataset = dataset[:max_examples]
    grad_corrs, attn_corrs = [], []
    degenerate = 0
    for ex in dataset:
        deltas = occlusion_importance(params, ex)
        g = Graph()
        out = forward(insert_params(g, params), ex)
        pred = int(out.logits.value.argmax())
        alpha = network_importance(out, pred).values
        attn = out.attention_weights.value
        if _degenerate(deltas) or _degenerate(alpha) or _degenerate(attn):
            degenerate += 1
        grad_corrs.append(spearman(alpha, deltas))
        attn_corrs.append(spearman(attn, deltas))
    return float(np.mean(grad_corrs)), float(np.mean(attn_corrs)), degenerate


def _iou_for_top(example, top: int) -> float:
    raster = example.attention
    peak = raster.values.max()
    if peak <= 0:
        raise ValueError("raster has no support")
    mask = raster.values >= 0.5 * peak
    b = example.proposals[top].box
    box_mask = np.zeros_like(mask)
    box_mask[b.y1 : b.y2, b.x1 : b.x2] = True
    inter = np.logical_and(mask, box_mask).sum()
    union = np.logical_or(mask, box_mask).sum()
    return float(inter / union)


def iou_top(params: ModelParams, example) -> float:
    """IoU of the highest-attention proposal's box with the binarized map.

    The raster is thresholded at half its maximum, which is scale
    invariant and parameter free.
    """
    if example.attention is None:
        raise ValueError("example carries no attention raster")
    g = Graph()
    out = forward(insert_params(g, params), example)
    return _iou_for_top(example, int(out.attention_weights.value.argmax()))


def accuracy(params: ModelParams, dataset: Sequence, batch_size: int = 256) -> float:
    """Fraction of correct argmax answers, computed with batched forwards."""
    from .model import forward_batch

    check_dataset(dataset)
    correct = 0
    for start in range(0, len(dataset), batch_size):
        batch = dataset[start : start + batch_size]
        g = Graph()
        out = forward_batch(insert_params(g, params), batch)
        preds = out.logits.value.argmax(axis=1)
        correct += int(sum(p == ex.answer for p, ex in zip(preds, batch)))
    return correct / len(dataset)


@dataclass
class EvalReport:
    accuracy: float
    spearman_grad_human: float | None
    spearman_attn_human: float | None
    corr_grad_occlusion: float | None
    corr_attn_occlusion: float | None
    iou_top: float | None
    n_examples: int
    per_type_accuracy: dict[str, float] = field(default_factory=dict)
    degenerate_correlations: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "spearman_grad_human": self.spearman_grad_human,
            "spearman_attn_human": self.spearman_attn_human,
            "corr_grad_occlusion": self.corr_grad_occlusion,
            "corr_attn_occlusion": self.corr_attn_occlusion,
            "iou_top": self.iou_top,
            "n_examples": self.n_examples,
            "per_type_accuracy": self.per_type_accuracy,
            "degenerate_correlations": self.degenerate_correlations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def predict(params: ModelParams, example) -> int:
    g = Graph()
    out = forward(insert_params(g, params), example)
    return int(out.logits.value.argmax())


def evaluate(
    params: ModelParams,
    dataset: Sequence,
    occlusion_examples: int | None = None,
) -> EvalReport:
    """Deterministic metrics over a dataset.

    Grounding correlations use the gradient importance of the ground
    truth answer against the human energy scores; occlusion faithfulness
    runs over the first ``occlusion_examples`` examples (all by default,
    skipped entirely when 0).
    """
    check_dataset(dataset)
    correct = 0
    per_type: dict[str, list[int]] = {}
    grad_human, attn_human, ious = [], [], []
    degenerate = 0
    for ex in dataset:
        g = Graph()
        out = forward(insert_params(g, params), ex)
        pred = int(out.logits.value.argmax())
        hit = int(pred == ex.answer)
        correct += hit
        per_type.setdefault(str(ex.question[0]), []).append(hit)
        if ex.attention is None:
            continue
        hi = human_importance(ex.attention, [p.box for p in ex.proposals])
        if not hi.supervisable:
            continue
        alpha = network_importance(out, ex.answer).values
        attn = out.attention_weights.value
        if _degenerate(alpha) or _degenerate(attn) or _degenerate(hi.s):
            degenerate += 1
        grad_human.append(spearman(alpha, hi.s))
        attn_human.append(spearman(attn, hi.s))
        ious.append(_iou_for_top(ex, int(attn.argmax())))
    supervision_available = len(grad_human) > 0
    corr_grad_occ = corr_attn_occ = None
    if occlusion_examples != 0:
        cg, ca, deg = faithfulness(params, dataset, max_examples=occlusion_examples)
        corr_grad_occ, corr_attn_occ = cg, ca
        degenerate += deg
    return EvalReport(
        accuracy=correct / len(dataset),
        spearman_grad_human=float(np.mean(grad_human)) if supervision_available else None,
        spearman_attn_human=float(np.mean(attn_human)) if supervision_available else None,
        corr_grad_occlusion=corr_grad_occ,
        corr_attn_occlusion=corr_attn_occ,
        iou_top=float(np.mean(ious)) if ious else None,
        n_examples=len(dataset),
        per_type_accuracy={t: float(np.mean(hits)) for t, hits in sorted(per_type.items())},
        degenerate_correlations=degenerate,
    )
