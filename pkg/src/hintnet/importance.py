"""Per-proposal importance scores, from humans and from the network.

Human importance compares mean attention-map energy inside a proposal box
against mean energy outside it:

    E_in  = sum(A[box]) / area
    E_out = sum(A[~box]) / (h*w - area)
    s     = E_in / (E_in + E_out)        # in [0, 1]

Network importance is the gradient of a chosen answer logit with respect
to a proposal's feature leaf, summed over feature dimensions ("global
pooling" of the backprop signal):

    alpha_r = sum_i  d logit[answer] / d feature_r[i]

alpha is unbounded and, when built with create_graph, differentiable, so
a loss defined on alpha trains the model with a second-order step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, dot, grad
from .model import ModelOutput


@dataclass(frozen=True)
class Box:
    """Half-open pixel box [x1, x2) x [y1, y2)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (0 <= self.x1 < self.x2 and 0 <= self.y1 < self.y2):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def validate_for(self, h: int, w: int) -> None:
        if self.x2 > w or self.y2 > h:
            raise ValueError(f"box {self} exceeds raster {h}x{w}")


@dataclass
class AttentionRaster:
    """Non-negative h x w grid of human-indicated relevance."""

    h: int
    w: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.h <= 0 or self.w <= 0:
            raise ValueError("raster dims must be positive")
        if self.values.shape != (self.h, self.w):
            raise ValueError(
                f"raster values have shape {self.values.shape}, expected ({self.h}, {self.w})"
            )
        if np.any(self.values < 0) or not np.isfinite(self.values).all():
            raise ValueError("raster values must be finite and non-negative")


def parse_raster(obj: dict) -> AttentionRaster:
    """Parse the inline JSON form {"h": int, "w": int, "data": [floats]}."""
    try:
        h, w, data = int(obj["h"]), int(obj["w"]), obj["data"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed raster object: {exc}") from exc
    data = np.asarray(data, dtype=np.float64)
    if data.shape != (h * w,):
        raise ValueError(f"raster data length {data.size} != h*w = {h * w}")
    return AttentionRaster(h=h, w=w, values=data.reshape(h, w))


def emit_raster(raster: AttentionRaster) -> dict:
    return {"h": raster.h, "w": raster.w, "data": raster.values.reshape(-1).tolist()}


def combine_rasters(rasters: list[AttentionRaster]) -> AttentionRaster:
    """Elementwise average of several maps for the same decision."""
    if not rasters:
        raise ValueError("need at least one raster")
    h, w = rasters[0].h, rasters[0].w
    if any(r.h != h or r.w != w for r in rasters):
        raise ValueError("rasters disagree on dimensions")
    mean = np.mean([r.values for r in rasters], axis=0)
    return AttentionRaster(h=h, w=w, values=mean)


@dataclass
class HumanImportance:
    """Inside/outside energies and the resulting scores, one per proposal.

    ``supervisable`` is False when the raster carries no energy at all, in
    which case the scores are meaningless and the example must not feed
    the alignment loss.
    """

    e_in: np.ndarray
    e_out: np.ndarray
    s: np.ndarray
    supervisable: bool


def human_importance(raster: AttentionRaster, boxes: list[Box]) -> HumanImportance:
    """Score each box by its share of normalized raster energy."""
    h, w = raster.h, raster.w
    total = float(raster.values.sum())
    k = len(boxes)
    e_in = np.zeros(k)
    e_out = np.zeros(k)
    s = np.zeros(k)
    if total == 0.0:
        for b in boxes:
            b.validate_for(h, w)
        return HumanImportance(e_in=e_in, e_out=e_out, s=s, supervisable=False)
    for i, b in enumerate(boxes):
        b.validate_for(h, w)
        inside = float(raster.values[b.y1 : b.y2, b.x1 : b.x2].sum())
        e_in[i] = inside / b.area
        outside_area = h * w - b.area
        if outside_area == 0:
            # box covers the whole grid: no outside energy by definition
            e_out[i] = 0.0
            s[i] = 1.0 if e_in[i] > 0 else 0.0
        else:
            e_out[i] = (total - inside) / outside_area
            denom = e_in[i] + e_out[i]
            s[i] = e_in[i] / denom if denom > 0 else 0.0
    return HumanImportance(e_in=e_in, e_out=e_out, s=s, supervisable=True)


@dataclass
class NetworkImportance:
    """Gradient importance per proposal: scalar nodes plus numeric values."""

    nodes: list[Node]
    values: np.ndarray


def network_importance(
    output: ModelOutput, answer: int, create_graph: bool = False
) -> NetworkImportance:
    """Pool the gradient of logits[answer] over each proposal's features.

    With create_graph the per-proposal scalars stay differentiable so a
    ranking loss on them can update every upstream parameter.
    """
    logits = output.logits
    if not 0 <= answer < logits.size:
        raise ValueError(f"answer index {answer} out of range for {logits.size} answers")
    graph = logits.graph
    score = dot(logits, graph.constant(np.eye(logits.size)[answer]))
    grads = grad(score, output.proposal_leafs, create_graph=create_graph)
    nodes = [g.sum() for g in grads]
    values = np.array([n.item() for n in nodes])
    return NetworkImportance(nodes=nodes, values=values)
