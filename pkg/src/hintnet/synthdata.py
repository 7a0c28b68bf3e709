"""Synthetic changing-priors benchmark.

Each example asks for the attribute of a queried object class. A fixed
majority map class -> attribute holds with probability ``bias`` on a
split, so a language-only shortcut (class token -> majority attribute)
fits a biased train split but collapses to chance on a uniform test
split. The visual route always works: exactly one proposal carries the
queried class one-hot, and its attribute one-hot is the answer.

The human attention raster marks the referent proposal's box, giving
perfect importance supervision for the alignment loss. ``referent`` is
emitted for diagnostics only; nothing downstream of generation may read
it as supervision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .importance import AttentionRaster, Box, emit_raster, parse_raster


@dataclass
class Proposal:
    box: Box
    feature: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.feature.ndim != 1:
            raise ValueError("proposal feature must be a vector")


@dataclass
class Example:
    id: str
    question: list[int]  # [type_token, class_token]
    answer: int
    proposals: list[Proposal]
    attention: AttentionRaster | None = None
    referent: int | None = None


@dataclass(frozen=True)
class GenConfig:
    """Benchmark knobs. Feature dim D = classes + answers + noise dims."""

    grid: int = 32
    K: int = 8
    C: int = 8
    A: int = 4
    noise_dims: int = 4
    sigma: float = 0.1
    bias_train: float = 0.9
    bias_test: float = 0.25
    n_train: int = 5000
    n_test: int = 1000
    min_side: int = 4
    max_side: int = 16
    seed: int = 0

    @property
    def D(self) -> int:
        return self.C + self.A + self.noise_dims

    def __post_init__(self):
        if not 0.0 <= self.bias_train <= 1.0 or not 0.0 <= self.bias_test <= 1.0:
            raise ValueError("bias must lie in [0, 1]")
        if self.max_side > self.grid or self.min_side < 1 or self.min_side > self.max_side:
            raise ValueError("box sides must fit the grid")
        if self.C < 2 or self.A < 2 or self.K < 1 or self.noise_dims < 0:
            raise ValueError("need at least 2 classes, 2 answers, 1 proposal, noise_dims >= 0")


TYPE_TOKEN = 0  # single question type: "which attribute has the queried class"


def class_token(c: int) -> int:
    return 1 + c


def majority_answer(c: int, cfg: GenConfig) -> int:
    """The fixed class->answer shortcut target."""
    return c % cfg.A


def _random_box(rng: np.random.Generator, cfg: GenConfig) -> Box:
    w = int(rng.integers(cfg.min_side, cfg.max_side + 1))
    h = int(rng.integers(cfg.min_side, cfg.max_side + 1))
    x1 = int(rng.integers(0, cfg.grid - w + 1))
    y1 = int(rng.integers(0, cfg.grid - h + 1))
    return Box(x1=x1, y1=y1, x2=x1 + w, y2=y1 + h)


def _feature(cls: int, attr: int, rng: np.random.Generator, cfg: GenConfig) -> np.ndarray:
    f = np.zeros(cfg.D)
    f[cls] = 1.0
    f[cfg.C + attr] = 1.0
    return f + rng.normal(0.0, cfg.sigma, cfg.D)


def generate_example(index: int, cfg: GenConfig, bias: float, seed: int) -> Example:
    """One example, deterministic in (index, seed) independent of the rest."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    c = int(rng.integers(cfg.C))
    if rng.random() < bias:
        answer = majority_answer(c, cfg)
    else:
        others = [a for a in range(cfg.A) if a != majority_answer(c, cfg)]
        answer = int(others[rng.integers(len(others))])
    referent = int(rng.integers(cfg.K))
    proposals = []
    for k in range(cfg.K):
        box = _random_box(rng, cfg)
        if k == referent:
            feat = _feature(c, answer, rng, cfg)
        else:
            other_classes = [x for x in range(cfg.C) if x != c]
            cls = int(other_classes[rng.integers(len(other_classes))])
            attr = int(rng.integers(cfg.A))
            feat = _feature(cls, attr, rng, cfg)
        proposals.append(Proposal(box=box, feature=feat))
    ex = Example(
        id=f"s{seed}-{index}",
        question=[TYPE_TOKEN, class_token(c)],
        answer=answer,
        proposals=proposals,
        referent=referent,
    )
    return attach_attention(ex, cfg)


def attach_attention(example: Example, cfg: GenConfig) -> Example:
    """Raster = 1 inside the referent box, 0 elsewhere."""
    if example.referent is None:
        raise ValueError("cannot attach attention without a known referent")
    grid = np.zeros((cfg.grid, cfg.grid))
    b = example.proposals[example.referent].box
    grid[b.y1 : b.y2, b.x1 : b.x2] = 1.0
    return replace(example, attention=AttentionRaster(h=cfg.grid, w=cfg.grid, values=grid))


def generate_split(cfg: GenConfig, bias: float, n: int, seed: int) -> list[Example]:
    return [generate_example(i, cfg, bias, seed) for i in range(n)]


def generate_benchmark(cfg: GenConfig) -> tuple[list[Example], list[Example]]:
    """Train split with the shortcut prior, test split with bias_test."""
    train = generate_split(cfg, cfg.bias_train, cfg.n_train, cfg.seed)
    test = generate_split(cfg, cfg.bias_test, cfg.n_test, cfg.seed + 1)
    return train, test


# -- JSONL serialization ---------------------------------------------------


def example_to_dict(ex: Example) -> dict:
    return {
        "id": ex.id,
        "question": list(ex.question),
        "answer": int(ex.answer),
        "proposals": [
            {
                "box": [p.box.x1, p.box.y1, p.box.x2, p.box.y2],
                "feature": p.feature.tolist(),
            }
            for p in ex.proposals
        ],
        "attention": emit_raster(ex.attention) if ex.attention is not None else None,
        "referent": ex.referent,
    }


def example_from_dict(obj: dict) -> Example:
    for key in ("id", "question", "answer", "proposals"):
        if key not in obj:
            raise ValueError(f"missing required field '{key}'")
    proposals = []
    for p in obj["proposals"]:
        x1, y1, x2, y2 = p["box"]
        proposals.append(Proposal(box=Box(x1, y1, x2, y2), feature=np.asarray(p["feature"])))
    attention = obj.get("attention")
    return Example(
        id=str(obj["id"]),
        question=[int(t) for t in obj["question"]],
        answer=int(obj["answer"]),
        proposals=proposals,
        attention=parse_raster(attention) if attention is not None else None,
        referent=None if obj.get("referent") is None else int(obj["referent"]),
    )


def write_jsonl(path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_dict(ex), separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path) -> list[Example]:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                examples.append(example_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: bad example on line {lineno}: {exc}") from exc
    return examples


def oracle_params(cfg: GenConfig, hp=None) -> dict[str, np.ndarray]:
    """Hand-wired grounded model: find the queried class, read its attribute.

    The type token (present in every question) supplies a constant channel
    through the question path, which acts as the bias the attention MLP
    otherwise lacks: class-dim units compute tanh(beta*v_d + gamma*[d=c]
    - theta), saturating negative unless the proposal carries the queried
    class. Needs E > C and H >= max(C, A).
    """
    from .model import HyperParams, param_shapes

    if hp is None:
        hp = HyperParams(D=cfg.D, K=cfg.K, A=cfg.A)
    if hp.E <= cfg.C or hp.H < max(cfg.C, cfg.A):
        raise ValueError("oracle construction needs E > C and H >= max(C, A)")
    beta, gamma, theta, w = 4.0, 4.0, 6.0, 4.0
    p = {name: np.zeros(shape) for name, shape in param_shapes(hp).items()}
    # question code: dim c for the class, dim C for the constant type channel
    for c in range(cfg.C):
        p["embed"][class_token(c), c] = 2.0
    p["embed"][TYPE_TOKEN, cfg.C] = 2.0
    kappa = 3.0
    p["W_q"][: cfg.C + 1, : cfg.C + 1] = kappa * np.eye(cfg.C + 1)
    q_mag = np.tanh(kappa)  # question activations arrive through a tanh
    p["W_v"][: cfg.C, : cfg.C] = beta * np.eye(cfg.C)
    p["W_u"][: cfg.C, : cfg.C] = (gamma / q_mag) * np.eye(cfg.C)
    p["W_u"][cfg.C, : cfg.C] = -theta / q_mag
    p["w_a"][: cfg.C] = w
    # readout: attribute block of the pooled feature, gated by the type channel
    p["W_h"][cfg.C : cfg.C + cfg.A, : cfg.A] = 3.0 * np.eye(cfg.A)
    p["W_g"][cfg.C, : cfg.A] = 3.0 / q_mag
    p["W_o"][: cfg.A, : cfg.A] = 5.0 * np.eye(cfg.A)
    return p


def check_dataset(examples: Sequence[Example], hp=None) -> tuple[int, int]:
    """Validate shape consistency; returns (K, D).

    With ``hp`` given, also checks the dataset against the model dims.
    """
    if not examples:
        raise ValueError("dataset is empty")
    K = len(examples[0].proposals)
    D = examples[0].proposals[0].feature.size
    for ex in examples:
        if len(ex.proposals) != K:
            raise ValueError(f"example {ex.id}: expected {K} proposals, got {len(ex.proposals)}")
        for p in ex.proposals:
            if p.feature.shape != (D,):
                raise ValueError(f"example {ex.id}: feature dim {p.feature.size} != {D}")
        if ex.answer < 0:
            raise ValueError(f"example {ex.id}: negative answer index")
    if hp is not None:
        if K != hp.K or D != hp.D:
            raise ValueError(
                f"dataset has K={K}, D={D} but model expects K={hp.K}, D={hp.D}"
            )
        for ex in examples:
            if ex.answer >= hp.A:
                raise ValueError(f"example {ex.id}: answer {ex.answer} >= A={hp.A}")
            if any(t < 0 or t >= hp.V for t in ex.question):
                raise ValueError(f"example {ex.id}: token out of vocabulary")
    return K, D
