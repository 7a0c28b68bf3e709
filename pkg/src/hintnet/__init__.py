"""hintnet: human-importance aligned tuning of a toy attention classifier.

A gradient-based per-proposal importance score is aligned with human
attention maps through a misranked-pair loss whose optimization runs
through second-order gradients. A synthetic changing-priors benchmark
demonstrates that the alignment reduces language-shortcut reliance.
"""

from .autodiff import Graph, grad
from .estimator import HintedAttentionClassifier
from .evalsuite import EvalReport, accuracy, evaluate, spearman
from .hint import TrainConfig, attn_align_loss, finetune, hint_loss, misranked_pairs, ranking_loss
from .importance import AttentionRaster, Box, human_importance, network_importance
from .model import HyperParams, forward, init_params, insert_params, task_loss
from .synthdata import (
    Example,
    GenConfig,
    Proposal,
    generate_benchmark,
    generate_split,
    read_jsonl,
    write_jsonl,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionRaster",
    "Box",
    "EvalReport",
    "Example",
    "GenConfig",
    "Graph",
    "HintedAttentionClassifier",
    "HyperParams",
    "Proposal",
    "TrainConfig",
    "accuracy",
    "attn_align_loss",
    "evaluate",
    "finetune",
    "forward",
    "generate_benchmark",
    "generate_split",
    "grad",
    "hint_loss",
    "human_importance",
    "init_params",
    "insert_params",
    "misranked_pairs",
    "network_importance",
    "ranking_loss",
    "read_jsonl",
    "spearman",
    "task_loss",
    "write_jsonl",
]
