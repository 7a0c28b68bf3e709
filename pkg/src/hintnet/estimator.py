"""Scikit-learn style front end for training and applying the classifier.

The estimator wraps the training loop so the model composes with
sklearn tooling (get_params/set_params, clone, pipelines over lists of
examples). X is a sequence of Example objects; answers ride along on the
examples, so y is optional and only used as an override.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .autodiff import Graph
from .evalsuite import EvalReport, evaluate
from .hint import TrainConfig, finetune
from .model import HyperParams, forward, init_params, insert_params
from .synthdata import check_dataset


class HintedAttentionClassifier(BaseEstimator, ClassifierMixin):
    """Attention classifier tunable with importance-alignment supervision.

    mode selects the training objective: "base" (task loss only), "hint"
    (ranking loss on gradient importances, second-order), or
    "attn_align" (ranking loss on attention weights). Feature and
    proposal dimensions are inferred from the data at fit time;
    vocab_size and n_answers are inferred too unless given.
    """

    def __init__(
        self,
        mode="hint",
        lambda_task=10.0,
        lr=1e-3,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        epochs=10,
        batch_size=64,
        tie_eps=1e-6,
        supervised_fraction=0.06,
        embed_dim=16,
        hidden_dim=32,
        vocab_size=None,
        n_answers=None,
        random_state=0,
    ):
        self.mode = mode
        self.lambda_task = lambda_task
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.epochs = epochs
        self.batch_size = batch_size
        self.tie_eps = tie_eps
        self.supervised_fraction = supervised_fraction
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.vocab_size = vocab_size
        self.n_answers = n_answers
        self.random_state = random_state

    def _hyper(self, X) -> HyperParams:
        k, d = check_dataset(X)
        vocab = self.vocab_size
        if vocab is None:
            vocab = 1 + max(max(ex.question) for ex in X)
        answers = self.n_answers
        if answers is None:
            answers = 1 + max(ex.answer for ex in X)
        return HyperParams(
            V=vocab, E=self.embed_dim, H=self.hidden_dim, D=d, K=k, A=answers
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            lambda_task=self.lambda_task,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            epochs=self.epochs,
            batch_size=self.batch_size,
            tie_eps=self.tie_eps,
            supervised_fraction=self.supervised_fraction,
            seed=self.random_state,
        )

    def fit(self, X, y=None, init=None):
        """Train on a sequence of examples.

        ``init`` warm-starts from an existing parameter map (for the
        pretrain-then-tune protocol); otherwise weights are seeded from
        random_state. ``y`` optionally overrides the examples' answers.
        """
        X = self._with_answers(X, y)
        self.hyper_ = self._hyper(X)
        check_dataset(X, self.hyper_)
        params = init_params(self.hyper_, self.random_state) if init is None else dict(init)
        self.params_, self.history_ = finetune(params, X, self._train_config())
        self.classes_ = np.arange(self.hyper_.A)
        return self

    @staticmethod
    def _with_answers(X, y):
        if y is None:
            return list(X)
        from dataclasses import replace

        if len(y) != len(X):
            raise ValueError("y must match X in length")
        return [replace(ex, answer=int(a)) for ex, a in zip(X, y)]

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted")

    def predict(self, X):
        self._check_fitted()
        return self.predict_proba(X).argmax(axis=1)

    def predict_proba(self, X):
        self._check_fitted()
        out = np.zeros((len(X), self.hyper_.A))
        for i, ex in enumerate(X):
            g = Graph()
            logits = forward(insert_params(g, self.params_), ex).logits
            out[i] = logits.softmax().value
        return out

    def score(self, X, y=None):
        """Mean accuracy against y or the examples' own answers."""
        X = self._with_answers(X, y)
        preds = self.predict(X)
        return float(np.mean([p == ex.answer for p, ex in zip(preds, X)]))

    def evaluate(self, X, occlusion_examples=None) -> EvalReport:
        """Full metrics report (accuracy, grounding, faithfulness, IoU)."""
        self._check_fitted()
        return evaluate(self.params_, X, occlusion_examples=occlusion_examples)
