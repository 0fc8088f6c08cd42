"""Estimator-style wrapper: fit on symbol sequences, predict next-symbol sets.

Follows the scikit-learn protocol (`get_params`/`set_params`, `fit` returns
self, fitted attributes carry a trailing underscore) without depending on
scikit-learn, so instances clone and compose with that ecosystem's tooling.
"""

from __future__ import annotations

import numpy as np

from .languages import Dataset, Sample, Vocabulary, encode_input
from .models import ModelConfig, build_model, run_sequence
from .training import TrainConfig, predict_sets, sequence_correct, train
from .validation import (
    check_sequences,
    check_symbols_known,
    check_targets,
    infer_vocabulary,
)

__all__ = ["MarnnSequencePredictor"]


class MarnnSequencePredictor:
    """Memory-augmented recurrent predictor of allowed-next-symbol sets.

    Parameters mirror the experiment harness: the architecture and action
    distribution pick the model variant, `hidden_units`/`memory_dim`/
    `memory_slots` size it, and the optimizer fields control the
    per-sequence training loop. `predict` returns one frozenset of symbols
    per timestep per sequence; `score` is the fraction of sequences whose
    predicted sets match the targets at every step.
    """

    _PARAMETER_NAMES = (
        "architecture", "action", "hidden_units", "memory_dim", "memory_slots",
        "stack_window", "tau", "epochs", "learning_rate", "beta1", "beta2",
        "adam_epsilon", "threshold", "clip_norm", "random_state", "vocabulary",
    )

    def __init__(self, architecture="stack_rnn", action="softmax",
                 hidden_units=8, memory_dim=1, memory_slots=104, stack_window=2,
                 tau=None, epochs=3, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 adam_epsilon=1e-8, threshold=0.5, clip_norm=1.0,
                 random_state=0, vocabulary=None):
        self.architecture = architecture
        self.action = action
        self.hidden_units = hidden_units
        self.memory_dim = memory_dim
        self.memory_slots = memory_slots
        self.stack_window = stack_window
        self.tau = tau
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_epsilon = adam_epsilon
        self.threshold = threshold
        self.clip_norm = clip_norm
        self.random_state = random_state
        self.vocabulary = vocabulary

    # -- scikit-learn protocol ---------------------------------------------

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAMETER_NAMES}

    def set_params(self, **params) -> "MarnnSequencePredictor":
        for name, value in params.items():
            if name not in self._PARAMETER_NAMES:
                raise ValueError(
                    f"invalid parameter {name!r} for MarnnSequencePredictor"
                )
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        return (f"MarnnSequencePredictor(architecture={self.architecture!r}, "
                f"action={self.action!r}, hidden_units={self.hidden_units})")

    # -- fitting -------------------------------------------------------------

    def fit(self, X, y) -> "MarnnSequencePredictor":
        sequences = check_sequences(X)
        targets = check_targets(y, sequences)
        vocab = self.vocabulary or infer_vocabulary(sequences, targets)
        if not isinstance(vocab, Vocabulary):
            raise ValueError("vocabulary must be a Vocabulary instance")
        check_symbols_known(sequences, vocab, targets)
        samples = [Sample(seq, sets) for seq, sets in zip(sequences, targets)]
        dataset = Dataset(samples, vocab, "train",
                          {"task": "custom", "count": len(samples),
                           "seed": self.random_state})
        self.model_config_ = ModelConfig(
            architecture=self.architecture,
            d_in=vocab.d_in,
            d_out=vocab.d_out,
            hidden=self.hidden_units,
            mem_dim=self.memory_dim,
            memory_slots=self.memory_slots,
            action=self.action,
            tau=self.tau,
            joulin_k=self.stack_window,
        )
        train_config = TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_epsilon=self.adam_epsilon,
            threshold=self.threshold,
            clip_norm=self.clip_norm,
            shuffle_seed=self.random_state,
            model_seed=self.random_state,
        )
        self.vocabulary_ = vocab
        self.params_, self.loss_history_ = train(self.model_config_, dataset,
                                                 train_config)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise RuntimeError("this estimator is not fitted yet; call fit first")

    # -- inference -----------------------------------------------------------

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per-sequence [T, d_out] sigmoid activations (noise frozen)."""
        self._check_fitted()
        sequences = check_sequences(X)
        check_symbols_known(sequences, self.vocabulary_)
        model = build_model(self.model_config_)
        out = []
        for seq in sequences:
            x = encode_input(seq, self.vocabulary_)
            ys, _ = run_sequence(model, self.params_, x, rng=None)
            out.append(np.stack([y.data for y in ys]))
        return out

    def predict(self, X) -> list[list[frozenset]]:
        """Thresholded symbol sets, one list per sequence."""
        return [
            predict_sets(proba, self.threshold, self.vocabulary_)
            for proba in self.predict_proba(X)
        ]

    def score(self, X, y) -> float:
        """Fraction of sequences with every timestep's set exactly right."""
        sequences = check_sequences(X)
        targets = check_targets(y, sequences)
        predicted = self.predict(sequences)
        correct = sum(
            sequence_correct(p, list(t)) for p, t in zip(predicted, targets)
        )
        return correct / len(sequences)
