"""Input validation for the estimator API.

Sequence data comes in as an iterable of symbol sequences (strings or lists
of single symbols) with per-timestep target sets. These helpers normalize
to tuples/frozensets and fail early with actionable messages.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .languages import Vocabulary

__all__ = [
    "check_sequences",
    "check_targets",
    "check_symbols_known",
    "infer_vocabulary",
]


def check_sequences(X: Iterable) -> list[tuple[str, ...]]:
    """Normalize X to a list of nonempty symbol tuples."""
    if isinstance(X, str):
        raise ValueError("X must be a collection of sequences, not one string")
    sequences = []
    for i, seq in enumerate(X):
        symbols = tuple(seq)
        if not symbols:
            raise ValueError(f"X[{i}] is empty; sequences need at least one symbol")
        if not all(isinstance(s, str) and s for s in symbols):
            raise ValueError(f"X[{i}] must contain non-empty string symbols")
        sequences.append(symbols)
    if not sequences:
        raise ValueError("X is empty")
    return sequences


def check_targets(y: Iterable, X: Sequence[tuple[str, ...]]) -> list[tuple[frozenset, ...]]:
    """Normalize y to per-sequence tuples of nonempty frozensets aligned with X."""
    targets = []
    for i, seq_targets in enumerate(y):
        sets = tuple(frozenset(t) for t in seq_targets)
        if any(not s for s in sets):
            raise ValueError(f"y[{i}] contains an empty target set")
        targets.append(sets)
    if len(targets) != len(X):
        raise ValueError(f"X has {len(X)} sequences but y has {len(targets)}")
    for i, (seq, sets) in enumerate(zip(X, targets)):
        if len(seq) != len(sets):
            raise ValueError(
                f"sample {i}: {len(seq)} input symbols but {len(sets)} target sets"
            )
    return targets


def check_symbols_known(sequences: Sequence[tuple[str, ...]], vocab: Vocabulary,
                        targets: Sequence[tuple[frozenset, ...]] | None = None) -> None:
    known_in = set(vocab.input_symbols)
    for i, seq in enumerate(sequences):
        unknown = sorted(set(seq) - known_in)
        if unknown:
            raise ValueError(f"sample {i} uses unknown input symbols {unknown}")
    if targets is not None:
        known_out = set(vocab.output_symbols)
        for i, sets in enumerate(targets):
            unknown = sorted(set().union(*sets) - known_out)
            if unknown:
                raise ValueError(
                    f"sample {i} uses unknown output symbols {unknown}"
                )


def infer_vocabulary(sequences: Sequence[tuple[str, ...]],
                     targets: Sequence[tuple[frozenset, ...]]) -> Vocabulary:
    """Sorted input alphabet; output alphabet appends target-only symbols."""
    inputs = sorted({s for seq in sequences for s in seq})
    outputs_only = sorted(
        {s for sets in targets for t in sets for s in t} - set(inputs)
    )
    return Vocabulary(tuple(inputs), tuple(inputs) + tuple(outputs_only))
