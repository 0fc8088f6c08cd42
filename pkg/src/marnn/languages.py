"""Task corpora: nested-bracket words, palindromes, and string reversal.

Each generator is a pure function of its config and seed, produces distinct
samples only, and pairs every input sequence with per-timestep sets of
allowed (or required) output symbols. Encoding maps symbol sequences to
one-hot inputs and k-hot targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import RngStream
from .common import canonical_json, config_fingerprint

__all__ = [
    "BRACKET_PAIRS",
    "END_MARKER",
    "SEPARATOR",
    "GenerationBudgetError",
    "Vocabulary",
    "GrammarConfig",
    "Sample",
    "Dataset",
    "dyck_vocabulary",
    "palindrome_vocabulary",
    "reversal_vocabulary",
    "vocab_for_config",
    "sample_dyck",
    "dyck_targets",
    "max_nesting_depth",
    "sample_palindrome",
    "palindrome_targets",
    "reversal_pairs",
    "reversal_targets",
    "encode",
    "encode_input",
    "decode_input",
    "decode_targets",
    "verify_disjoint",
    "save_dataset",
    "load_dataset",
]

BRACKET_PAIRS: tuple[tuple[str, str], ...] = (
    ("(", ")"),
    ("[", "]"),
    ("{", "}"),
    ("<", ">"),
    ("«", "»"),
    ("⟨", "⟩"),
)

PALINDROME_ALPHABET = ("a", "b", "c")
HOMOMORPHIC_IMAGE = {"a": "x", "b": "y", "c": "z"}
SEPARATOR = "#"
END_MARKER = "⊣"

RESAMPLE_BUDGET_FACTOR = 100


class GenerationBudgetError(RuntimeError):
    """The requested number of distinct samples was not reached in budget."""


@dataclass(frozen=True)
class Vocabulary:
    """Ordered input and output alphabets with dense, consistent indices.

    Output symbols extend the shared prefix ordering, so a symbol present in
    both alphabets has the same index in each.
    """

    input_symbols: tuple[str, ...]
    output_symbols: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.input_symbols)) != len(self.input_symbols):
            raise ValueError("duplicate input symbols")
        if len(set(self.output_symbols)) != len(self.output_symbols):
            raise ValueError("duplicate output symbols")
        shared = [s for s in self.output_symbols if s in set(self.input_symbols)]
        if tuple(shared) != self.input_symbols[: len(shared)] or any(
            self.output_symbols[i] != s for i, s in enumerate(shared)
        ):
            raise ValueError("shared symbols must keep consistent indices")

    @property
    def d_in(self) -> int:
        return len(self.input_symbols)

    @property
    def d_out(self) -> int:
        return len(self.output_symbols)

    def input_index(self, sym: str) -> int:
        try:
            return self.input_symbols.index(sym)
        except ValueError:
            raise ValueError(f"symbol {sym!r} not in input vocabulary") from None

    def output_index(self, sym: str) -> int:
        try:
            return self.output_symbols.index(sym)
        except ValueError:
            raise ValueError(f"symbol {sym!r} not in output vocabulary") from None


@dataclass(frozen=True)
class GrammarConfig:
    """Stochastic bracket grammar: S -> O_k S C_k (p/n each) | SS (q) | empty."""

    n_pairs: int
    p: float
    q: float
    length_range: tuple[int, int]
    count: int
    seed: int

    def __post_init__(self):
        if not 1 <= self.n_pairs <= len(BRACKET_PAIRS):
            raise ValueError(f"n_pairs must be in [1, {len(BRACKET_PAIRS)}]")
        if not (0 < self.p < 1 and 0 < self.q < 1 and self.p + self.q < 1):
            raise ValueError("need 0 < p, q < 1 and p + q < 1")
        lo, hi = self.length_range
        if lo < 2 or hi < lo or lo % 2 or hi % 2:
            raise ValueError("length bounds must be even with 2 <= min <= max")
        if self.count < 1:
            raise ValueError("count must be positive")


@dataclass(frozen=True)
class Sample:
    """One task instance: input symbols and one target set per timestep."""

    input: tuple[str, ...]
    targets: tuple[frozenset[str], ...]

    def __post_init__(self):
        if len(self.input) != len(self.targets):
            raise ValueError("input and targets must have equal length")
        if any(not t for t in self.targets):
            raise ValueError("every target set must be nonempty")

    def __len__(self) -> int:
        return len(self.input)


@dataclass
class Dataset:
    samples: list[Sample]
    vocab: Vocabulary
    split: str
    config: dict
    fingerprint: str = field(default="")

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = config_fingerprint(self.config)

    def __len__(self) -> int:
        return len(self.samples)

    def input_strings(self) -> set[str]:
        return {"".join(s.input) for s in self.samples}


# ---------------------------------------------------------------------------
# Vocabularies
# ---------------------------------------------------------------------------


def dyck_vocabulary(n_pairs: int) -> Vocabulary:
    syms = tuple(s for pair in BRACKET_PAIRS[:n_pairs] for s in pair)
    return Vocabulary(syms, syms)


def palindrome_vocabulary(homomorphic: bool) -> Vocabulary:
    if homomorphic:
        inputs = PALINDROME_ALPHABET + (SEPARATOR,) + tuple(
            HOMOMORPHIC_IMAGE[s] for s in PALINDROME_ALPHABET
        )
    else:
        inputs = PALINDROME_ALPHABET + (SEPARATOR,)
    return Vocabulary(inputs, inputs + (END_MARKER,))


def reversal_vocabulary() -> Vocabulary:
    syms = PALINDROME_ALPHABET + (SEPARATOR,)
    return Vocabulary(syms, syms)


def vocab_for_config(config: dict) -> Vocabulary:
    task = config["task"]
    if task == "dyck":
        return dyck_vocabulary(config["n_pairs"])
    if task == "palindrome":
        return palindrome_vocabulary(config["homomorphic"])
    if task == "reversal":
        return reversal_vocabulary()
    raise ValueError(f"unknown task kind {task!r}")


# ---------------------------------------------------------------------------
# Nested-bracket language
# ---------------------------------------------------------------------------


def _expand_bracket_word(rng: RngStream, n_pairs: int, p: float, q: float,
                         max_len: int) -> list[str] | None:
    """One top-down expansion; None when the word provably exceeds max_len."""
    out: list[str] = []
    pending: list[str] = ["S"]
    pending_terminals = 0
    while pending:
        sym = pending.pop()
        if sym != "S":
            out.append(sym)
            pending_terminals -= 1
            continue
        r = rng.random()
        if r < p:
            k = min(int(r * n_pairs / p), n_pairs - 1)
            opener, closer = BRACKET_PAIRS[k]
            pending.append(closer)
            pending.append("S")
            pending.append(opener)
            pending_terminals += 2
            if len(out) + pending_terminals > max_len:
                return None
        elif r < p + q:
            pending.append("S")
            pending.append("S")
        # remaining mass 1-(p+q): expand to the empty string
    return out


def sample_dyck(cfg: GrammarConfig, split: str = "train") -> Dataset:
    """Draw `cfg.count` distinct well-nested words with lengths in range."""
    rng = RngStream(cfg.seed, "dyck", split)
    lo, hi = cfg.length_range
    budget = RESAMPLE_BUDGET_FACTOR * cfg.count
    words: list[str] = []
    seen: set[str] = set()
    for _ in range(budget):
        if len(words) >= cfg.count:
            break
        tokens = _expand_bracket_word(rng, cfg.n_pairs, cfg.p, cfg.q, hi)
        if tokens is None or not lo <= len(tokens) <= hi:
            continue
        word = "".join(tokens)
        if word in seen:
            continue
        seen.add(word)
        words.append(word)
    if len(words) < cfg.count:
        raise GenerationBudgetError(
            f"generated only {len(words)}/{cfg.count} distinct words within "
            f"the resampling budget of {budget} attempts"
        )
    config = {
        "task": "dyck",
        "n_pairs": cfg.n_pairs,
        "p": cfg.p,
        "q": cfg.q,
        "length_range": list(cfg.length_range),
        "count": cfg.count,
        "seed": cfg.seed,
        "split": split,
    }
    samples = [Sample(tuple(w), dyck_targets(w, cfg.n_pairs)) for w in words]
    return Dataset(samples, dyck_vocabulary(cfg.n_pairs), split, config)


def dyck_targets(word: Iterable[str], n_pairs: int) -> tuple[frozenset[str], ...]:
    """Allowed-next-symbol set after each prefix, via pushdown simulation.

    After any prefix, every opener may follow; the matching closer of the
    innermost open bracket may follow as well when one is open.
    """
    openers = {pair[0]: k for k, pair in enumerate(BRACKET_PAIRS[:n_pairs])}
    closers = {pair[1]: k for k, pair in enumerate(BRACKET_PAIRS[:n_pairs])}
    opener_set = frozenset(openers)
    stack: list[int] = []
    targets: list[frozenset[str]] = []
    for ch in word:
        if ch in openers:
            stack.append(openers[ch])
        elif ch in closers:
            if not stack or stack[-1] != closers[ch]:
                raise ValueError(f"not a valid word: unmatched {ch!r}")
            stack.pop()
        else:
            raise ValueError(f"symbol {ch!r} outside the bracket alphabet")
        if stack:
            targets.append(opener_set | {BRACKET_PAIRS[stack[-1]][1]})
        else:
            targets.append(opener_set)
    if stack:
        raise ValueError("not a valid word: unclosed brackets remain")
    return tuple(targets)


def max_nesting_depth(word: Iterable[str], n_pairs: int) -> int:
    openers = {pair[0] for pair in BRACKET_PAIRS[:n_pairs]}
    depth = best = 0
    for ch in word:
        depth += 1 if ch in openers else -1
        best = max(best, depth)
    return best


# ---------------------------------------------------------------------------
# Palindromes and reversal
# ---------------------------------------------------------------------------


def _feasible_lengths(length_range: tuple[int, int], parity: int,
                      minimum: int) -> list[int]:
    lo, hi = length_range
    if hi < lo:
        raise ValueError("empty length range")
    lengths = [n for n in range(max(lo, minimum), hi + 1) if n % 2 == parity]
    if not lengths:
        raise ValueError(f"no feasible lengths in {list(length_range)}")
    return lengths


def _draw_word(rng: RngStream, k: int) -> tuple[str, ...]:
    return tuple(PALINDROME_ALPHABET[rng.integers(0, len(PALINDROME_ALPHABET))]
                 for _ in range(k))


def sample_palindrome(homomorphic: bool, length_range: tuple[int, int],
                      count: int, seed: int, split: str = "train") -> Dataset:
    """Distinct strings w # phi(reverse(w)); phi is identity when not homomorphic.

    Total length (separator included) is drawn uniformly over the odd values
    in range, then w uniformly at that length.
    """
    rng = RngStream(seed, "palindrome", "hom" if homomorphic else "simple", split)
    lengths = _feasible_lengths(length_range, parity=1, minimum=3)
    budget = RESAMPLE_BUDGET_FACTOR * count
    seen: set[tuple[str, ...]] = set()
    samples: list[Sample] = []
    for _ in range(budget):
        if len(samples) >= count:
            break
        total = lengths[rng.integers(0, len(lengths))]
        w = _draw_word(rng, (total - 1) // 2)
        second = tuple(HOMOMORPHIC_IMAGE[s] for s in reversed(w)) if homomorphic \
            else tuple(reversed(w))
        seq = w + (SEPARATOR,) + second
        if seq in seen:
            continue
        seen.add(seq)
        samples.append(Sample(seq, palindrome_targets(seq)))
    if len(samples) < count:
        raise GenerationBudgetError(
            f"generated only {len(samples)}/{count} distinct palindromes within "
            f"the resampling budget of {budget} attempts"
        )
    config = {
        "task": "palindrome",
        "homomorphic": homomorphic,
        "length_range": list(length_range),
        "count": count,
        "seed": seed,
        "split": split,
    }
    return Dataset(samples, palindrome_vocabulary(homomorphic), split, config)


def palindrome_targets(seq: Sequence[str]) -> tuple[frozenset[str], ...]:
    """Target sets for a w#second string, recomputable from the input alone.

    While the first half (and nothing after it) has been read, any of
    {a, b, c, #} may come next; once the separator is passed the continuation
    is forced symbol by symbol, and after the last symbol only the end marker
    remains.
    """
    if SEPARATOR not in seq:
        raise ValueError("palindrome input must contain the separator")
    k = seq.index(SEPARATOR)
    total = len(seq)
    if total != 2 * k + 1 or k < 1:
        raise ValueError("palindrome input must be w # second with |w| >= 1")
    first_half = frozenset(PALINDROME_ALPHABET) | {SEPARATOR}
    targets: list[frozenset[str]] = []
    for t in range(total):
        if t < k:
            targets.append(first_half)
        elif t < total - 1:
            targets.append(frozenset((seq[t + 1],)))
        else:
            targets.append(frozenset((END_MARKER,)))
    return tuple(targets)


def reversal_pairs(length_range: tuple[int, int], count: int, seed: int,
                   split: str = "train") -> Dataset:
    """Transduction corpora: read w then |w| separators, emit separators then
    reverse(w)."""
    rng = RngStream(seed, "reversal", split)
    lengths = _feasible_lengths(length_range, parity=0, minimum=2)
    budget = RESAMPLE_BUDGET_FACTOR * count
    seen: set[tuple[str, ...]] = set()
    samples: list[Sample] = []
    for _ in range(budget):
        if len(samples) >= count:
            break
        total = lengths[rng.integers(0, len(lengths))]
        k = total // 2
        w = _draw_word(rng, k)
        seq = w + (SEPARATOR,) * k
        if seq in seen:
            continue
        seen.add(seq)
        samples.append(Sample(seq, reversal_targets(seq)))
    if len(samples) < count:
        raise GenerationBudgetError(
            f"generated only {len(samples)}/{count} distinct reversal inputs "
            f"within the resampling budget of {budget} attempts"
        )
    config = {
        "task": "reversal",
        "length_range": list(length_range),
        "count": count,
        "seed": seed,
        "split": split,
    }
    return Dataset(samples, reversal_vocabulary(), split, config)


def reversal_targets(seq: Sequence[str]) -> tuple[frozenset[str], ...]:
    """Per-step transduction outputs: k separators, then w reversed."""
    total = len(seq)
    if total % 2 or total < 2:
        raise ValueError("reversal input must have even positive length")
    k = total // 2
    w = seq[:k]
    if any(s == SEPARATOR for s in w) or any(s != SEPARATOR for s in seq[k:]):
        raise ValueError("reversal input must be w followed by |w| separators")
    targets = [frozenset((SEPARATOR,))] * k
    targets.extend(frozenset((w[k - 1 - j],)) for j in range(k))
    return tuple(targets)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def encode_input(symbols: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    """One-hot rows for a symbol sequence."""
    x = np.zeros((len(symbols), vocab.d_in))
    for t, sym in enumerate(symbols):
        x[t, vocab.input_index(sym)] = 1.0
    return x


def encode(sample: Sample, vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """One-hot input rows and k-hot target rows for one sample."""
    x = encode_input(sample.input, vocab)
    y = np.zeros((len(sample), vocab.d_out))
    for t, target in enumerate(sample.targets):
        for sym in target:
            y[t, vocab.output_index(sym)] = 1.0
    return x, y


def decode_input(x: np.ndarray, vocab: Vocabulary) -> tuple[str, ...]:
    symbols = []
    for row in x:
        hot = np.flatnonzero(row)
        if hot.size != 1:
            raise ValueError("input rows must be one-hot")
        symbols.append(vocab.input_symbols[hot[0]])
    return tuple(symbols)


def decode_targets(y: np.ndarray, vocab: Vocabulary) -> tuple[frozenset[str], ...]:
    return tuple(
        frozenset(vocab.output_symbols[i] for i in np.flatnonzero(row)) for row in y
    )


def verify_disjoint(train: Dataset, test: Dataset) -> bool:
    """True iff the two splits share no input string."""
    if train.vocab != test.vocab:
        raise ValueError("datasets use different vocabularies")
    return not (train.input_strings() & test.input_strings())


# ---------------------------------------------------------------------------
# Dataset files: one record per line, `input<TAB>set set ...` with sets as
# /-joined symbols, plus a header carrying the generation config.
# ---------------------------------------------------------------------------

_HEADER_PREFIX = "# marnn-dataset v1 "


def _format_target(target: frozenset[str], vocab: Vocabulary) -> str:
    return "/".join(sorted(target, key=vocab.output_index))


def save_dataset(dataset: Dataset, path) -> None:
    lines = [
        f"{_HEADER_PREFIX}fingerprint={dataset.fingerprint} "
        f"config={canonical_json(dataset.config)}"
    ]
    for sample in dataset.samples:
        sets = " ".join(_format_target(t, dataset.vocab) for t in sample.targets)
        lines.append("".join(sample.input) + "\t" + sets)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    import json

    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(_HEADER_PREFIX):
            raise ValueError(f"{path}: missing dataset header")
        meta = header[len(_HEADER_PREFIX):]
        if not meta.startswith("fingerprint="):
            raise ValueError(f"{path}: malformed dataset header")
        fingerprint, _, config_json = meta[len("fingerprint="):].partition(" config=")
        config = json.loads(config_json)
        vocab = vocab_for_config(config)
        samples = []
        seen: set[str] = set()
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                word, sets = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected input<TAB>targets")
            if word in seen:
                raise ValueError(f"{path}:{lineno}: duplicate input within split")
            seen.add(word)
            targets = tuple(frozenset(s.split("/")) for s in sets.split(" "))
            samples.append(Sample(tuple(word), targets))
    ds = Dataset(samples, vocab, config.get("split", "train"), config)
    if ds.fingerprint != fingerprint:
        raise ValueError(f"{path}: fingerprint does not match stored config")
    return ds
