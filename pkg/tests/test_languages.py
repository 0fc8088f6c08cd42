import numpy as np
import pytest

from marnn.languages import (
    BRACKET_PAIRS,
    END_MARKER,
    SEPARATOR,
    Dataset,
    GenerationBudgetError,
    GrammarConfig,
    Sample,
    Vocabulary,
    _expand_bracket_word,
    decode_input,
    decode_targets,
    dyck_targets,
    dyck_vocabulary,
    encode,
    load_dataset,
    max_nesting_depth,
    palindrome_targets,
    palindrome_vocabulary,
    reversal_pairs,
    reversal_targets,
    reversal_vocabulary,
    sample_dyck,
    sample_palindrome,
    save_dataset,
    verify_disjoint,
)


def balanced_by_stack(word: str, n_pairs: int) -> bool:
    """Independent validity checker: counter-free stack matcher."""
    match = {closer: opener for opener, closer in BRACKET_PAIRS[:n_pairs]}
    openers = {opener for opener, _ in BRACKET_PAIRS[:n_pairs]}
    stack = []
    for ch in word:
        if ch in openers:
            stack.append(ch)
        elif ch in match:
            if not stack or stack[-1] != match[ch]:
                return False
            stack.pop()
        else:
            return False
    return not stack


def all_bracket_words(n_pairs: int, max_len: int) -> list[str]:
    """Exhaustive enumeration of every valid word up to max_len."""
    pairs = BRACKET_PAIRS[:n_pairs]
    words: list[str] = []

    def rec(cur: list[str], closers: list[str]) -> None:
        if cur and not closers:
            words.append("".join(cur))
        if len(cur) >= max_len:
            return
        if len(cur) + len(closers) + 2 <= max_len:
            for opener, closer in pairs:
                cur.append(opener)
                closers.append(closer)
                rec(cur, closers)
                closers.pop()
                cur.pop()
        if closers:
            closer = closers.pop()
            cur.append(closer)
            rec(cur, closers)
            cur.pop()
            closers.append(closer)

    rec([], [])
    return words


class ScriptedRng:
    """Feeds a fixed list of uniform draws into the grammar expander."""

    def __init__(self, draws):
        self.draws = list(draws)

    def random(self):
        return self.draws.pop(0)


# ---------------------------------------------------------------------------
# Grammar expansion and sampling
# ---------------------------------------------------------------------------


def test_expansion_maps_draws_to_productions():
    # p=1/2, q=1/4: r >= 3/4 -> empty; r in [1/2, 3/4) -> SS; r < 1/2 -> pair
    assert _expand_bracket_word(ScriptedRng([0.9]), 2, 0.5, 0.25, 50) == []
    assert _expand_bracket_word(ScriptedRng([0.1, 0.9]), 2, 0.5, 0.25, 50) \
        == ["(", ")"]
    assert _expand_bracket_word(ScriptedRng([0.3, 0.9]), 2, 0.5, 0.25, 50) \
        == ["[", "]"]
    # SS then two empties
    assert _expand_bracket_word(ScriptedRng([0.6, 0.9, 0.9]), 2, 0.5, 0.25, 50) == []
    # nesting: ( [ ] )
    draws = [0.1, 0.3, 0.9, 0.9]
    assert _expand_bracket_word(ScriptedRng(draws), 2, 0.5, 0.25, 50) \
        == ["(", "[", "]", ")"]


def test_expansion_aborts_when_exceeding_bound():
    # always choosing the first pair grows two terminals per step
    endless = ScriptedRng([0.0] * 100)
    assert _expand_bracket_word(endless, 2, 0.5, 0.25, 8) is None


def test_sample_dyck_words_are_valid_distinct_and_bounded():
    cfg = GrammarConfig(2, 0.5, 0.25, (2, 50), 500, seed=7)
    ds = sample_dyck(cfg)
    words = ["".join(s.input) for s in ds.samples]
    assert len(words) == 500
    assert len(set(words)) == 500
    for w in words:
        assert 2 <= len(w) <= 50
        assert balanced_by_stack(w, 2)


def test_sample_dyck_is_deterministic():
    cfg = GrammarConfig(2, 0.5, 0.25, (2, 50), 200, seed=3)
    a = sample_dyck(cfg)
    b = sample_dyck(cfg)
    assert a.samples == b.samples
    assert a.fingerprint == b.fingerprint


def test_sample_dyck_test_split_uses_longer_words():
    cfg = GrammarConfig(2, 0.5, 0.25, (52, 100), 100, seed=11)
    ds = sample_dyck(cfg, split="test")
    for s in ds.samples:
        assert 52 <= len(s) <= 100


def test_sample_dyck_budget_failure_is_explicit():
    # only two distinct words of length exactly 2 exist for two pairs
    cfg = GrammarConfig(2, 0.5, 0.25, (2, 2), 3, seed=0)
    with pytest.raises(GenerationBudgetError, match="budget"):
        sample_dyck(cfg)


def test_grammar_config_validation():
    with pytest.raises(ValueError):
        GrammarConfig(2, 0.7, 0.4, (2, 50), 10, 0)  # p + q >= 1
    with pytest.raises(ValueError):
        GrammarConfig(2, 0.5, 0.25, (3, 50), 10, 0)  # odd bound
    with pytest.raises(ValueError):
        GrammarConfig(0, 0.5, 0.25, (2, 50), 10, 0)
    with pytest.raises(ValueError):
        GrammarConfig(2, 0.5, 0.25, (2, 50), 0, 0)


# ---------------------------------------------------------------------------
# Next-symbol oracle
# ---------------------------------------------------------------------------


def test_dyck_targets_table_fixture():
    op = frozenset("([")
    expected = (
        op | {")"},
        op | {"]"},
        op | {")"},
        op,
    )
    assert dyck_targets("([])", 2) == expected


def test_dyck_targets_single_pair():
    op = frozenset("([")
    assert dyck_targets("()", 2) == (op | {")"}, op)


def test_dyck_targets_rejects_invalid_words():
    for bad in ["(", ")(", "([)]", "(]", "((("]:
        with pytest.raises(ValueError):
            dyck_targets(bad, 2)


@pytest.mark.parametrize("n_pairs,word_len,slack_len", [(2, 12, 14), (3, 8, 10)])
def test_dyck_targets_match_exhaustive_enumeration(n_pairs, word_len, slack_len):
    symbols = [s for pair in BRACKET_PAIRS[:n_pairs] for s in pair]
    prefixes: set[str] = set()
    for w in all_bracket_words(n_pairs, slack_len):
        for i in range(1, len(w) + 1):
            prefixes.add(w[:i])
    for w in all_bracket_words(n_pairs, word_len):
        computed = dyck_targets(w, n_pairs)
        for t in range(len(w)):
            prefix = w[: t + 1]
            brute = frozenset(s for s in symbols if prefix + s in prefixes)
            assert computed[t] == brute, (w, t)


def test_max_nesting_depth():
    assert max_nesting_depth("()", 2) == 1
    assert max_nesting_depth("(([]))", 2) == 3
    assert max_nesting_depth("()[]", 2) == 1


# ---------------------------------------------------------------------------
# Palindromes
# ---------------------------------------------------------------------------


def test_palindrome_targets_table_fixture():
    first = frozenset({"a", "b", "c", SEPARATOR})
    expected = (first, first, first,
                frozenset("z"), frozenset("y"), frozenset("x"),
                frozenset(END_MARKER))
    assert palindrome_targets(tuple("abc#zyx")) == expected


def test_simple_palindrome_targets():
    first = frozenset({"a", "b", "c", SEPARATOR})
    expected = (first, first, frozenset("b"), frozenset("a"),
                frozenset(END_MARKER))
    assert palindrome_targets(tuple("ab#ba")) == expected


@pytest.mark.parametrize("homomorphic", [True, False])
def test_sample_palindrome_structure(homomorphic):
    ds = sample_palindrome(homomorphic, (2, 50), 300, seed=5)
    assert len(ds) == 300
    image = {"a": "x", "b": "y", "c": "z"} if homomorphic else \
        {s: s for s in "abc"}
    seen = set()
    for s in ds.samples:
        word = "".join(s.input)
        assert word not in seen
        seen.add(word)
        assert 3 <= len(word) <= 50 and len(word) % 2 == 1
        k = len(word) // 2
        assert word[k] == SEPARATOR
        w, second = word[:k], word[k + 1:]
        assert second == "".join(image[ch] for ch in reversed(w))
        # the documented target scheme reproduces the stored targets
        assert s.targets == palindrome_targets(s.input)


def test_sample_palindrome_deterministic():
    a = sample_palindrome(True, (2, 50), 100, seed=9)
    b = sample_palindrome(True, (2, 50), 100, seed=9)
    assert a.samples == b.samples


def test_sample_palindrome_budget_failure():
    # lengths restricted to 3 allow only 3 distinct strings
    with pytest.raises(GenerationBudgetError):
        sample_palindrome(False, (2, 4), 10, seed=0)


# ---------------------------------------------------------------------------
# Reversal
# ---------------------------------------------------------------------------


def test_reversal_fixture():
    expected = (frozenset("#"), frozenset("#"), frozenset("b"), frozenset("a"))
    assert reversal_targets(tuple("ab##")) == expected


def test_reversal_structure():
    ds = reversal_pairs((2, 50), 300, seed=4)
    for s in ds.samples:
        total = len(s)
        assert total % 2 == 0
        k = total // 2
        w = s.input[:k]
        assert all(ch == SEPARATOR for ch in s.input[k:])
        assert all(ch in "abc" for ch in w)
        # second-half outputs are exactly the multiset of w
        emitted = sorted(next(iter(t)) for t in s.targets[k:])
        assert emitted == sorted(w)
        assert s.targets == reversal_targets(s.input)


def test_reversal_rejects_malformed_inputs():
    with pytest.raises(ValueError):
        reversal_targets(tuple("ab#"))
    with pytest.raises(ValueError):
        reversal_targets(tuple("a#b#"))


# ---------------------------------------------------------------------------
# Vocabularies and encoding
# ---------------------------------------------------------------------------


def test_vocabulary_dimensions_per_task():
    assert dyck_vocabulary(2).d_in == 4 and dyck_vocabulary(2).d_out == 4
    assert dyck_vocabulary(6).d_out == 12
    hom = palindrome_vocabulary(True)
    assert hom.d_in == 7 and hom.d_out == 8
    simple = palindrome_vocabulary(False)
    assert simple.d_in == 4 and simple.d_out == 5
    rev = reversal_vocabulary()
    assert rev.d_in == 4 and rev.d_out == 4
    assert END_MARKER not in rev.output_symbols


def test_vocabulary_rejects_inconsistent_indices():
    with pytest.raises(ValueError):
        Vocabulary(("a", "b"), ("b", "a"))
    with pytest.raises(ValueError):
        Vocabulary(("a", "a"), ("a",))


def test_encode_one_hot_fixture():
    vocab = dyck_vocabulary(2)
    sample = Sample(tuple("()"), dyck_targets("()", 2))
    x, y = encode(sample, vocab)
    assert np.array_equal(x[0], [1, 0, 0, 0])
    # allowed after "(": both openers plus the matching closer
    assert np.array_equal(y[0], [1, 1, 1, 0])
    # target {(, [} is k-hot on indices 0 and 2
    assert np.array_equal(y[1], [1, 0, 1, 0])


def test_encode_rejects_unknown_symbols():
    vocab = dyck_vocabulary(2)
    sample = Sample(("{", "}"), (frozenset("{"), frozenset("}")))
    with pytest.raises(ValueError):
        encode(sample, vocab)


def test_encode_decode_round_trip():
    datasets = [
        sample_dyck(GrammarConfig(2, 0.5, 0.25, (2, 50), 40, seed=1)),
        sample_palindrome(True, (2, 50), 30, seed=2),
        reversal_pairs((2, 50), 30, seed=3),
    ]
    for ds in datasets:
        for s in ds.samples:
            x, y = encode(s, ds.vocab)
            assert decode_input(x, ds.vocab) == s.input
            assert decode_targets(y, ds.vocab) == s.targets


# ---------------------------------------------------------------------------
# Split disjointness
# ---------------------------------------------------------------------------


def test_verify_disjoint_for_length_separated_splits():
    train = sample_dyck(GrammarConfig(2, 0.5, 0.25, (2, 50), 200, seed=0))
    test = sample_dyck(GrammarConfig(2, 0.5, 0.25, (52, 100), 50, seed=0),
                       split="test")
    assert verify_disjoint(train, test)


def test_verify_disjoint_identical_datasets():
    ds = sample_dyck(GrammarConfig(2, 0.5, 0.25, (2, 50), 50, seed=0))
    assert not verify_disjoint(ds, ds)


def test_verify_disjoint_detects_single_duplicate():
    base = sample_dyck(GrammarConfig(2, 0.5, 0.25, (2, 50), 1000, seed=0))
    half_a = Dataset(base.samples[:500], base.vocab, "train", dict(base.config))
    # force one overlap into the other half
    forced = base.samples[500:] + [base.samples[0]]
    half_b = Dataset(forced, base.vocab, "test", dict(base.config))
    assert not verify_disjoint(half_a, half_b)


def test_verify_disjoint_requires_matching_vocab():
    a = sample_dyck(GrammarConfig(2, 0.5, 0.25, (2, 50), 10, seed=0))
    b = reversal_pairs((2, 50), 10, seed=0)
    with pytest.raises(ValueError):
        verify_disjoint(a, b)


# ---------------------------------------------------------------------------
# File round-trips
# ---------------------------------------------------------------------------


def test_dataset_file_round_trip(tmp_path):
    for ds in [
        sample_dyck(GrammarConfig(3, 0.5, 0.25, (2, 50), 60, seed=12)),
        sample_palindrome(True, (2, 50), 40, seed=13),
        sample_palindrome(False, (2, 50), 40, seed=14),
        reversal_pairs((2, 50), 40, seed=15),
    ]:
        path = tmp_path / f"{ds.config['task']}.tsv"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.samples == ds.samples
        assert loaded.config == ds.config
        assert loaded.fingerprint == ds.fingerprint
        # saving again is byte-identical
        second = tmp_path / "again.tsv"
        save_dataset(loaded, second)
        assert path.read_bytes() == second.read_bytes()


def test_dataset_file_rejects_duplicates_and_garbage(tmp_path):
    ds = sample_dyck(GrammarConfig(2, 0.5, 0.25, (2, 50), 5, seed=1))
    path = tmp_path / "d.tsv"
    save_dataset(ds, path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines + [lines[1]]) + "\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_dataset(path)
    path.write_text("no header\n", encoding="utf-8")
    with pytest.raises(ValueError, match="header"):
        load_dataset(path)
