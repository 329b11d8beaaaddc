import math
from functools import lru_cache

import pytest
from hypothesis import given, settings, strategies as st

from skelattack.loss_metrics import (char_accuracy, cosine_similarity, success,
                                     tfidf_pair, tokenize)

IDF_UNIQUE = math.log(3 / 2) + 1  # pair corpus: token present in one doc of two


def sklearn_cosine(tokens_a, tokens_b):
    """Independent reference: sklearn TF-IDF on pre-tokenized documents."""
    from sklearn.feature_extraction.text import TfidfVectorizer

    vec = TfidfVectorizer(analyzer=lambda doc: doc, smooth_idf=True,
                          norm="l2", sublinear_tf=False)
    m = vec.fit_transform([list(tokens_a), list(tokens_b)])
    return float((m[0] @ m[1].T).toarray()[0, 0])


def lcs_oracle(a, b):
    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


token_lists = st.lists(st.sampled_from(
    list("abxyz012+-=<>^{}") + ["\\frac", "\\alpha", "\\sum"]), max_size=12)


class TestTokenize:
    def test_command_with_braces(self):
        assert tokenize(r"\frac{a}{b}") == ["\\frac", "{", "a", "}", "{", "b", "}"]

    def test_superscript(self):
        assert tokenize("x^{2}+1") == ["x", "^", "{", "2", "}", "+", "1"]

    def test_empty(self):
        assert tokenize("") == []

    def test_whitespace_dropped(self):
        assert tokenize(" a +\tb \n") == ["a", "+", "b"]

    def test_backslash_nonletter(self):
        assert tokenize(r"\{x\}") == ["\\{", "x", "\\}"]

    def test_trailing_backslash(self):
        assert tokenize("a\\") == ["a", "\\"]

    def test_letters_split_individually(self):
        assert tokenize("ab1") == ["a", "b", "1"]

    @given(st.lists(st.sampled_from(list("abcxyz0123456789+-=<>^{}")), max_size=15))
    def test_concatenation_round_trips_for_atlas_tokens(self, tokens):
        # scoped to single-character tokens: a command like \frac followed by
        # a letter would legitimately fuse under the greedy rule
        assert tokenize("".join(tokens)) == tokens


class TestTfidfPair:
    def test_identical_docs_identical_unit_vectors(self):
        va, vb = tfidf_pair(["a", "+", "b"], ["a", "+", "b"])
        assert va.weights == vb.weights
        assert va.norm == pytest.approx(1.0, abs=1e-12)

    def test_idf_closed_form(self):
        va, _ = tfidf_pair(["a", "+", "b"], ["a", "-", "b"])
        # shared tokens idf 1, unique idf ln(3/2)+1; ratio survives normalization
        assert va.weights["+"] / va.weights["a"] == pytest.approx(IDF_UNIQUE, abs=1e-12)
        assert IDF_UNIQUE == pytest.approx(1.405465, abs=5e-7)

    def test_empty_doc_is_zero_vector(self):
        va, vb = tfidf_pair(["a"], [])
        assert va.weights == {"a": 1.0}
        assert vb.weights == {} and vb.norm == 0.0


class TestCosineSimilarity:
    def test_identical_outputs(self):
        assert cosine_similarity(["a", "+", "b"], ["a", "+", "b"]) == 1.0

    def test_hand_derived_value(self):
        got = cosine_similarity(["a", "+", "b"], ["a", "-", "b"])
        assert got == pytest.approx(2 / (2 + IDF_UNIQUE**2), abs=1e-12)
        assert got == pytest.approx(0.50310, abs=5e-6)

    def test_disjoint_tokens(self):
        assert cosine_similarity(["a"], ["b"]) == 0.0

    def test_empty_conventions(self):
        assert cosine_similarity([], []) == 1.0
        assert cosine_similarity(["a"], []) == 0.0
        assert cosine_similarity([], ["a"]) == 0.0

    def test_matches_sklearn_reference(self):
        pairs = [(["a", "+", "b"], ["a", "-", "b"]),
                 (["x", "x", "y"], ["x", "y", "y"]),
                 (["\\frac", "{", "1", "}"], ["\\frac", "{", "2", "}"])]
        for a, b in pairs:
            assert cosine_similarity(a, b) == pytest.approx(sklearn_cosine(a, b), abs=1e-9)

    @settings(max_examples=80)
    @given(token_lists, token_lists)
    def test_symmetric_and_bounded(self, a, b):
        s = cosine_similarity(a, b)
        assert 0.0 <= s <= 1.0
        assert s == cosine_similarity(b, a)

    @settings(max_examples=60)
    @given(token_lists.filter(bool), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, tokens, rnd):
        shuffled = tokens[:]
        rnd.shuffle(shuffled)
        other = ["q"] * 3
        assert cosine_similarity(tokens, other) == pytest.approx(
            cosine_similarity(shuffled, other), abs=1e-12)

    @settings(max_examples=60)
    @given(token_lists.filter(bool), token_lists.filter(bool))
    def test_one_iff_proportional_counts(self, a, b):
        # equal multisets give exactly 1; non-proportional count vectors give < 1
        from collections import Counter

        ca, cb = Counter(a), Counter(b)
        proportional = set(ca) == set(cb) and len({cb[t] / ca[t] for t in ca}) == 1
        if sorted(a) == sorted(b):
            assert cosine_similarity(a, b) == pytest.approx(1.0, abs=1e-12)
        elif not proportional:
            assert cosine_similarity(a, b) < 1.0 - 1e-9


class TestCharAccuracy:
    def test_identical(self):
        assert char_accuracy("x+1", "x+1") == 1.0

    def test_single_substitution(self):
        assert char_accuracy("x+1", "x-1") == pytest.approx(2 / 3)

    def test_empty_adversarial(self):
        assert char_accuracy("ab", "") == 0.0

    def test_whitespace_stripped(self):
        assert char_accuracy("x + 1", "x+1") == 1.0

    @settings(max_examples=60)
    @given(st.text("abc+-", max_size=8), st.text("abc+-", max_size=8))
    def test_matches_recursive_oracle(self, a, b):
        assert char_accuracy(a, b) == lcs_oracle(a, b) / max(len(a), 1)

    def test_monotone_on_substitution_chain(self):
        base = "abcdef"
        acc = []
        s = list(base)
        for i in range(len(base)):
            s[i] = "#"
            acc.append(char_accuracy(base, "".join(s)))
        assert all(x >= y for x, y in zip(acc, acc[1:]))


class TestSuccess:
    def test_unchanged_output(self):
        assert success(1.0) is False

    def test_partial_change_counts(self):
        assert success(0.82) is True

    def test_within_float_guard(self):
        assert success(1.0 - 1e-12) is False

    def test_just_outside_guard(self):
        assert success(1.0 - 1e-8) is True


def test_metrics_deterministic():
    a, b = ["x", "+", "1"], ["x", "-", "1"]
    runs = {(cosine_similarity(a, b), char_accuracy("x+1", "x-1")) for _ in range(5)}
    assert len(runs) == 1
