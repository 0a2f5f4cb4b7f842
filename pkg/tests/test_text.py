"""Text metrics: Levenshtein breakdowns, CER/WER, controlled corruption."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corplab.text import (
    SYMBOLS,
    cer,
    corrupt,
    decode,
    encode,
    is_valid_text,
    levenshtein,
    wer,
    words,
)

alphabet_text = st.text(alphabet=SYMBOLS, max_size=12)


def naive_distance(a: str, b: str) -> int:
    """Exhaustive recursion over all edit scripts; no DP table shared with
    the implementation under test."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        naive_distance(a[1:], b[1:]) + (a[0] != b[0]),
        naive_distance(a[1:], b) + 1,
        naive_distance(a, b[1:]) + 1,
    )


class TestAlphabet:
    def test_thirty_one_distinct_symbols(self):
        assert len(SYMBOLS) == 31
        assert len(set(SYMBOLS)) == 31

    def test_encode_decode_roundtrip(self):
        s = "the cat's hat, ok?"
        assert decode(encode(s)) == s

    def test_encode_rejects_unknown(self):
        with pytest.raises(ValueError):
            encode("Uppercase")

    def test_decode_rejects_blank_index(self):
        with pytest.raises(ValueError):
            decode([31])


class TestLevenshtein:
    def test_identity(self):
        r = levenshtein("abc", "abc")
        assert r.distance == 0 and r.rate == 0.0

    def test_delete_all(self):
        r = levenshtein("abc", "")
        assert r.deletions == 3 and r.distance == 3 and r.rate == 1.0

    def test_empty_reference_flagged(self):
        r = levenshtein("", "abc")
        assert r.insertions == 3 and r.distance == 3
        assert math.isnan(r.rate)

    def test_kitten_sitting_exhaustive(self):
        # all edit scripts of length <= 4 on this pair
        assert naive_distance("kitten", "sitting") == 3
        assert levenshtein("kitten", "sitting").distance == 3

    def test_hello_there_cross_checked(self):
        a, b = "hello there", "helo thare"
        expected = naive_distance(a, b)
        r = cer(a, b)
        assert r.distance == expected == 2
        assert r.rate == expected / len(a)

    def test_breakdown_consistency(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = "".join(SYMBOLS[i] for i in rng.integers(0, 31, rng.integers(0, 9)))
            b = "".join(SYMBOLS[i] for i in rng.integers(0, 31, rng.integers(0, 9)))
            r = levenshtein(a, b)
            # breakdown reproduces the distance and the length algebra
            assert r.substitutions + r.insertions + r.deletions == r.distance
            assert len(a) - r.deletions - r.substitutions == len(b) - r.insertions - r.substitutions

    @given(alphabet_text, alphabet_text, alphabet_text)
    @settings(max_examples=60, deadline=None)
    def test_triangle_inequality(self, a, b, c):
        assert (
            levenshtein(a, c).distance
            <= levenshtein(a, b).distance + levenshtein(b, c).distance
        )

    @given(alphabet_text, alphabet_text)
    @settings(max_examples=60, deadline=None)
    def test_distance_symmetry(self, a, b):
        assert levenshtein(a, b).distance == levenshtein(b, a).distance


class TestCerWer:
    def test_cer_identity(self):
        assert cer("cat", "cat").rate == 0.0

    def test_cer_single_substitution(self):
        assert cer("cat", "cut").rate == pytest.approx(1 / 3)

    def test_cer_rejects_empty_reference(self):
        with pytest.raises(ValueError):
            cer("", "abc")

    def test_wer_identity(self):
        assert wer("the cat sat", "the cat sat").rate == 0.0

    def test_wer_single_word_substitution(self):
        assert wer("the cat sat", "the cut sat").rate == pytest.approx(1 / 3)

    def test_wer_word_deletion_exhaustive(self):
        ref, hyp = "a b c d", "a c d"
        assert naive_distance("".join(words(ref)), "".join(words(hyp))) == 1
        assert wer(ref, hyp).rate == pytest.approx(1 / 4)

    def test_wer_rejects_wordless_reference(self):
        with pytest.raises(ValueError):
            wer("   ", "a b")

    def test_consecutive_spaces_make_no_empty_tokens(self):
        assert words("a  b   c") == ["a", "b", "c"]
        assert wer("a  b", "a b").rate == 0.0


class TestCorrupt:
    def test_zero_corruption_is_identity(self):
        rng = np.random.default_rng(5)
        for t in ("hello", "a", "the cat sat on the mat."):
            assert corrupt(t, 0.0, rng) == t

    def test_rejects_out_of_range_target(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            corrupt("abc", 1.5, rng)

    def test_output_stays_in_alphabet(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            out = corrupt("the quick brown fox, yes?", 0.4, rng)
            assert is_valid_text(out)

    def test_expected_cer_at_twenty_percent(self):
        # Monte-Carlo with the cer operation as the oracle
        t = "abcdefghij"
        rates = []
        for seed in range(1000):
            out = corrupt(t, 0.2, np.random.default_rng(seed))
            rates.append(cer(t, out).rate)
        assert abs(np.mean(rates) - 0.20) <= 0.02

    def test_full_corruption_near_total(self):
        t = "abcdefghij"
        rates = [
            cer(t, corrupt(t, 1.0, np.random.default_rng(seed))).rate
            for seed in range(400)
        ]
        assert np.mean(rates) >= 0.9

    def test_mean_tracking_below_half(self):
        # random (t, target) pairs; mean bias within +-0.02 for target <= 0.5
        rng = np.random.default_rng(123)
        diffs = []
        for _ in range(1000):
            n = int(rng.integers(8, 26))
            t = "".join(SYMBOLS[i] for i in rng.integers(0, 31, n))
            target = float(rng.uniform(0.0, 0.5))
            out = corrupt(t, target, rng)
            diffs.append(cer(t, out).rate - target)
        assert abs(np.mean(diffs)) <= 0.02

    def test_deterministic_given_seed(self):
        a = corrupt("abcdefghij", 0.3, np.random.default_rng(99))
        b = corrupt("abcdefghij", 0.3, np.random.default_rng(99))
        assert a == b

    def test_cer_of_uncorrupted_always_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(1, 15))
            t = "".join(SYMBOLS[i] for i in rng.integers(0, 31, n))
            assert cer(t, corrupt(t, 0.0, rng)).rate == 0.0
