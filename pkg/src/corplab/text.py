"""Character alphabet, transcripts, and edit-distance metrics (CER/WER).

Transcripts are plain strings over a fixed 31-symbol alphabet: the 26
lowercase letters plus period, comma, apostrophe, question mark, and
space. Index 31 is reserved for the sequence-decoder blank symbol and is
never part of a transcript.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LETTERS = "abcdefghijklmnopqrstuvwxyz"
PUNCTUATION = ".,'? "
SYMBOLS = LETTERS + PUNCTUATION
BLANK = len(SYMBOLS)
NUM_CLASSES = len(SYMBOLS) + 1
SPACE = SYMBOLS.index(" ")

_CHAR_TO_INDEX = {c: i for i, c in enumerate(SYMBOLS)}


@dataclass(frozen=True)
class Alphabet:
    """The decoding alphabet: ordered non-blank symbols plus the blank index."""

    symbols: str = SYMBOLS
    blank_index: int = BLANK

    @property
    def num_classes(self) -> int:
        return len(self.symbols) + 1

    def __post_init__(self) -> None:
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be distinct")
        if 0 <= self.blank_index < len(self.symbols):
            raise ValueError("blank index must lie outside the symbol range")


DEFAULT_ALPHABET = Alphabet()


def encode(text: str) -> np.ndarray:
    """Map a transcript string to an int array of symbol indices."""
    try:
        return np.array([_CHAR_TO_INDEX[c] for c in text], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"character {exc.args[0]!r} is not in the alphabet") from None


def decode(indices: Sequence[int]) -> str:
    """Inverse of :func:`encode`; rejects blanks and out-of-range indices."""
    out = []
    for i in indices:
        if not 0 <= i < len(SYMBOLS):
            raise ValueError(f"index {i} is not a non-blank alphabet symbol")
        out.append(SYMBOLS[i])
    return "".join(out)


def is_valid_text(text: str) -> bool:
    return all(c in _CHAR_TO_INDEX for c in text)


@dataclass(frozen=True)
class ErrorReport:
    """Edit-distance breakdown from one optimal alignment.

    ``rate`` is (S+I+D)/reference_length; it is NaN when the reference is
    empty (the counts are still meaningful).
    """

    substitutions: int
    insertions: int
    deletions: int
    reference_length: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        if self.reference_length == 0:
            return math.nan
        return self.distance / self.reference_length


def levenshtein(a: Sequence, b: Sequence) -> ErrorReport:
    """Minimal edit distance from ``a`` (reference) to ``b`` (hypothesis).

    Uniform unit costs. Ties among optimal alignments are broken during
    traceback preferring substitution, then deletion, then insertion, so
    the breakdown is deterministic.
    """
    m, n = len(a), len(b)
    dp = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        dp[i][0] = i
    for j in range(n + 1):
        dp[0][j] = j
    for i in range(1, m + 1):
        ai = a[i - 1]
        row = dp[i]
        prev = dp[i - 1]
        for j in range(1, n + 1):
            cost = 0 if ai == b[j - 1] else 1
            row[j] = min(prev[j - 1] + cost, prev[j] + 1, row[j - 1] + 1)

    subs = ins = dels = 0
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and dp[i][j] == dp[i - 1][j - 1]:
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + 1:
            subs += 1
            i -= 1
            j -= 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ErrorReport(subs, ins, dels, reference_length=m)


def cer(reference: str, hypothesis: str) -> ErrorReport:
    """Character error rate report. The reference must be non-empty."""
    if len(reference) == 0:
        raise ValueError("CER is undefined for an empty reference transcript")
    return levenshtein(reference, hypothesis)


def words(text: str) -> list[str]:
    """Split on the space symbol; consecutive spaces yield no empty tokens."""
    return [w for w in text.split(" ") if w]


def wer(reference: str, hypothesis: str) -> ErrorReport:
    """Word error rate report over space-delimited tokens."""
    ref_words = words(reference)
    if not ref_words:
        raise ValueError("WER is undefined for a reference with no words")
    return levenshtein(ref_words, words(hypothesis))


def corrupt(text: str, target_cer: float, rng: np.random.Generator) -> str:
    """Randomly edit ``text`` so its expected CER equals ``target_cer``.

    Draws a planned edit distance k ~ Binomial(len(text), target_cer),
    then applies random single edits (substitution / insertion / deletion
    chosen uniformly, characters uniform over the alphabet excluding the
    one at the edited position), keeping an edit only when it raises the
    measured distance to the original. The loop stops at distance k, so
    edit interactions cannot deflate the realized error rate.
    Deterministic given the generator state.
    """
    if not 0.0 <= target_cer <= 1.0:
        raise ValueError("target_cer must lie in [0, 1]")
    n = len(text)
    if n == 0 or target_cer == 0.0:
        return text
    k = int(rng.binomial(n, target_cer))
    if k == 0:
        return text
    out = text
    distance = 0
    for _ in range(20 * k + 40):
        if distance >= k:
            break
        candidate = _apply_one_edit(out, rng)
        cand_distance = levenshtein(text, candidate).distance
        if cand_distance > distance and candidate:
            out, distance = candidate, cand_distance
    return out


def _apply_one_edit(text: str, rng: np.random.Generator) -> str:
    op = int(rng.integers(3))
    if op == 1 or not text:  # insertion (the only op valid on empty text)
        i = int(rng.integers(len(text) + 1))
        anchor = text[i] if i < len(text) else (text[-1] if text else " ")
        return text[:i] + _random_other_char(anchor, rng) + text[i:]
    i = int(rng.integers(len(text)))
    if op == 0:  # substitution
        return text[:i] + _random_other_char(text[i], rng) + text[i + 1 :]
    return text[:i] + text[i + 1 :]  # deletion


def _random_other_char(original: str, rng: np.random.Generator) -> str:
    c = SYMBOLS[rng.integers(len(SYMBOLS) - 1)]
    if c == original:
        c = SYMBOLS[len(SYMBOLS) - 1]
    return c
