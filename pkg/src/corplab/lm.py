"""Backoff trigram word model and CTC prefix beam search with shallow fusion.

The trigram model uses add-k smoothing with interpolation backoff:

    P1(w)      = (c(w) + k) / (N + kV)
    P2(w|v)    = (c(v,w) + kV * P1(w)) / (c(v,.) + kV)
    P3(w|u,v)  = (c(u,v,w) + kV * P2(w|v)) / (c(u,v,.) + kV)

where context counts are marginals over predicted in-vocabulary words, so
every conditional distribution sums to exactly one over the vocabulary.
Unseen contexts degrade gracefully: a zero context count reduces the
expression to the next-lower order.

Beam search follows the usual prefix construction with separate blank /
non-blank path probabilities per prefix; the word LM is fused whenever a
space completes a word, plus once for the trailing word at the end.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .text import BLANK, LETTERS, SPACE, SYMBOLS

BOS = "<s>"

_WORD_CHARS = set(LETTERS + "'")
_TEXT_CHARS = set(SYMBOLS)


def normalize_word(token: str) -> str:
    """Keep letters and apostrophes only, lowercased."""
    return "".join(c for c in token.lower() if c in _WORD_CHARS)


def normalize_line(line: str) -> list[str]:
    """Line -> list of normalized word tokens (empty tokens dropped)."""
    kept = "".join(c if c in _TEXT_CHARS else " " for c in line.lower())
    return [w for w in (normalize_word(t) for t in kept.split(" ")) if w]


@dataclass
class TrigramModel:
    vocabulary: list[str]
    k: float
    oov_penalty: float
    unigrams: dict[str, int]
    bigrams: dict[tuple[str, str], int]
    trigrams: dict[tuple[str, str, str], int]
    total_tokens: int = 0
    bigram_ctx: dict[str, int] = field(default_factory=dict)
    trigram_ctx: dict[tuple[str, str], int] = field(default_factory=dict)
    vocab_index: dict[str, int] = field(default_factory=dict)
    word_prefixes: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if not self.vocab_index:
            self.vocab_index = {w: i for i, w in enumerate(self.vocabulary)}
        if self.total_tokens == 0:
            self.total_tokens = sum(self.unigrams.values())
        if not self.bigram_ctx:
            ctx1: dict[str, int] = {}
            for (v, w), c in self.bigrams.items():
                ctx1[v] = ctx1.get(v, 0) + c
            self.bigram_ctx = ctx1
        if not self.trigram_ctx:
            ctx2: dict[tuple[str, str], int] = {}
            for (u, v, w), c in self.trigrams.items():
                ctx2[(u, v)] = ctx2.get((u, v), 0) + c
            self.trigram_ctx = ctx2
        if not self.word_prefixes:
            for w in self.vocabulary:
                for i in range(1, len(w) + 1):
                    self.word_prefixes.add(w[:i])

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def is_word_prefix(self, partial: str) -> bool:
        return partial in self.word_prefixes


def train_trigram(
    corpus: Iterable[str] | str,
    vocab_size_cap: int = 4000,
    k: float = 0.1,
    oov_penalty: float = -12.0,
) -> TrigramModel:
    """Count-based trigram model from plain text, one sentence per line."""
    if isinstance(corpus, str):
        lines = corpus.splitlines()
    else:
        lines = list(corpus)
    token_lines = [normalize_line(line) for line in lines]
    token_lines = [t for t in token_lines if t]
    if not token_lines:
        raise ValueError("corpus is empty after normalization")

    freq = Counter(w for toks in token_lines for w in toks)
    # most frequent first; alphabetical among ties for reproducibility
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    vocab = sorted(w for w, _ in ranked[:vocab_size_cap])
    in_vocab = set(vocab)

    unigrams: dict[str, int] = {}
    bigrams: dict[tuple[str, str], int] = {}
    trigrams: dict[tuple[str, str, str], int] = {}
    for toks in token_lines:
        u, v = BOS, BOS
        for w in toks:
            if w in in_vocab:
                unigrams[w] = unigrams.get(w, 0) + 1
                bigrams[(v, w)] = bigrams.get((v, w), 0) + 1
                trigrams[(u, v, w)] = trigrams.get((u, v, w), 0) + 1
            u, v = v, w
    return TrigramModel(
        vocabulary=vocab,
        k=k,
        oov_penalty=oov_penalty,
        unigrams=unigrams,
        bigrams=bigrams,
        trigrams=trigrams,
    )


def lm_prob(model: TrigramModel, history: Sequence[str], word: str) -> float:
    """Conditional probability with trigram -> bigram -> unigram backoff.

    Returns 0.0 for out-of-vocabulary words (callers use
    ``model.oov_penalty`` as the log score instead).
    """
    if word not in model.vocab_index:
        return 0.0
    u, v = history[-2] if len(history) >= 2 else BOS, history[-1] if history else BOS
    kv = model.k * model.vocab_size
    p1 = (model.unigrams.get(word, 0) + model.k) / (model.total_tokens + kv)
    c_v = model.bigram_ctx.get(v, 0)
    p2 = (model.bigrams.get((v, word), 0) + kv * p1) / (c_v + kv)
    c_uv = model.trigram_ctx.get((u, v), 0)
    return (model.trigrams.get((u, v, word), 0) + kv * p2) / (c_uv + kv)


def lm_logprob(model: TrigramModel, history: Sequence[str], word: str) -> float:
    """Log conditional probability; OOV words get the flat penalty."""
    p = lm_prob(model, history, word)
    if p == 0.0:
        return model.oov_penalty
    return math.log(p)


def sentence_logprob(model: TrigramModel, text_words: Sequence[str]) -> float:
    """Sum of per-word log scores with BOS-padded history."""
    hist = (BOS, BOS)
    total = 0.0
    for w in text_words:
        w = normalize_word(w)
        if not w:
            continue
        total += lm_logprob(model, hist, w)
        hist = (hist[1], w)
    return total


def write_lm(model: TrigramModel, path) -> None:
    """Sorted n-gram text serialization.

    Each line holds the n-gram order, the tokens, the count, and the
    interpolation weight applied when backing off *from* that n-gram used
    as a context (blank for trigrams, which have no continuation).
    """
    kv = model.k * model.vocab_size
    with open(path, "w", encoding="utf-8") as f:
        f.write("corplab-trigram 1\n")
        f.write(f"k {model.k!r}\n")
        f.write(f"oov_penalty {model.oov_penalty!r}\n")
        f.write(f"vocab {model.vocab_size}\n")
        for w in model.vocabulary:
            f.write(f"v {w}\n")
        for w in sorted(model.unigrams):
            bw = kv / (model.bigram_ctx.get(w, 0) + kv)
            f.write(f"1 {w} {model.unigrams[w]} {bw!r}\n")
        for (v, w) in sorted(model.bigrams):
            bw = kv / (model.trigram_ctx.get((v, w), 0) + kv)
            f.write(f"2 {v} {w} {model.bigrams[(v, w)]} {bw!r}\n")
        for (u, v, w) in sorted(model.trigrams):
            f.write(f"3 {u} {v} {w} {model.trigrams[(u, v, w)]}\n")


def read_lm(path) -> TrigramModel:
    vocab: list[str] = []
    unigrams: dict[str, int] = {}
    bigrams: dict[tuple[str, str], int] = {}
    trigrams: dict[tuple[str, str, str], int] = {}
    k = 0.1
    oov = -12.0
    with open(path, "r", encoding="utf-8") as f:
        magic = f.readline().strip()
        if magic != "corplab-trigram 1":
            raise ValueError(f"unrecognized language model file {path}")
        for line in f:
            parts = line.rstrip("\n").split(" ")
            tag = parts[0]
            if tag == "k":
                k = float(parts[1])
            elif tag == "oov_penalty":
                oov = float(parts[1])
            elif tag == "vocab":
                continue
            elif tag == "v":
                vocab.append(parts[1])
            elif tag == "1":
                unigrams[parts[1]] = int(parts[2])
            elif tag == "2":
                bigrams[(parts[1], parts[2])] = int(parts[3])
            elif tag == "3":
                trigrams[(parts[1], parts[2], parts[3])] = int(parts[4])
    return TrigramModel(
        vocabulary=vocab, k=k, oov_penalty=oov,
        unigrams=unigrams, bigrams=bigrams, trigrams=trigrams,
    )


@dataclass
class BeamHypothesis:
    """One prefix under construction during beam search.

    ``partial_charge`` is a pessimistic stand-in for the LM score of the
    trailing incomplete word: zero while the partial can still grow into
    a vocabulary word, the OOV penalty once it cannot. Charging it during
    ranking stops hypotheses from dodging word costs by never emitting
    the space.
    """

    prefix: tuple[int, ...]
    log_p_blank: float
    log_p_nonblank: float
    lm_state: tuple[str, str]
    lm_total: float
    word_count: int
    partial_charge: float = 0.0

    def acoustic(self) -> float:
        return np.logaddexp(self.log_p_blank, self.log_p_nonblank)

    def fused(self, lm_weight: float, bonus: float) -> float:
        return float(
            self.acoustic()
            + lm_weight * (self.lm_total + self.partial_charge)
            + bonus * self.word_count
        )


@dataclass
class NBestList:
    """Hypotheses sorted by descending fused score; transcripts distinct."""

    hypotheses: list[tuple[str, float]]

    def top(self) -> str:
        return self.hypotheses[0][0]


def _score_word(
    model: TrigramModel | None, state: tuple[str, str], raw_word: str
) -> tuple[float, tuple[str, str], int]:
    """LM increment, next LM state, and word-count increment for a token."""
    w = normalize_word(raw_word)
    if not w:
        return 0.0, state, 0
    if model is None:
        return 0.0, (state[1], w), 1
    return lm_logprob(model, state, w), (state[1], w), 1


def prefix_beam_search(
    log_probs: np.ndarray,
    model: TrigramModel | None,
    beam_width: int = 64,
    lm_weight: float = 0.8,
    word_insertion_bonus: float = 0.5,
    n: int = 10,
    blank: int = BLANK,
    prune_logp: float | None = None,
) -> NBestList:
    """Top-n transcripts by acoustic+LM fused score.

    Exact (equal to exhaustive marginalized decoding) when ``beam_width``
    exceeds the number of reachable prefixes and ``prune_logp`` is None.
    ``prune_logp`` skips per-frame symbol candidates below the threshold
    for speed; it is an approximation knob, off by default.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    T, K = lp.shape if lp.size else (0, 0)
    root = BeamHypothesis((), 0.0, -np.inf, (BOS, BOS), 0.0, 0)
    beams: dict[tuple[int, ...], BeamHypothesis] = {(): root}

    for t in range(T):
        row = lp[t]
        if prune_logp is not None:
            candidates = [c for c in range(K) if row[c] >= prune_logp]
            if blank not in candidates:
                candidates.append(blank)
        else:
            candidates = range(K)
        nxt: dict[tuple[int, ...], BeamHypothesis] = {}

        def bucket(prefix: tuple[int, ...], source: BeamHypothesis) -> BeamHypothesis:
            # The LM fields are pure functions of the prefix, so hypotheses
            # merging into the same prefix always agree on them.
            hyp = nxt.get(prefix)
            if hyp is None:
                lm_state, lm_total, wc = source.lm_state, source.lm_total, source.word_count
                charge = source.partial_charge
                if prefix != source.prefix:
                    if prefix[-1] == SPACE:
                        start = _last_space(prefix[:-1])
                        raw = "".join(SYMBOLS[i] for i in prefix[start:-1])
                        inc, lm_state, dw = _score_word(model, source.lm_state, raw)
                        lm_total += inc
                        wc += dw
                        charge = 0.0
                    elif model is not None:
                        start = _last_space(prefix)
                        partial = normalize_word(
                            "".join(SYMBOLS[i] for i in prefix[start:])
                        )
                        charge = (
                            0.0
                            if not partial or model.is_word_prefix(partial)
                            else model.oov_penalty
                        )
                hyp = BeamHypothesis(
                    prefix, -np.inf, -np.inf, lm_state, lm_total, wc, charge
                )
                nxt[prefix] = hyp
            return hyp

        for hyp in beams.values():
            pb, pnb = hyp.log_p_blank, hyp.log_p_nonblank
            total = np.logaddexp(pb, pnb)
            last = hyp.prefix[-1] if hyp.prefix else -1
            for c in candidates:
                p_c = row[c]
                if c == blank:
                    tgt = bucket(hyp.prefix, hyp)
                    tgt.log_p_blank = np.logaddexp(tgt.log_p_blank, total + p_c)
                elif c == last:
                    # repeat extends the non-blank path of the same prefix...
                    tgt = bucket(hyp.prefix, hyp)
                    tgt.log_p_nonblank = np.logaddexp(tgt.log_p_nonblank, pnb + p_c)
                    # ...while a blank-separated repeat grows the prefix
                    ext = bucket(hyp.prefix + (c,), hyp)
                    ext.log_p_nonblank = np.logaddexp(ext.log_p_nonblank, pb + p_c)
                else:
                    ext = bucket(hyp.prefix + (c,), hyp)
                    ext.log_p_nonblank = np.logaddexp(ext.log_p_nonblank, total + p_c)

        ranked = sorted(
            nxt.values(),
            key=lambda h: (-h.fused(lm_weight, word_insertion_bonus), h.prefix),
        )
        beams = {h.prefix: h for h in ranked[:beam_width]}

    finals: list[tuple[str, float]] = []
    for hyp in beams.values():
        score = hyp.acoustic()
        lm_total, wc = hyp.lm_total, hyp.word_count
        start = _last_space(hyp.prefix)
        trailing = "".join(SYMBOLS[i] for i in hyp.prefix[start:])
        inc, _, dw = _score_word(model, hyp.lm_state, trailing)
        lm_total += inc
        wc += dw
        fused = float(score + lm_weight * lm_total + word_insertion_bonus * wc)
        finals.append(("".join(SYMBOLS[i] for i in hyp.prefix), fused))

    finals.sort(key=lambda pair: (-pair[1], pair[0]))
    return NBestList(finals[:n])


def _last_space(prefix: tuple[int, ...]) -> int:
    for i in range(len(prefix) - 1, -1, -1):
        if prefix[i] == SPACE:
            return i + 1
    return 0


Rescorer = Callable[[list[tuple[str, float]]], list[float]]


def identity_rescorer(hypotheses: list[tuple[str, float]]) -> list[float]:
    """Keep the fused-score order."""
    return [score for _, score in hypotheses]


def make_length_normalized_rescorer(model: TrigramModel) -> Rescorer:
    """Re-rank by per-word trigram log-probability of the full transcript."""

    def rescorer(hypotheses: list[tuple[str, float]]) -> list[float]:
        out = []
        for text, _ in hypotheses:
            toks = [w for w in text.split(" ") if w]
            out.append(sentence_logprob(model, toks) / max(1, len(toks)))
        return out

    return rescorer


def rescore(nbest: NBestList, rescorer: Rescorer | None = None) -> str:
    """Apply the pluggable rescorer and return the top transcript."""
    if not nbest.hypotheses:
        raise ValueError("cannot rescore an empty n-best list")
    if rescorer is None:
        return nbest.hypotheses[0][0]
    scores = rescorer(nbest.hypotheses)
    order = sorted(
        range(len(scores)), key=lambda i: (-scores[i], nbest.hypotheses[i][0])
    )
    return nbest.hypotheses[order[0]][0]
