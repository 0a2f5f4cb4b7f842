"""Connectionist temporal classification: loss, exact gradients, decoding.

The loss marginalizes over every frame-level path that collapses to the
target transcript (merge repeated symbols, then drop blanks). The
forward-backward recursion runs over the blank-extended label sequence
l' = [blank, y1, blank, y2, ..., blank] entirely in log space, in double
precision, so probabilities as small as e^-30 per frame survive long
sequences.

The core is batched (padded over both time and label length, with
per-item masking) because recalibration spends most of its time here;
``ctc_loss`` is the single-trial view of the same code path.

Gradients are returned with respect to the log-probability matrix itself
(treated as free variables); composing with the log-softmax Jacobian is
the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoValidAlignment
from .text import BLANK, decode, encode

NEG_INF = -np.inf


@dataclass
class CtcResult:
    neg_log_likelihood: float
    grad_log_probs: np.ndarray


def min_frames(target: np.ndarray) -> int:
    """Shortest path length that can emit ``target``: one frame per symbol
    plus a separating blank between adjacent repeats."""
    if len(target) == 0:
        return 0
    repeats = int(np.sum(target[1:] == target[:-1]))
    return len(target) + repeats


def _as_indices(target) -> np.ndarray:
    if isinstance(target, str):
        return encode(target)
    return np.asarray(target, dtype=np.int64)


def ctc_loss_batch(
    log_probs: np.ndarray,
    lengths: np.ndarray,
    targets: list,
    blank: int = BLANK,
    compute_grad: bool = True,
) -> list[CtcResult | None]:
    """CTC over a padded batch; ``log_probs`` is (B, T_max, K).

    Items whose target cannot be aligned within their frame budget come
    back as None instead of raising.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    B, T_max, K = lp.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    ys = [_as_indices(t) for t in targets]
    valid = np.array(
        [1 <= lengths[b] and min_frames(ys[b]) <= lengths[b] for b in range(B)]
    )

    S_max = max(2 * len(y) + 1 for y in ys)
    ext = np.full((B, S_max), blank, dtype=np.int64)
    allow = np.zeros((B, S_max), dtype=bool)
    S = np.zeros(B, dtype=np.int64)
    for b, y in enumerate(ys):
        s = 2 * len(y) + 1
        S[b] = s
        ext[b, 1:s:2] = y
        if s > 2:
            allow[b, 2:s] = (ext[b, 2:s] != blank) & (ext[b, 2:s] != ext[b, :s - 2])

    rows = np.arange(B)[:, None]
    emit = np.take_along_axis(lp, ext[:, None, :].repeat(T_max, axis=1), axis=2)
    emit = np.transpose(emit, (1, 0, 2))  # (T, B, S)
    state_mask = np.arange(S_max)[None, :] < S[:, None]
    emit = np.where(state_mask[None, :, :], emit, NEG_INF)

    alpha = np.full((T_max, B, S_max), NEG_INF)
    a0 = np.full((B, S_max), NEG_INF)
    a0[:, 0] = emit[0, :, 0]
    has2 = S >= 2
    a0[has2, 1] = emit[0, has2, 1]
    alpha[0] = a0
    log_p = np.full(B, NEG_INF)
    end1 = np.maximum(S - 1, 0)
    end2 = np.maximum(S - 2, 0)
    done0 = lengths == 1
    if done0.any():
        lp_end = np.logaddexp(a0[rows[:, 0], end1], np.where(S >= 2, a0[rows[:, 0], end2], NEG_INF))
        log_p = np.where(done0 & valid, lp_end, log_p)

    for t in range(1, T_max):
        prev = alpha[t - 1]
        step = np.concatenate([np.full((B, 1), NEG_INF), prev[:, :-1]], axis=1)
        acc = np.logaddexp(prev, step)
        skip = np.concatenate([np.full((B, 2), NEG_INF), prev[:, :-2]], axis=1)
        acc = np.where(allow, np.logaddexp(acc, skip), acc)
        cur = emit[t] + acc
        active = (t < lengths)[:, None]
        alpha[t] = np.where(active, cur, prev)
        finishing = (lengths == t + 1) & valid
        if finishing.any():
            lp_end = np.logaddexp(cur[rows[:, 0], end1], np.where(S >= 2, cur[rows[:, 0], end2], NEG_INF))
            log_p = np.where(finishing, lp_end, log_p)

    results: list[CtcResult | None] = [None] * B
    if not compute_grad:
        for b in range(B):
            if valid[b]:
                results[b] = CtcResult(max(0.0, float(-log_p[b])), np.zeros((lengths[b], K)))
        return results

    # beta runs backward; item b's recursion starts at its own last frame
    beta = np.full((T_max, B, S_max), NEG_INF)
    init = np.full((B, S_max), NEG_INF)
    init[rows[:, 0], end1] = 0.0
    init[has2, end2[has2]] = 0.0
    for t in range(T_max - 1, -1, -1):
        starting = (lengths == t + 1)[:, None]
        if t == T_max - 1:
            beta[t] = np.where(starting, emit[t] + init, NEG_INF)
            continue
        nxt = beta[t + 1]
        step = np.concatenate([nxt[:, 1:], np.full((B, 1), NEG_INF)], axis=1)
        acc = np.logaddexp(nxt, step)
        skip = np.concatenate([nxt[:, 2:], np.full((B, 2), NEG_INF)], axis=1)
        gate = np.concatenate([allow[:, 2:], np.zeros((B, 2), dtype=bool)], axis=1)
        acc = np.where(gate, np.logaddexp(acc, skip), acc)
        cont = emit[t] + acc
        beta[t] = np.where(starting, emit[t] + init, np.where((t < lengths - 1)[:, None], cont, NEG_INF))

    for b in range(B):
        if not valid[b]:
            continue
        T_b, S_b = int(lengths[b]), int(S[b])
        nll = max(0.0, float(-log_p[b]))
        grad = np.zeros((T_b, K))
        if np.isfinite(log_p[b]):
            a = alpha[:T_b, b, :S_b]
            bb = beta[:T_b, b, :S_b]
            e = emit[:T_b, b, :S_b]
            reach = (a > NEG_INF) & (bb > NEG_INF)
            with np.errstate(invalid="ignore"):
                post = np.where(reach, np.exp(a + bb - np.where(reach, e, 0.0) - log_p[b]), 0.0)
            np.add.at(
                grad,
                (np.arange(T_b)[:, None], ext[b, None, :S_b]),
                -post,
            )
        results[b] = CtcResult(nll, grad)
    return results


def ctc_loss(
    log_probs: np.ndarray,
    target: str | np.ndarray,
    blank: int = BLANK,
    compute_grad: bool = True,
) -> CtcResult:
    """Negative log-likelihood of ``target`` under per-frame log distributions.

    ``log_probs`` is T x K with rows normalized in log space. Raises
    :class:`NoValidAlignment` when T is shorter than the minimum path.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2:
        raise ValueError("log_probs must be a T x K matrix")
    T = lp.shape[0]
    y = _as_indices(target)
    if T < 1 or T < min_frames(y):
        raise NoValidAlignment(
            f"no valid alignment: {T} frames cannot emit a {len(y)}-symbol target"
        )
    result = ctc_loss_batch(
        lp[None], np.array([T]), [y], blank=blank, compute_grad=compute_grad
    )[0]
    assert result is not None
    return result


def collapse(path: np.ndarray | list[int], blank: int = BLANK) -> str:
    """Merge repeated adjacent symbols, then remove blanks."""
    out: list[int] = []
    prev = -1
    for c in path:
        c = int(c)
        if c != prev and c != blank:
            out.append(c)
        prev = c
    return decode(out)


def greedy_decode(log_probs: np.ndarray, blank: int = BLANK) -> str:
    """Per-frame argmax followed by path collapse; ties take the lowest index."""
    path = np.argmax(np.asarray(log_probs), axis=1)
    return collapse(path, blank=blank)
