"""Shared CTC training step used by seed training and recalibration.

Batches are padded to the longest trial; per-trial CTC losses and
log-probability gradients are computed on the unpadded slice, and padded
frames carry zero gradient so they contribute nothing to BPTT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ctc, net


@dataclass
class LabeledTrial:
    features: np.ndarray
    label: str
    day: int


def pad_batch(features_list: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([f.shape[0] for f in features_list], dtype=np.int64)
    T = int(lengths.max())
    C = features_list[0].shape[1]
    out = np.zeros((len(features_list), T, C))
    for i, f in enumerate(features_list):
        out[i, : f.shape[0]] = f
    return out, lengths


def batch_loss_and_grads(
    model: net.DecoderModel,
    batch: list[LabeledTrial],
    normalize_by_length: bool = False,
    compute_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None, int]:
    """Mean CTC loss over the batch and summed parameter gradients.

    Trials are grouped by day so each goes through its own affine layer.
    Trials whose label cannot be aligned within their frame budget are
    skipped; the skipped count is returned. Gradients are scaled so the
    objective is the batch mean loss.
    """
    by_day: dict[int, list[LabeledTrial]] = {}
    for item in batch:
        by_day.setdefault(item.day, []).append(item)

    total_loss = 0.0
    n_used = 0
    n_skipped = 0
    grads: dict[str, np.ndarray] | None = None
    pending: list[tuple[dict, np.ndarray]] = []

    for day, items in sorted(by_day.items()):
        padded, lengths = pad_batch([it.features for it in items])
        if compute_grads:
            log_probs, cache = net.forward_batch(model, day, padded, return_cache=True)
        else:
            log_probs = net.forward_batch(model, day, padded)
            cache = None
        grad_lp = np.zeros_like(log_probs)
        results = ctc.ctc_loss_batch(
            log_probs, lengths, [it.label for it in items], compute_grad=compute_grads
        )
        for i, (item, res) in enumerate(zip(items, results)):
            if res is None:
                n_skipped += 1
                continue
            scale = 1.0 / max(1, len(item.label)) if normalize_by_length else 1.0
            total_loss += res.neg_log_likelihood * scale
            if compute_grads:
                grad_lp[i, : lengths[i]] = res.grad_log_probs * scale
            n_used += 1
        if compute_grads:
            pending.append((cache, grad_lp))

    if n_used == 0:
        return float("nan"), None, n_skipped
    mean_loss = total_loss / n_used

    if compute_grads:
        for cache, grad_lp in pending:
            day_grads = net.backward_batch(model, cache, grad_lp / n_used)
            if grads is None:
                grads = day_grads
            else:
                for k, v in day_grads.items():
                    if k in grads:
                        grads[k] = grads[k] + v
                    else:
                        grads[k] = v
    return float(mean_loss), grads, n_skipped


def filter_trainable(
    grads: dict[str, np.ndarray],
    day: int,
    freeze_backbone: bool,
    train_all_day_layers: bool = False,
) -> dict[str, np.ndarray]:
    """Keep only the gradients the recalibration run may apply.

    Default: the current day's affine layer plus the shared backbone and
    head; with ``freeze_backbone`` only the day layer; with
    ``train_all_day_layers`` every day layer stays trainable.
    """
    out = {}
    for key, g in grads.items():
        if key.startswith("day"):
            if train_all_day_layers or key.startswith(f"day{day}."):
                out[key] = g
        elif not freeze_backbone:
            out[key] = g
    return out
