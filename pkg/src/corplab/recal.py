"""Continual online recalibration with pseudo-labels.

The deployment loop per day, sentence by sentence:

1. decode the sentence with the current immutable model snapshot
2. turn the decode into a pseudo-label (LM-corrected beam output, or the
   raw greedy decode when the LM path is ablated)
3. insert (features, pseudo-label) into the replay buffer's new-day
   partition
4. run gradient steps on buffer samples until the batch loss falls below
   the configured threshold (or the step budget runs out), on a private
   clone of the model
5. atomically swap the new snapshot in for the next sentence

Ground-truth transcripts are used for evaluation bookkeeping only; they
never reach a training structure unless the caller explicitly supplies a
ground-truth ``label_fn`` (the supervised baseline). Snapshot versions
recorded in the logs make the no-leakage ordering auditable.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import ctc, lm, net
from .net import AugmentationConfig
from .text import cer, wer
from .training import LabeledTrial, batch_loss_and_grads, filter_trainable


@dataclass(frozen=True)
class DecodeConfig:
    """Beam/fusion settings for LM-corrected decoding."""

    beam_width: int = 64
    lm_weight: float = 0.8
    word_insertion_bonus: float = 0.5
    nbest: int = 10
    prune_logp: float | None = -9.0


@dataclass
class RecalConfig:
    learning_rate: float = 0.05
    loss_threshold: float = 8.0
    max_steps: int = 400
    batch_size: int = 16
    augmentation: AugmentationConfig = AugmentationConfig(0.3, 0.3)
    freeze_backbone: bool = False
    use_replay: bool = True
    use_augmentation: bool = True
    use_lm_pseudolabels: bool = True
    buffer_capacity: int = 256
    new_day_fraction: float = 0.3
    momentum: float = 0.0
    grad_clip: float = 10.0
    divergence_factor: float = 25.0
    normalize_loss_by_length: bool = False
    relabel_buffer: bool = False
    train_all_day_layers: bool = False
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.loss_threshold < 0:
            raise ValueError("loss_threshold must be >= 0")
        if self.max_steps < 1 or self.batch_size < 1:
            raise ValueError("max_steps and batch_size must be >= 1")
        if not 0.0 <= self.new_day_fraction <= 1.0:
            raise ValueError("new_day_fraction must lie in [0, 1]")


@dataclass
class BufferItem:
    features: np.ndarray
    label: str
    day: int
    label_source: str  # "pseudo" | "ground_truth" | "seed"


class ReplayBuffer:
    """Fixed-capacity store with a reserved new-day partition.

    At most ceil(p*M) slots hold current-day items; history items fill the
    remainder. Overflow evicts the oldest entry of the same partition
    (FIFO), and history additionally yields space when the new-day
    partition grows.
    """

    def __init__(self, capacity: int, new_day_fraction: float):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 <= new_day_fraction <= 1.0:
            raise ValueError("new_day_fraction must lie in [0, 1]")
        self.capacity = capacity
        self.new_day_fraction = new_day_fraction
        self.new_day_slots: list[BufferItem] = []
        self.history_slots: list[BufferItem] = []

    @property
    def new_day_cap(self) -> int:
        return math.ceil(self.new_day_fraction * self.capacity)

    def __len__(self) -> int:
        return len(self.new_day_slots) + len(self.history_slots)

    def insert(self, item: BufferItem, is_new_day: bool) -> "ReplayBuffer":
        if not item.label:
            raise ValueError("buffer labels must be non-empty")
        if is_new_day:
            if len(self.new_day_slots) >= self.new_day_cap > 0:
                self.new_day_slots.pop(0)
            if self.new_day_cap > 0:
                self.new_day_slots.append(item)
            while len(self) > self.capacity:
                self.history_slots.pop(0)
        else:
            hist_cap = self.capacity - len(self.new_day_slots)
            while len(self.history_slots) >= hist_cap > 0:
                self.history_slots.pop(0)
            if hist_cap > 0:
                self.history_slots.append(item)
        return self

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[BufferItem]:
        """Stratified draw without replacement: the expected new-day
        fraction equals p when both partitions can supply it."""
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        if batch_size >= len(self):
            return list(self.new_day_slots) + list(self.history_slots)
        want_new = self.new_day_fraction * batch_size
        n_new = int(want_new) + (1 if rng.random() < want_new - int(want_new) else 0)
        n_new = min(n_new, len(self.new_day_slots))
        n_hist = min(batch_size - n_new, len(self.history_slots))
        n_new = min(batch_size - n_hist, len(self.new_day_slots))
        out: list[BufferItem] = []
        if n_new:
            idx = rng.choice(len(self.new_day_slots), size=n_new, replace=False)
            out.extend(self.new_day_slots[i] for i in idx)
        if n_hist:
            idx = rng.choice(len(self.history_slots), size=n_hist, replace=False)
            out.extend(self.history_slots[i] for i in idx)
        return out

    def new_day_items(self) -> list[BufferItem]:
        return list(self.new_day_slots)

    def start_new_day(self) -> None:
        """Demote the previous day's items to history at a day boundary."""
        demoted = self.new_day_slots
        self.new_day_slots = []
        for item in demoted:
            self.insert(item, is_new_day=False)


def buffer_insert(buf: ReplayBuffer, item: BufferItem, is_new_day: bool) -> ReplayBuffer:
    return buf.insert(item, is_new_day)


def sample_batch(
    buf: ReplayBuffer, batch_size: int, rng: np.random.Generator
) -> list[BufferItem]:
    return buf.sample(batch_size, rng)


def seed_buffer(
    buf: ReplayBuffer,
    seed_trials,
    rng: np.random.Generator,
    max_items: int | None = None,
) -> ReplayBuffer:
    """Pre-fill history with a random sample of seed-training trials."""
    cap = buf.capacity - buf.new_day_cap
    n = min(len(seed_trials), cap if max_items is None else min(cap, max_items))
    if n == 0:
        return buf
    idx = rng.choice(len(seed_trials), size=n, replace=False)
    for i in idx:
        t = seed_trials[i]
        buf.insert(BufferItem(t.features, t.transcript, t.day, "seed"), is_new_day=False)
    return buf


@dataclass
class RecalEvent:
    day: int
    sentence_index: int
    steps_taken: int
    final_loss: float
    stopped_by: str  # "threshold" | "max_steps" | "diverged"
    wall_time: float
    version_before: int
    version_after: int


@dataclass
class DecodeRecord:
    day: int
    sentence_index: int
    snapshot_version: int
    decoded: str
    raw_decoded: str
    pseudo_label: str
    reference: str
    cer: float
    wer: float
    skipped_training: bool = False


def decode_trial(
    model: net.DecoderModel,
    day: int,
    features: np.ndarray,
    lm_model: lm.TrigramModel | None,
    cfg: RecalConfig,
    rescorer: lm.Rescorer | None = None,
) -> tuple[str, str]:
    """(final decode, raw greedy decode) for one trial."""
    log_probs = net.forward(model, day, features)
    raw = ctc.greedy_decode(log_probs)
    if not cfg.use_lm_pseudolabels or lm_model is None:
        return raw, raw
    d = cfg.decode
    nbest = lm.prefix_beam_search(
        log_probs,
        lm_model,
        beam_width=d.beam_width,
        lm_weight=d.lm_weight,
        word_insertion_bonus=d.word_insertion_bonus,
        n=d.nbest,
        prune_logp=d.prune_logp,
    )
    return lm.rescore(nbest, rescorer), raw


def make_pseudolabel(
    model: net.DecoderModel,
    day: int,
    features: np.ndarray,
    lm_model: lm.TrigramModel | None,
    cfg: RecalConfig,
    rescorer: lm.Rescorer | None = None,
) -> str:
    """LM-corrected decode (or raw greedy under the no-LM ablation).

    May be empty (all-blank decode); callers must then skip training on
    the trial.
    """
    final, _ = decode_trial(model, day, features, lm_model, cfg, rescorer)
    return final


def recalibrate_once(
    model: net.DecoderModel,
    day: int,
    buf: ReplayBuffer,
    cfg: RecalConfig,
    rng: np.random.Generator,
    sentence_index: int = -1,
) -> tuple[net.DecoderModel, RecalEvent]:
    """Gradient steps on buffer batches until the loss threshold is met.

    Operates on a private clone; the caller swaps the returned snapshot in
    at a sentence boundary. A non-finite loss or gradient, or a loss that
    explodes past ``divergence_factor`` times the first batch loss, rolls
    back to the pre-call snapshot and flags the event as diverged
    (availability over progress). Explosion is judged against the median
    of recent batch losses (robust to batch-difficulty variance) with a
    slow-boil anchor at the first batch loss.
    """
    if len(buf) == 0:
        raise ValueError("replay buffer is empty")
    t0 = time.perf_counter()
    work = net.clone_model(model)
    opt = net.OptimizerState(learning_rate=cfg.learning_rate, momentum=cfg.momentum)
    sample_rng, aug_rng = rng.spawn(2)

    steps = 0
    loss = float("nan")
    recent: list[float] = []
    stopped_by = "max_steps"
    for step in range(1, cfg.max_steps + 1):
        if cfg.use_replay:
            batch_items = buf.sample(cfg.batch_size, sample_rng)
        else:
            pool = buf.new_day_items()
            if not pool:
                pool = buf.sample(min(cfg.batch_size, len(buf)), sample_rng)
            k = min(cfg.batch_size, len(pool))
            idx = sample_rng.choice(len(pool), size=k, replace=False)
            batch_items = [pool[i] for i in idx]
        batch = []
        for item in batch_items:
            feats = item.features
            if cfg.use_augmentation:
                feats = net.augment(feats, cfg.augmentation, aug_rng)
            batch.append(LabeledTrial(feats, item.label, item.day))

        loss, grads, _ = batch_loss_and_grads(
            work, batch, normalize_by_length=cfg.normalize_loss_by_length
        )
        steps = step
        exploded = False
        if recent and cfg.divergence_factor > 0:
            baseline = float(np.median(recent[-5:]))
            exploded = loss > cfg.divergence_factor * max(baseline, 1.0)
        if not np.isfinite(loss) or grads is None or exploded:
            stopped_by = "diverged"
            break
        recent.append(float(loss))
        grads = filter_trainable(
            grads, day, cfg.freeze_backbone, cfg.train_all_day_layers
        )
        grads = net.clip_grads(grads, cfg.grad_clip)
        try:
            net.sgd_step(work, grads, opt)
        except Exception:
            stopped_by = "diverged"
            break
        if loss <= cfg.loss_threshold:
            stopped_by = "threshold"
            break

    if stopped_by == "diverged":
        work = net.clone_model(model)  # roll back; availability over progress

    work.version = model.version + 1
    event = RecalEvent(
        day=day,
        sentence_index=sentence_index,
        steps_taken=steps,
        final_loss=float(loss),
        stopped_by=stopped_by,
        wall_time=time.perf_counter() - t0,
        version_before=model.version,
        version_after=work.version,
    )
    return work, event


def _relabel_new_day(model, day, buf, lm_model, cfg) -> None:
    for item in buf.new_day_slots:
        if item.label_source != "pseudo":
            continue
        fresh = make_pseudolabel(model, day, item.features, lm_model, cfg)
        if fresh:
            item.label = fresh


def run_day(
    model: net.DecoderModel,
    day: int,
    trials,
    lm_model: lm.TrigramModel | None,
    cfg: RecalConfig,
    buf: ReplayBuffer,
    rng: np.random.Generator,
    label_fn=None,
    label_source: str = "external",
    rescorer: lm.Rescorer | None = None,
) -> tuple[net.DecoderModel, list[DecodeRecord], list[RecalEvent]]:
    """Decode-then-learn over one day's trials in order.

    ``label_fn(trial, decoded) -> str`` overrides the training label
    (ground-truth baseline, corrupted-label sensitivity runs); by default
    the decode itself is the pseudo-label. Decoding always happens on a
    snapshot that has never been trained on the sentence being decoded.
    """
    records: list[DecodeRecord] = []
    events: list[RecalEvent] = []
    for trial in trials:
        if trial.day != day:
            raise ValueError(f"trial day {trial.day} does not belong to day {day}")
        decoded, raw = decode_trial(model, day, trial.features, lm_model, cfg, rescorer)
        label = label_fn(trial, decoded) if label_fn is not None else decoded
        source = "pseudo" if label_fn is None else label_source
        rec = DecodeRecord(
            day=day,
            sentence_index=trial.sentence_index,
            snapshot_version=model.version,
            decoded=decoded,
            raw_decoded=raw,
            pseudo_label=label,
            reference=trial.transcript,
            cer=cer(trial.transcript, raw).rate,
            wer=wer(trial.transcript, decoded).rate,
        )
        if label:
            buf.insert(BufferItem(trial.features, label, day, source), is_new_day=True)
        else:
            rec.skipped_training = True
        if len(buf) > 0 and not rec.skipped_training:
            model, event = recalibrate_once(
                model, day, buf, cfg, rng, sentence_index=trial.sentence_index
            )
            events.append(event)
            if cfg.relabel_buffer and event.stopped_by != "diverged" and label_fn is None:
                _relabel_new_day(model, day, buf, lm_model, cfg)
        records.append(rec)
    return model, records, events
