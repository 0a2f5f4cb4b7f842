"""Experiment orchestration: seed training, longitudinal runs, sweeps, logs.

Reproducibility contract: every stochastic path draws from a named stream
derived from ``(seed, stream id[, day])``, and the streams consumed by a
method never depend on which method is running, so paired-seed
comparisons (frozen vs recalibrated vs supervised) see identical data and
identical decode-order randomness. Each run directory is named by the
hash of the fully-resolved config.
"""

from __future__ import annotations

import csv
import functools
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines, corpus, ctc, lm, net, recal, synth
from .config import ExperimentConfig, config_hash, to_dict
from .text import cer, wer
from .training import LabeledTrial, batch_loss_and_grads

# stream ids; never renumber (would silently change every result)
STREAM_DATA = 0
STREAM_SEED_TRAIN = 1
STREAM_RECAL = 2
STREAM_SENSITIVITY = 3
STREAM_BUFFER_SEED = 4


def stream(seed: int, *ids: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *ids]))


class SeedTrainingFailed(RuntimeError):
    """Seed training missed the sanity bar; the simulator is mis-tuned."""


@functools.lru_cache(maxsize=4)
def default_lm(vocab_size_cap: int = 4000, add_k: float = 0.1, oov_penalty: float = -12.0):
    return lm.train_trigram(
        corpus.default_corpus_text(),
        vocab_size_cap=vocab_size_cap,
        k=add_k,
        oov_penalty=oov_penalty,
    )


@dataclass
class Bench:
    """Everything one seed's experiments share: data, LM, seed decoder."""

    cfg: ExperimentConfig
    tuning: synth.TuningModel
    online: dict[int, list[synth.TrialRecord]]   # day -> deployment trials
    heldout: dict[int, list[synth.TrialRecord]]  # day -> held-out trials
    lm_model: lm.TrigramModel
    seed_model: net.DecoderModel
    seed_report: dict

    @property
    def seed_days(self) -> list[int]:
        return list(range(self.cfg.data.seed_days))

    @property
    def eval_days(self) -> list[int]:
        d = self.cfg.data
        return list(range(d.seed_days, d.seed_days + d.eval_days))

    def seed_train_trials(self) -> list[synth.TrialRecord]:
        return [t for day in self.seed_days for t in self.online[day]]


def build_dataset(cfg: ExperimentConfig):
    d = cfg.data
    rng = stream(cfg.run.seed, STREAM_DATA)
    tuning = synth.build_tuning(
        d.channels,
        d.latent_rank,
        d.char_duration,
        rng,
        baseline_rate=d.baseline_rate,
        amplitude=d.amplitude,
        noise_model=d.noise_model,
        gaussian_noise_std=d.gaussian_noise_std,
        timing_jitter=d.timing_jitter,
    )
    days = d.seed_days + d.eval_days
    seed_spd = d.seed_sentences_per_day or d.sentences_per_day
    counts = [seed_spd + d.heldout_per_day] * d.seed_days + [
        d.sentences_per_day + d.heldout_per_day
    ] * d.eval_days
    pool = corpus.generate_sentences(
        sum(counts), rng, min_words=d.min_words, max_words=d.max_words
    )
    trials = synth.generate_dataset(tuning, d.drift_profile(), days, counts, pool, rng)
    online: dict[int, list] = {}
    heldout: dict[int, list] = {}
    for day in range(days):
        day_trials = [t for t in trials if t.day == day]
        keep = seed_spd if day < d.seed_days else d.sentences_per_day
        online[day] = day_trials[:keep]
        heldout[day] = day_trials[keep:]
    return tuning, online, heldout


def pooled_rates(records) -> tuple[float, float]:
    """(pooled CER, pooled WER) over decode records."""
    c_num = sum(cer(r.reference, r.raw_decoded).distance for r in records)
    c_den = sum(len(r.reference) for r in records)
    w_num = sum(wer(r.reference, r.decoded).distance for r in records)
    w_den = sum(len([w for w in r.reference.split(" ") if w]) for r in records)
    return c_num / max(1, c_den), w_num / max(1, w_den)


def evaluate_model(model, day, trials, lm_model, rcfg) -> tuple[float, float]:
    """(pooled raw CER, pooled LM-decoded WER) of ``model`` on ``trials``."""
    recs = []
    for t in trials:
        decoded, raw = recal.decode_trial(model, day, t.features, lm_model, rcfg)
        recs.append(
            recal.DecodeRecord(
                day=t.day, sentence_index=t.sentence_index, snapshot_version=model.version,
                decoded=decoded, raw_decoded=raw, pseudo_label="", reference=t.transcript,
                cer=cer(t.transcript, raw).rate, wer=wer(t.transcript, decoded).rate,
            )
        )
    return pooled_rates(recs)


def train_seed(cfg: ExperimentConfig, dataset=None, quiet: bool = True, train_days=None):
    """Train the multi-day seed decoder; returns (model, report).

    Day-specific layers for every seed day plus the shared backbone train
    jointly under CTC with Adam; training stops early once the held-out
    greedy CER reaches the configured target or stops improving.
    ``train_days`` restricts training to a subset of the seed days
    (used by data-needs sweeps).
    """
    tuning, online, heldout = dataset if dataset is not None else build_dataset(cfg)
    d, m = cfg.data, cfg.model
    days_used = sorted(train_days) if train_days is not None else list(range(d.seed_days))
    rng = stream(cfg.run.seed, STREAM_SEED_TRAIN)
    model = net.init_model(d.channels, m.hidden_size, m.num_layers, rng, first_day=days_used[0])
    for day in days_used[1:]:
        model = net.add_day_layer(model, day)

    train_items = [
        LabeledTrial(t.features, t.transcript, t.day)
        for day in days_used
        for t in online[day]
    ]
    held = [t for day in days_used for t in heldout[day]]
    net.set_input_stats(model, np.concatenate([it.features for it in train_items], axis=0))
    opt = net.OptimizerState(learning_rate=m.seed_learning_rate, rule="adam")
    seed_aug = net.AugmentationConfig(m.seed_white_noise_std, m.seed_offset_std)

    def heldout_cer(mod) -> float:
        num = den = 0
        for t in held:
            hyp = ctc.greedy_decode(net.forward(mod, t.day, t.features))
            rep = cer(t.transcript, hyp)
            num += rep.distance
            den += rep.reference_length
        return num / max(1, den)

    history = []
    best = (float("inf"), None)
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(m.seed_epochs):
        order = rng.permutation(len(train_items))
        loss = float("nan")
        for i in range(0, len(train_items), m.seed_batch_size):
            batch = [
                LabeledTrial(net.augment(train_items[j].features, seed_aug, rng),
                             train_items[j].label, train_items[j].day)
                for j in order[i : i + m.seed_batch_size]
            ]
            loss, grads, _ = batch_loss_and_grads(model, batch)
            net.sgd_step(model, net.clip_grads(grads, 10.0), opt)
        if (epoch + 1) % 5 == 0 or epoch == m.seed_epochs - 1:
            hc = heldout_cer(model)
            history.append({"epoch": epoch + 1, "loss": float(loss), "heldout_cer": hc})
            if not quiet:
                print(f"seed epoch {epoch + 1}: loss={loss:.2f} heldout CER={hc:.2%}")
            if hc < best[0] - 1e-4:
                best = (hc, net.clone_model(model))
                stale = 0
            else:
                stale += 1
            if hc <= m.seed_target_cer or stale >= m.seed_patience:
                break
    if best[1] is not None and best[0] < heldout_cer(model):
        model = best[1]
    final_cer = heldout_cer(model)
    report = {
        "heldout_cer": final_cer,
        "epochs_run": history[-1]["epoch"] if history else 0,
        "wall_time": time.perf_counter() - t0,
        "history": history,
    }
    if final_cer > m.seed_abort_cer:
        raise SeedTrainingFailed(
            f"seed decoder held-out CER {final_cer:.1%} exceeds the "
            f"{m.seed_abort_cer:.0%} sanity bar; the generator and decoder "
            "sizes are mis-tuned"
        )
    return model, report


def build_bench(cfg: ExperimentConfig, quiet: bool = True) -> Bench:
    dataset = build_dataset(cfg)
    lm_model = default_lm(cfg.lm.vocab_size_cap, cfg.lm.add_k, cfg.lm.oov_penalty)
    model, report = train_seed(cfg, dataset=dataset, quiet=quiet)
    tuning, online, heldout = dataset
    return Bench(cfg, tuning, online, heldout, lm_model, model, report)


@dataclass
class RunResult:
    method: str
    rows: list[dict]
    records: list[recal.DecodeRecord]
    events: list[recal.RecalEvent]
    summary: dict = field(default_factory=dict)


def _fresh_buffer(bench: Bench, rcfg: recal.RecalConfig) -> recal.ReplayBuffer:
    buf = recal.ReplayBuffer(rcfg.buffer_capacity, rcfg.new_day_fraction)
    recal.seed_buffer(
        buf, bench.seed_train_trials(), stream(bench.cfg.run.seed, STREAM_BUFFER_SEED)
    )
    return buf


def _result_rows(method, records, events, include_timing: bool = False) -> list[dict]:
    """Per-sentence result rows.

    Measured wall times live in the JSONL event log and the summary;
    the CSV's wall_time column is zeroed unless explicitly requested so
    that equal configs produce byte-identical CSV files.
    """
    ev = {(e.day, e.sentence_index): e for e in events}
    rows = []
    for r in records:
        e = ev.get((r.day, r.sentence_index))
        rows.append(
            {
                "method": method,
                "day": r.day,
                "sentence_index": r.sentence_index,
                "cer": r.cer,
                "wer": r.wer,
                "steps": e.steps_taken if e else 0,
                "loss": e.final_loss if e else float("nan"),
                "wall_time": (e.wall_time if e else 0.0) if include_timing else 0.0,
            }
        )
    return rows


def run_longitudinal(
    cfg: ExperimentConfig, bench: Bench | None = None, include_timing: bool = False
) -> RunResult:
    """Simulate the configured method across every evaluation day."""
    bench = bench or build_bench(cfg)
    method = cfg.run.method
    rcfg = cfg.recal.recal_config(cfg.lm.decode_config())
    records: list[recal.DecodeRecord] = []
    events: list[recal.RecalEvent] = []

    if method == "frozen":
        model = net.clone_model(bench.seed_model)
        for day in bench.eval_days:
            records.extend(
                baselines.run_frozen(model, bench.online[day], bench.lm_model, rcfg)
            )
    elif method == "fa_stabilizer":
        model = net.clone_model(bench.seed_model)
        ref_day = 0
        fa_ref = baselines.fit_fa(
            np.concatenate([t.features for t in bench.online[ref_day]], axis=0),
            bench.cfg.fa_latent_dim(),
        )
        for day in bench.eval_days:
            records.extend(
                baselines.run_fa_day(
                    model, ref_day, fa_ref, bench.online[day], bench.lm_model, rcfg,
                    refit_every=cfg.run.fa_refit_every,
                )
            )
    elif method in ("corp", "ground_truth"):
        model = net.clone_model(bench.seed_model)
        buf = _fresh_buffer(bench, rcfg)
        label_fn = (
            (lambda trial, decoded: trial.transcript) if method == "ground_truth" else None
        )
        for day in bench.eval_days:
            model = net.add_day_layer(model, day)
            buf.start_new_day()
            day_rng = stream(cfg.run.seed, STREAM_RECAL, day)
            model, recs, evs = recal.run_day(
                model, day, bench.online[day], bench.lm_model, rcfg, buf, day_rng,
                label_fn=label_fn, label_source="ground_truth",
            )
            records.extend(recs)
            events.extend(evs)
    else:
        raise ValueError(f"unknown method {method!r}")

    rows = _result_rows(method, records, events, include_timing=include_timing)
    pooled_c, pooled_w = pooled_rates(records)
    by_day: dict[int, list] = {}
    for r in records:
        by_day.setdefault(r.day, []).append(r)
    day_summary = {
        day: {
            "cer_pooled": pooled_rates(rs)[0],
            "wer_pooled": pooled_rates(rs)[1],
            "cer_sentence_mean": float(np.mean([r.cer for r in rs])),
        }
        for day, rs in sorted(by_day.items())
    }
    summary = {
        "method": method,
        "cer_pooled": pooled_c,
        "wer_pooled": pooled_w,
        "cer_sentence_mean": float(np.mean([r.cer for r in records])),
        "wer_sentence_mean": float(np.mean([r.wer for r in records])),
        "per_day": day_summary,
        "divergence_events": sum(1 for e in events if e.stopped_by == "diverged"),
        "mean_recal_wall_time": float(np.mean([e.wall_time for e in events])) if events else 0.0,
        "mean_recal_steps": float(np.mean([e.steps_taken for e in events])) if events else 0.0,
    }
    return RunResult(method, rows, records, events, summary)


def offline_day_recal(
    bench: Bench,
    day: int,
    n_sentences: int,
    mode: str,
    rcfg: recal.RecalConfig,
    corrupt_level: float = 0.0,
) -> tuple[net.DecoderModel, list[recal.RecalEvent]]:
    """Recalibrate on the first ``n_sentences`` of ``day`` and return the model.

    ``mode``: "pseudo" uses the decoder+LM pseudo-labels, "ground_truth"
    the real transcripts, "corrupted" the transcripts passed through the
    corruption channel at ``corrupt_level``.
    """
    model = net.add_day_layer(net.clone_model(bench.seed_model), day)
    if n_sentences == 0:
        return model, []
    buf = _fresh_buffer(bench, rcfg)
    buf.start_new_day()
    day_rng = stream(bench.cfg.run.seed, STREAM_RECAL, day)
    if mode == "pseudo":
        label_fn = None
    elif mode == "ground_truth":
        label_fn = lambda trial, decoded: trial.transcript  # noqa: E731
    elif mode == "corrupted":
        corrupt_rng = stream(bench.cfg.run.seed, STREAM_SENSITIVITY, day)
        from .text import corrupt

        label_fn = lambda trial, decoded: corrupt(  # noqa: E731
            trial.transcript, corrupt_level, corrupt_rng
        )
    else:
        raise ValueError(f"unknown mode {mode!r}")
    model, _, events = recal.run_day(
        model, day, bench.online[day][:n_sentences], bench.lm_model, rcfg, buf,
        day_rng, label_fn=label_fn,
        label_source="ground_truth" if mode == "ground_truth" else "corrupted",
    )
    return model, events


def sweep_recal_sentences(cfg: ExperimentConfig, counts, bench: Bench | None = None):
    """WER on a drifted day's held-out tail vs number of training sentences."""
    bench = bench or build_bench(cfg)
    rcfg = cfg.recal.recal_config(cfg.lm.decode_config())
    day = bench.eval_days[len(bench.eval_days) // 2]
    held = bench.heldout[day]
    rows = []
    for n in counts:
        model, _ = offline_day_recal(bench, day, n, "pseudo", rcfg)
        c, w = evaluate_model(model, day, held, bench.lm_model, rcfg)
        rows.append({"sentences": n, "cer": c, "wer": w})
    gt_model, _ = offline_day_recal(
        bench, day, len(bench.online[day]), "ground_truth", rcfg
    )
    gt_c, gt_w = evaluate_model(gt_model, day, held, bench.lm_model, rcfg)
    return {"day": day, "rows": rows, "ground_truth": {"cer": gt_c, "wer": gt_w}}


def run_sensitivity(cfg: ExperimentConfig, cer_levels, bench: Bench | None = None):
    """Recalibrated raw CER vs injected pseudo-label error rate."""
    bench = bench or build_bench(cfg)
    rcfg = cfg.recal.recal_config(cfg.lm.decode_config())
    day = bench.eval_days[len(bench.eval_days) // 2]
    held = bench.heldout[day]
    n = len(bench.online[day])
    rows = []
    for level in cer_levels:
        model, _ = offline_day_recal(
            bench, day, n, "corrupted", rcfg, corrupt_level=level
        )
        c, w = evaluate_model(model, day, held, bench.lm_model, rcfg)
        rows.append({"pseudo_label_cer": level, "cer": c, "wer": w})
    return {"day": day, "rows": rows}


def sweep_threshold_lr(cfg: ExperimentConfig, thresholds, lrs, bench: Bench | None = None):
    """Mean gradient steps and eval CER per (learning rate, loss threshold)."""
    bench = bench or build_bench(cfg)
    base = cfg.recal.recal_config(cfg.lm.decode_config())
    day = bench.eval_days[len(bench.eval_days) // 2]
    held = bench.heldout[day]
    n = len(bench.online[day])
    rows = []
    for lr_value in lrs:
        for threshold in thresholds:
            rcfg = recal.RecalConfig(
                learning_rate=lr_value,
                loss_threshold=threshold,
                max_steps=base.max_steps,
                batch_size=base.batch_size,
                augmentation=base.augmentation,
                freeze_backbone=base.freeze_backbone,
                use_replay=base.use_replay,
                use_augmentation=base.use_augmentation,
                use_lm_pseudolabels=base.use_lm_pseudolabels,
                buffer_capacity=base.buffer_capacity,
                new_day_fraction=base.new_day_fraction,
                momentum=base.momentum,
                grad_clip=base.grad_clip,
                normalize_loss_by_length=base.normalize_loss_by_length,
                decode=base.decode,
            )
            model, events = offline_day_recal(bench, day, n, "pseudo", rcfg)
            c, _ = evaluate_model(model, day, held, bench.lm_model, rcfg)
            rows.append(
                {
                    "learning_rate": lr_value,
                    "loss_threshold": threshold,
                    "mean_steps": float(np.mean([e.steps_taken for e in events])) if events else 0.0,
                    "cer": c,
                    "diverged": sum(1 for e in events if e.stopped_by == "diverged"),
                }
            )
    return {"day": day, "rows": rows}


ABLATIONS = {
    "corp": {},
    "no_augmentation": {"use_augmentation": False},
    "no_replay": {"use_replay": False},
    "freeze_backbone": {"freeze_backbone": True},
    "no_language_model": {"use_lm_pseudolabels": False},
}


def run_ablations(cfg: ExperimentConfig, bench: Bench | None = None):
    """One longitudinal run per ablation on the same bench (paired data)."""
    bench = bench or build_bench(cfg)
    out = {}
    for name, flags in ABLATIONS.items():
        acfg = ExperimentConfig(**{**to_dataclass_kwargs(cfg)})
        for key, value in flags.items():
            setattr(acfg.recal, key, value)
        acfg.run.method = "corp"
        result = run_longitudinal(acfg, bench=bench)
        out[name] = result
    return out


def to_dataclass_kwargs(cfg: ExperimentConfig) -> dict:
    import copy

    return {name: copy.deepcopy(getattr(cfg, name)) for name in ("data", "model", "lm", "recal", "run")}


def audit_no_leakage(records, events) -> list[str]:
    """Check decode-before-learn ordering from run logs.

    Every decoded sentence must come from a snapshot whose version
    precedes the version produced by any training that saw the sentence.
    Returns human-readable violations (empty means the audit passed).
    """
    violations = []
    ev = {(e.day, e.sentence_index): e for e in events}
    current = None
    for r in records:
        if current is None:
            current = r.snapshot_version
        if r.snapshot_version != current:
            violations.append(
                f"day {r.day} sentence {r.sentence_index}: decoded with version "
                f"{r.snapshot_version}, expected {current}"
            )
        e = ev.get((r.day, r.sentence_index))
        if e is None:
            if not r.skipped_training:
                violations.append(
                    f"day {r.day} sentence {r.sentence_index}: trained but no event logged"
                )
            continue
        if e.version_before != r.snapshot_version:
            violations.append(
                f"day {r.day} sentence {r.sentence_index}: trained from version "
                f"{e.version_before} but decoded with {r.snapshot_version}"
            )
        if e.version_after <= r.snapshot_version:
            violations.append(
                f"day {r.day} sentence {r.sentence_index}: snapshot {r.snapshot_version} "
                f"not strictly before post-training version {e.version_after}"
            )
        current = e.version_after
    return violations


def bootstrap_ci(values, n_resamples: int = 1000, seed: int = 0, level: float = 0.95):
    """Percentile bootstrap CI over per-seed values."""
    vals = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB00]))
    stats = np.array(
        [vals[rng.integers(0, len(vals), len(vals))].mean() for _ in range(n_resamples)]
    )
    lo = float(np.quantile(stats, (1 - level) / 2))
    hi = float(np.quantile(stats, 1 - (1 - level) / 2))
    return float(vals.mean()), lo, hi


RESULT_COLUMNS = ["method", "day", "sentence_index", "cer", "wer", "steps", "loss", "wall_time"]


def write_rows_csv(rows: list[dict], path, columns=None) -> None:
    columns = columns or RESULT_COLUMNS
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_events_jsonl(records, events, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps({"type": "decode", **r.__dict__}, sort_keys=True) + "\n")
        for e in events:
            f.write(json.dumps({"type": "recal", **e.__dict__}, sort_keys=True) + "\n")


def read_events_jsonl(path):
    records, events = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            row = json.loads(line)
            kind = row.pop("type")
            if kind == "decode":
                records.append(recal.DecodeRecord(**row))
            else:
                events.append(recal.RecalEvent(**row))
    return records, events


def run_dir_for(cfg: ExperimentConfig, out_root=None, tag: str = "run"):
    from pathlib import Path

    root = Path(out_root if out_root is not None else cfg.run.out_dir)
    path = root / f"{tag}-{config_hash(cfg)}"
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "config.json", "w", encoding="utf-8") as f:
        json.dump(to_dict(cfg), f, indent=2, sort_keys=True)
    return path
