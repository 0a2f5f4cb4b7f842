"""Synthetic nonstationary neural feature generator.

Each character has a low-rank firing-rate template: per-bin mixing
coefficients over a shared nonnegative channel basis. A trial
concatenates the templates of its transcript (with optional timing
jitter), applies the current drift state, and adds observation noise.

Drift has four knobs, all advancing between days plus an offset random
walk within a day:

- additive per-channel offsets (random walk across days and sentences)
- a rotation composed day over day, either of the latent mixing
  coefficients (keeps the modulation subspace fixed, so subspace
  alignment can undo it) or of the full channel space (moves the
  modulation out of the original subspace)
- multiplicative per-channel gains, redrawn each day

Datasets are deterministic given the generator seed and immutable once
produced.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, CorpusExhausted
from .text import SYMBOLS, encode

_N_CHARS = len(SYMBOLS)


@dataclass(frozen=True)
class DriftProfile:
    """Magnitudes of between-day and within-day nonstationarity.

    ``pace_drift_per_day`` is the std of a day-over-day log random walk on
    writing pace (bins per character scale within [0.7, 1.4]); timing
    drift is the one component no static input transform can absorb.
    """

    mean_drift_per_day: float = 0.0
    within_day_drift_rate: float = 0.0
    rotation_angle_per_day: float = 0.0
    rotation_space: str = "latent"
    gain_jitter_std: float = 0.0
    pace_drift_per_day: float = 0.0

    def __post_init__(self) -> None:
        for name in (
            "mean_drift_per_day",
            "within_day_drift_rate",
            "gain_jitter_std",
            "pace_drift_per_day",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.rotation_angle_per_day <= np.pi:
            raise ConfigError("rotation_angle_per_day must lie in [0, pi]")
        if self.rotation_space not in ("latent", "full"):
            raise ConfigError("rotation_space must be 'latent' or 'full'")


@dataclass
class TuningModel:
    """Per-character low-rank rate templates over ``channels`` channels."""

    channels: int
    latent_rank: int
    char_duration: int
    basis: np.ndarray        # (L, C) nonnegative channel patterns
    char_coeffs: np.ndarray  # (n_chars, D, L) nonnegative mixing curves
    baseline: np.ndarray     # (C,) baseline rate
    noise_model: str = "poisson"   # "poisson" | "gaussian" | "none"
    gaussian_noise_std: float = 0.5
    timing_jitter: float = 0.2

    @property
    def templates(self) -> np.ndarray:
        """(n_chars, D, C) rate modulation above baseline."""
        return np.einsum("ndl,lc->ndc", self.char_coeffs, self.basis)


@dataclass
class DriftState:
    offset: np.ndarray
    gains: np.ndarray
    rotation: np.ndarray  # (L, L) or (C, C) depending on ``space``
    space: str = "latent"
    pace: float = 1.0
    day: int = -1


@dataclass
class TrialRecord:
    features: np.ndarray  # (T, C)
    transcript: str
    day: int
    sentence_index: int


def build_tuning(
    channels: int,
    latent_rank: int,
    char_duration: int,
    rng: np.random.Generator,
    baseline_rate: float = 2.0,
    amplitude: float = 3.0,
    noise_model: str = "poisson",
    gaussian_noise_std: float = 0.5,
    timing_jitter: float = 0.2,
    max_template_correlation: float = 0.95,
) -> TuningModel:
    """Random tuning model with pairwise-distinct character templates.

    Character coefficient curves are resampled (bounded retries) until the
    max pairwise cosine similarity of flattened templates drops below
    ``max_template_correlation``; in severely degenerate geometries
    (e.g. rank 1 with 2 bins) the best attempt is kept.
    """
    if not channels >= latent_rank >= 1:
        raise ConfigError("need channels >= latent_rank >= 1")
    if char_duration < 2:
        raise ConfigError("char_duration must be >= 2")
    if noise_model not in ("poisson", "gaussian", "none"):
        raise ConfigError(f"unknown noise model {noise_model!r}")

    # spiky basis rows: each latent dim drives a small set of channels hard,
    # which keeps per-channel tuning sharp after z-scoring
    basis = rng.gamma(shape=0.6, scale=1.0, size=(latent_rank, channels))
    basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    bins = (np.arange(char_duration) + 0.5) / char_duration

    def sample_char() -> np.ndarray:
        # each character activates a sparse set of latent dims, each with
        # its own temporal bump, so characters differ in both which dims
        # fire and when they fire
        weights = rng.dirichlet(np.full(latent_rank, 0.25)) if latent_rank > 1 else np.ones(1)
        centers = rng.uniform(0.1, 0.9, size=latent_rank)
        widths = rng.uniform(0.1, 0.3, size=latent_rank)
        bumps = np.exp(-0.5 * ((bins[:, None] - centers[None, :]) / widths[None, :]) ** 2)
        return amplitude * bumps * weights[None, :]

    coeffs = np.stack([sample_char() for _ in range(_N_CHARS)])
    flat = np.einsum("ndl,lc->ndc", coeffs, basis).reshape(_N_CHARS, -1)
    for _ in range(300):
        norms = np.linalg.norm(flat, axis=1)
        sims = (flat @ flat.T) / np.outer(norms, norms)
        np.fill_diagonal(sims, 0.0)
        worst = int(np.argmax(sims.max(axis=1)))
        if sims[worst].max() < max_template_correlation:
            break
        coeffs[worst] = sample_char()
        flat[worst] = (coeffs[worst] @ basis).reshape(-1)

    return TuningModel(
        channels=channels,
        latent_rank=latent_rank,
        char_duration=char_duration,
        basis=basis,
        char_coeffs=coeffs,
        baseline=np.full(channels, float(baseline_rate)),
        noise_model=noise_model,
        gaussian_noise_std=gaussian_noise_std,
        timing_jitter=timing_jitter,
    )


def initial_state(tuning: TuningModel, profile: DriftProfile) -> DriftState:
    dim = tuning.latent_rank if profile.rotation_space == "latent" else tuning.channels
    return DriftState(
        offset=np.zeros(tuning.channels),
        gains=np.ones(tuning.channels),
        rotation=np.eye(dim),
        space=profile.rotation_space,
    )


def random_rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation whose largest principal angle equals ``angle``.

    A random skew-symmetric generator is scaled so its spectral norm is
    ``angle`` and exponentiated; the result is orthogonal with det +1.
    """
    if dim == 1 or angle == 0.0:
        return np.eye(dim)
    g = rng.normal(size=(dim, dim))
    skew = (g - g.T) / 2.0
    norm = np.linalg.norm(skew, 2)
    if norm == 0.0:
        return np.eye(dim)
    return scipy.linalg.expm(skew * (angle / norm))


def _reorthogonalize(rot: np.ndarray) -> np.ndarray:
    if np.abs(rot.T @ rot - np.eye(rot.shape[0])).max() > 1e-10:
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
    return rot


def advance_day(
    state: DriftState, profile: DriftProfile, rng: np.random.Generator
) -> DriftState:
    """Next day's drift: offset step, composed rotation, fresh gains."""
    offset = state.offset + rng.normal(0.0, profile.mean_drift_per_day, size=state.offset.shape)
    step = random_rotation(state.rotation.shape[0], profile.rotation_angle_per_day, rng)
    rotation = _reorthogonalize(step @ state.rotation)
    gains = 1.0 + rng.normal(0.0, profile.gain_jitter_std, size=state.gains.shape)
    pace = state.pace
    if profile.pace_drift_per_day > 0:
        pace = float(np.clip(pace * np.exp(rng.normal(0.0, profile.pace_drift_per_day)), 0.7, 1.4))
    return DriftState(
        offset=offset, gains=gains, rotation=rotation, space=state.space,
        pace=pace, day=state.day + 1,
    )


def advance_sentence(
    state: DriftState, profile: DriftProfile, rng: np.random.Generator
) -> DriftState:
    """Within-day offset random-walk step (one per sentence)."""
    offset = state.offset + rng.normal(
        0.0, profile.within_day_drift_rate, size=state.offset.shape
    )
    return replace(state, offset=offset)


def _resample_rows(block: np.ndarray, new_len: int) -> np.ndarray:
    """Linear time-interpolation of a (D, X) block to (new_len, X)."""
    d = block.shape[0]
    if new_len == d:
        return block
    pos = np.linspace(0.0, d - 1.0, new_len)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, d - 1)
    w = (pos - lo)[:, None]
    return block[lo] * (1.0 - w) + block[hi] * w


def synthesize_trial(
    tuning: TuningModel,
    transcript: str,
    state: DriftState,
    rng: np.random.Generator,
    day: int = 0,
    sentence_index: int = 0,
) -> TrialRecord:
    """One trial: jittered template concatenation + drift + observation noise."""
    if not transcript:
        raise ValueError("transcript must be non-empty")
    indices = encode(transcript)
    d = tuning.char_duration * state.pace
    jitter = tuning.timing_jitter
    blocks = []
    for idx in indices:
        coeff = tuning.char_coeffs[idx]
        lo = max(1, int(np.ceil((1.0 - jitter) * d)))
        hi = max(lo, int(np.floor((1.0 + jitter) * d)))
        dur = int(rng.integers(lo, hi + 1)) if hi > lo else lo
        if dur != tuning.char_duration:
            coeff = _resample_rows(coeff, dur)
        blocks.append(coeff)
    coeff_seq = np.concatenate(blocks, axis=0)  # (T, L)

    if state.space == "latent":
        modulation = (coeff_seq @ state.rotation) @ tuning.basis
    else:
        modulation = (coeff_seq @ tuning.basis) @ state.rotation.T

    rates = state.gains * (tuning.baseline + modulation) + state.offset
    if tuning.noise_model == "poisson":
        features = rng.poisson(np.clip(rates, 0.0, None)).astype(np.float64)
    elif tuning.noise_model == "gaussian":
        features = rates + rng.normal(0.0, tuning.gaussian_noise_std, size=rates.shape)
    else:
        features = rates
    return TrialRecord(
        features=features, transcript=transcript, day=day, sentence_index=sentence_index
    )


def generate_dataset(
    tuning: TuningModel,
    profile: DriftProfile,
    days: int,
    sentences_per_day: int | Sequence[int],
    corpus: Sequence[str],
    rng: np.random.Generator,
) -> list[TrialRecord]:
    """Multi-day dataset; sentences drawn without repetition.

    Day 0 starts from the undrifted state; between-day drift advances once
    per day transition and the within-day walk advances before every
    sentence. ``sentences_per_day`` may be a per-day sequence.
    """
    if isinstance(sentences_per_day, int):
        counts = [sentences_per_day] * days
    else:
        counts = list(sentences_per_day)
        if len(counts) != days:
            raise ConfigError("sentences_per_day sequence must have one entry per day")
    needed = sum(counts)
    if len(corpus) < needed:
        raise CorpusExhausted(
            f"need {needed} distinct sentences, corpus provides {len(corpus)}"
        )
    order = rng.permutation(len(corpus))[:needed]
    sentences = [corpus[i] for i in order]

    trials = []
    state = initial_state(tuning, profile)
    state = replace(state, day=0)
    pos = 0
    for day in range(days):
        if day > 0:
            state = advance_day(state, profile, rng)
        for j in range(counts[day]):
            state = advance_sentence(state, profile, rng)
            trials.append(
                synthesize_trial(
                    tuning, sentences[pos], state, rng, day=day, sentence_index=j
                )
            )
            pos += 1
    return trials


def write_dataset(
    trials: Sequence[TrialRecord],
    path,
    tuning: TuningModel | None = None,
    profile: DriftProfile | None = None,
    seed: int | None = None,
) -> None:
    """JSON-lines dataset: a tagged header line, then one trial per line."""
    header = {
        "type": "header",
        "alphabet": SYMBOLS,
        "channels": int(trials[0].features.shape[1]) if trials else None,
        "char_duration": tuning.char_duration if tuning else None,
        "drift_profile": asdict(profile) if profile else None,
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for t in trials:
            row = {
                "day": t.day,
                "sentence_index": t.sentence_index,
                "transcript": t.transcript,
                "features": [[round(v, 6) for v in row] for row in t.features.tolist()],
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_dataset(path) -> tuple[list[TrialRecord], dict]:
    trials: list[TrialRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("type") != "header":
            raise ValueError("dataset file must start with a header line")
        for line in f:
            row = json.loads(line)
            trials.append(
                TrialRecord(
                    features=np.array(row["features"], dtype=np.float64),
                    transcript=row["transcript"],
                    day=int(row["day"]),
                    sentence_index=int(row["sentence_index"]),
                )
            )
    return trials, header
