"""Experiment configuration: nested dataclasses, INI files, config hashing.

A config file is plain key-value INI with one section per sub-config
(``[data]``, ``[model]``, ``[lm]``, ``[recal]``, ``[run]``); every field
has a default and every default is overridable either in the file or with
repeated ``--set section.key=value`` CLI flags. The run directory name is
a hash of the fully-resolved config, so identical configs land in (and
reproduce) identical outputs.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .net import AugmentationConfig
from .recal import DecodeConfig, RecalConfig
from .synth import DriftProfile

METHODS = ("corp", "frozen", "ground_truth", "fa_stabilizer")


@dataclass
class DataConfig:
    channels: int = 64
    latent_rank: int = 16
    char_duration: int = 5
    baseline_rate: float = 0.5
    amplitude: float = 70.0
    noise_model: str = "poisson"
    gaussian_noise_std: float = 0.5
    timing_jitter: float = 0.2
    mean_drift_per_day: float = 0.35
    within_day_drift_rate: float = 0.05
    rotation_angle_per_day: float = 0.2
    rotation_space: str = "full"
    gain_jitter_std: float = 0.06
    pace_drift_per_day: float = 0.05
    seed_days: int = 10
    eval_days: int = 15
    sentences_per_day: int = 40
    seed_sentences_per_day: int = 0  # 0 -> same as sentences_per_day
    heldout_per_day: int = 8
    min_words: int = 4
    max_words: int = 8

    def drift_profile(self) -> DriftProfile:
        return DriftProfile(
            mean_drift_per_day=self.mean_drift_per_day,
            within_day_drift_rate=self.within_day_drift_rate,
            rotation_angle_per_day=self.rotation_angle_per_day,
            rotation_space=self.rotation_space,
            gain_jitter_std=self.gain_jitter_std,
            pace_drift_per_day=self.pace_drift_per_day,
        )


@dataclass
class ModelConfig:
    hidden_size: int = 64
    num_layers: int = 2
    seed_learning_rate: float = 5e-3
    seed_epochs: int = 60
    seed_batch_size: int = 8
    seed_target_cer: float = 0.02
    seed_patience: int = 12
    seed_abort_cer: float = 0.15
    seed_white_noise_std: float = 1.0
    seed_offset_std: float = 0.8


@dataclass
class LmConfig:
    vocab_size_cap: int = 4000
    add_k: float = 0.1
    oov_penalty: float = -12.0
    beam_width: int = 64
    lm_weight: float = 0.8
    word_insertion_bonus: float = 0.5
    nbest: int = 10
    prune_logp: float = -9.0

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            beam_width=self.beam_width,
            lm_weight=self.lm_weight,
            word_insertion_bonus=self.word_insertion_bonus,
            nbest=self.nbest,
            prune_logp=self.prune_logp,
        )


@dataclass
class RecalSection:
    learning_rate: float = 0.05
    loss_threshold: float = 8.0
    max_steps: int = 400
    batch_size: int = 16
    white_noise_std: float = 0.3
    offset_std: float = 0.3
    freeze_backbone: bool = False
    use_replay: bool = True
    use_augmentation: bool = True
    use_lm_pseudolabels: bool = True
    buffer_capacity: int = 256
    new_day_fraction: float = 0.3
    momentum: float = 0.0
    grad_clip: float = 10.0
    normalize_loss_by_length: bool = False
    relabel_buffer: bool = False
    train_all_day_layers: bool = False

    def recal_config(self, decode: DecodeConfig) -> RecalConfig:
        return RecalConfig(
            learning_rate=self.learning_rate,
            loss_threshold=self.loss_threshold,
            max_steps=self.max_steps,
            batch_size=self.batch_size,
            augmentation=AugmentationConfig(self.white_noise_std, self.offset_std),
            freeze_backbone=self.freeze_backbone,
            use_replay=self.use_replay,
            use_augmentation=self.use_augmentation,
            use_lm_pseudolabels=self.use_lm_pseudolabels,
            buffer_capacity=self.buffer_capacity,
            new_day_fraction=self.new_day_fraction,
            momentum=self.momentum,
            grad_clip=self.grad_clip,
            normalize_loss_by_length=self.normalize_loss_by_length,
            relabel_buffer=self.relabel_buffer,
            train_all_day_layers=self.train_all_day_layers,
            decode=decode,
        )


@dataclass
class RunConfig:
    method: str = "corp"
    seed: int = 0
    fa_refit_every: int = 5
    fa_latent_dim: int = 0  # 0 -> channels // 2
    fa_with_corp: bool = False  # reserved; combination not implemented
    out_dir: str = "runs"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    recal: RecalSection = field(default_factory=RecalSection)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self) -> None:
        if self.run.method not in METHODS:
            raise ConfigError(
                f"unknown method {self.run.method!r}; expected one of {METHODS}"
            )
        if self.run.fa_with_corp:
            raise NotImplementedError(
                "combining the FA stabilizer with pseudo-label recalibration "
                "is reserved for future work"
            )

    def fa_latent_dim(self) -> int:
        return self.run.fa_latent_dim or self.data.channels // 2


def small_profile(**run_overrides) -> ExperimentConfig:
    """Reduced-size profile for fast property runs and acceptance checks.

    Half-scale decoder and channel count, short sentences, and drift
    magnitudes tuned so a frozen decoder visibly degrades across the
    evaluation days while recalibration can keep pace.
    """
    cfg = ExperimentConfig(
        data=DataConfig(
            channels=32,
            latent_rank=8,
            char_duration=4,
            baseline_rate=0.5,
            amplitude=50.0,
            timing_jitter=0.2,
            mean_drift_per_day=0.3,
            within_day_drift_rate=0.06,
            rotation_angle_per_day=0.4,
            rotation_space="full",
            gain_jitter_std=0.1,
            pace_drift_per_day=0.05,
            seed_days=4,
            eval_days=8,
            sentences_per_day=10,
            seed_sentences_per_day=16,
            heldout_per_day=4,
            min_words=3,
            max_words=5,
        ),
        model=ModelConfig(
            hidden_size=32, seed_epochs=70, seed_batch_size=4, seed_target_cer=0.03
        ),
        lm=LmConfig(beam_width=12, nbest=6, prune_logp=-7.0),
        recal=RecalSection(
            learning_rate=0.005,
            loss_threshold=1.5,
            max_steps=80,
            batch_size=8,
            white_noise_std=1.0,
            offset_std=0.8,
            buffer_capacity=96,
        ),
    )
    for k, v in run_overrides.items():
        setattr(cfg.run, k, v)
    return cfg


_SECTIONS = ("data", "model", "lm", "recal", "run")


def to_dict(cfg: ExperimentConfig) -> dict:
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTIONS}


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _coerce(current, raw: str):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def apply_setting(cfg: ExperimentConfig, dotted_key: str, raw_value: str) -> None:
    """Apply one ``section.key=value`` override in place."""
    try:
        section_name, key = dotted_key.split(".", 1)
    except ValueError:
        raise ConfigError(f"override {dotted_key!r} must look like section.key") from None
    if section_name not in _SECTIONS:
        raise ConfigError(f"unknown config section {section_name!r}")
    section = getattr(cfg, section_name)
    if not hasattr(section, key):
        raise ConfigError(f"unknown config key {dotted_key!r}")
    setattr(section, key, _coerce(getattr(section, key), raw_value))


def load_config(path: str | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Config from an INI file (all sections optional) plus CLI overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section_name in parser.sections():
            if section_name not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section_name}]")
            for key, raw in parser.items(section_name):
                apply_setting(cfg, f"{section_name}.{key}", raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        apply_setting(cfg, dotted.strip(), raw.strip())
    # revalidate cross-field constraints after mutation
    ExperimentConfig.__post_init__(cfg)
    return cfg


def write_config(cfg: ExperimentConfig, path) -> None:
    parser = configparser.ConfigParser()
    for name in _SECTIONS:
        parser[name] = {
            k: str(v) for k, v in dataclasses.asdict(getattr(cfg, name)).items()
        }
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)
