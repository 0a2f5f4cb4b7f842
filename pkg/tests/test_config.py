"""Config files, overrides, hashing."""

import pytest

from corplab import config
from corplab.errors import ConfigError


class TestDefaults:
    def test_default_config_valid(self):
        cfg = config.ExperimentConfig()
        assert cfg.run.method == "corp"
        assert cfg.data.channels == 64
        assert cfg.model.hidden_size == 64

    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigError):
            config.ExperimentConfig(run=config.RunConfig(method="magic"))

    def test_fa_with_corp_reserved(self):
        with pytest.raises(NotImplementedError):
            config.ExperimentConfig(run=config.RunConfig(fa_with_corp=True))


class TestHash:
    def test_stable_and_sensitive(self):
        a = config.ExperimentConfig()
        b = config.ExperimentConfig()
        assert config.config_hash(a) == config.config_hash(b)
        b.data.channels = 32
        assert config.config_hash(a) != config.config_hash(b)

    def test_hash_covers_every_section(self):
        base = config.config_hash(config.ExperimentConfig())
        for mutate in (
            lambda c: setattr(c.model, "hidden_size", 63),
            lambda c: setattr(c.lm, "beam_width", 63),
            lambda c: setattr(c.recal, "loss_threshold", 63.0),
            lambda c: setattr(c.run, "seed", 63),
        ):
            cfg = config.ExperimentConfig()
            mutate(cfg)
            assert config.config_hash(cfg) != base


class TestOverrides:
    def test_apply_setting_coerces_types(self):
        cfg = config.ExperimentConfig()
        config.apply_setting(cfg, "data.channels", "48")
        config.apply_setting(cfg, "recal.learning_rate", "0.02")
        config.apply_setting(cfg, "recal.use_replay", "false")
        assert cfg.data.channels == 48
        assert cfg.recal.learning_rate == 0.02
        assert cfg.recal.use_replay is False

    def test_unknown_key_rejected(self):
        cfg = config.ExperimentConfig()
        with pytest.raises(ConfigError):
            config.apply_setting(cfg, "data.nonsense", "1")
        with pytest.raises(ConfigError):
            config.apply_setting(cfg, "nosection.channels", "1")
        with pytest.raises(ConfigError):
            config.apply_setting(cfg, "channels", "1")

    def test_bad_boolean_rejected(self):
        cfg = config.ExperimentConfig()
        with pytest.raises(ConfigError):
            config.apply_setting(cfg, "recal.use_replay", "maybe")


class TestFiles:
    def test_roundtrip(self, tmp_path):
        cfg = config.small_profile()
        cfg.run.seed = 5
        path = tmp_path / "exp.ini"
        config.write_config(cfg, path)
        loaded = config.load_config(str(path))
        assert config.to_dict(loaded) == config.to_dict(cfg)
        assert config.config_hash(loaded) == config.config_hash(cfg)

    def test_load_with_overrides(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[data]\nchannels = 16\n")
        cfg = config.load_config(str(path), overrides=["data.channels=24", "run.seed=9"])
        assert cfg.data.channels == 24
        assert cfg.run.seed == 9

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigError):
            config.load_config("/nonexistent/path.ini")

    def test_malformed_override_rejected(self):
        with pytest.raises(ConfigError):
            config.load_config(None, overrides=["data.channels"])

    def test_method_revalidated_after_load(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[run]\nmethod = wizardry\n")
        with pytest.raises(ConfigError):
            config.load_config(str(path))
