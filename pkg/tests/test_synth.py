"""Synthetic generator: tuning structure, drift dynamics, dataset contracts."""

import numpy as np
import pytest

from corplab import synth
from corplab.errors import ConfigError, CorpusExhausted
from corplab.text import SYMBOLS


def quiet_tuning(rng, channels=8, latent=3, dur=4, **kw):
    kw.setdefault("baseline_rate", 0.0)
    kw.setdefault("noise_model", "none")
    kw.setdefault("timing_jitter", 0.0)
    return synth.build_tuning(channels, latent, dur, rng, **kw)


SENTS = [
    "the cat sat.", "a dog ran.", "he saw it.", "we ate pie.",
    "they left now.", "she hid well.", "it was cold.", "go home son.",
    "birds fly high.", "rain fell hard.", "old men talk.", "kids play games.",
]


class TestBuildTuning:
    def test_rank_bounded_by_latent_rank(self):
        rng = np.random.default_rng(0)
        tun = synth.build_tuning(64, 10, 5, rng)
        stacked = tun.templates.reshape(-1, 64)
        assert np.linalg.matrix_rank(stacked) <= 10

    def test_templates_distinct(self):
        rng = np.random.default_rng(1)
        tun = synth.build_tuning(32, 8, 5, rng)
        flat = tun.templates.reshape(len(SYMBOLS), -1)
        norms = np.linalg.norm(flat, axis=1)
        sims = flat @ flat.T / np.outer(norms, norms)
        np.fill_diagonal(sims, 0.0)
        assert sims.max() < 0.95

    def test_rates_nonnegative(self):
        rng = np.random.default_rng(2)
        tun = synth.build_tuning(16, 4, 4, rng)
        assert np.all(tun.templates >= 0)
        assert np.all(tun.baseline >= 0)

    def test_degenerate_configuration_valid(self):
        tun = synth.build_tuning(1, 1, 2, np.random.default_rng(0))
        assert tun.templates.shape == (len(SYMBOLS), 2, 1)

    @pytest.mark.parametrize(
        "channels,latent,dur", [(2, 3, 4), (4, 0, 4), (4, 2, 1)]
    )
    def test_invalid_parameters_rejected(self, channels, latent, dur):
        with pytest.raises(ConfigError):
            synth.build_tuning(channels, latent, dur, np.random.default_rng(0))

    def test_unknown_noise_model_rejected(self):
        with pytest.raises(ConfigError):
            synth.build_tuning(4, 2, 3, np.random.default_rng(0), noise_model="laplace")


class TestSynthesizeTrial:
    def test_identity_under_null_noise(self):
        rng = np.random.default_rng(3)
        tun = quiet_tuning(rng)
        state = synth.initial_state(tun, synth.DriftProfile())
        trial = synth.synthesize_trial(tun, "ab", state, np.random.default_rng(0))
        expected = np.concatenate([tun.templates[0], tun.templates[1]], axis=0)
        assert np.allclose(trial.features, expected, rtol=0, atol=1e-12)

    def test_baseline_added(self):
        rng = np.random.default_rng(4)
        tun = quiet_tuning(rng, baseline_rate=2.5)
        state = synth.initial_state(tun, synth.DriftProfile())
        trial = synth.synthesize_trial(tun, "a", state, np.random.default_rng(0))
        assert np.allclose(trial.features, tun.templates[0] + 2.5)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        tun = synth.build_tuning(8, 3, 4, rng, noise_model="poisson")
        state = synth.initial_state(tun, synth.DriftProfile())
        a = synth.synthesize_trial(tun, "cat", state, np.random.default_rng(42))
        b = synth.synthesize_trial(tun, "cat", state, np.random.default_rng(42))
        assert np.array_equal(a.features, b.features)

    def test_poisson_counts_nonnegative_under_negative_offset(self):
        rng = np.random.default_rng(6)
        tun = synth.build_tuning(8, 3, 4, rng, baseline_rate=0.5, noise_model="poisson")
        profile = synth.DriftProfile(mean_drift_per_day=5.0)
        state = synth.advance_day(synth.initial_state(tun, profile), profile, rng)
        trial = synth.synthesize_trial(tun, "abc", state, rng)
        assert np.all(trial.features >= 0)

    def test_empty_transcript_rejected(self):
        rng = np.random.default_rng(0)
        tun = quiet_tuning(rng)
        state = synth.initial_state(tun, synth.DriftProfile())
        with pytest.raises(ValueError):
            synth.synthesize_trial(tun, "", state, rng)

    def test_jitter_changes_duration(self):
        rng = np.random.default_rng(7)
        tun = synth.build_tuning(8, 3, 5, rng, noise_model="none", timing_jitter=0.2)
        state = synth.initial_state(tun, synth.DriftProfile())
        lengths = {
            synth.synthesize_trial(tun, "abcdefgh", state, np.random.default_rng(s)).features.shape[0]
            for s in range(10)
        }
        assert len(lengths) > 1
        assert all(8 * 4 <= n <= 8 * 6 for n in lengths)


class TestDrift:
    def test_null_profile_leaves_state_unchanged(self):
        rng = np.random.default_rng(8)
        tun = quiet_tuning(rng)
        profile = synth.DriftProfile()
        state = synth.initial_state(tun, profile)
        after = synth.advance_day(state, profile, np.random.default_rng(0))
        assert np.array_equal(after.offset, state.offset)
        assert np.array_equal(after.rotation, state.rotation)
        assert np.array_equal(after.gains, state.gains)

    def test_composed_rotation_stays_orthogonal(self):
        rng = np.random.default_rng(9)
        tun = quiet_tuning(rng, channels=12, latent=5)
        profile = synth.DriftProfile(rotation_angle_per_day=0.1, rotation_space="full")
        state = synth.initial_state(tun, profile)
        for _ in range(10):
            state = synth.advance_day(state, profile, rng)
        r = state.rotation
        assert np.abs(r.T @ r - np.eye(r.shape[0])).max() < 1e-10
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)

    def test_rotation_angle_matches_request(self):
        rng = np.random.default_rng(10)
        r = synth.random_rotation(8, 0.3, rng)
        # largest principal angle from the eigenvalues of the rotation
        angles = np.abs(np.angle(np.linalg.eigvals(r)))
        assert angles.max() == pytest.approx(0.3, abs=1e-8)

    def test_offsets_follow_random_walk_scaling(self):
        rng = np.random.default_rng(11)
        tun = quiet_tuning(rng, channels=400)
        profile = synth.DriftProfile(mean_drift_per_day=0.5)
        state = synth.initial_state(tun, profile)
        k = 9
        for _ in range(k):
            state = synth.advance_day(state, profile, rng)
        observed = state.offset.std()
        assert observed == pytest.approx(0.5 * np.sqrt(k), rel=0.15)

    def test_within_day_walk(self):
        rng = np.random.default_rng(12)
        tun = quiet_tuning(rng, channels=400)
        profile = synth.DriftProfile(within_day_drift_rate=0.2)
        state = synth.initial_state(tun, profile)
        for _ in range(4):
            state = synth.advance_sentence(state, profile, rng)
        assert state.offset.std() == pytest.approx(0.2 * 2, rel=0.2)

    def test_invalid_profile_rejected(self):
        with pytest.raises(ConfigError):
            synth.DriftProfile(mean_drift_per_day=-1.0)
        with pytest.raises(ConfigError):
            synth.DriftProfile(rotation_angle_per_day=4.0)
        with pytest.raises(ConfigError):
            synth.DriftProfile(rotation_space="diagonal")

    def test_latent_rotation_preserves_subspace(self):
        rng = np.random.default_rng(13)
        tun = quiet_tuning(rng, channels=24, latent=4)
        profile = synth.DriftProfile(rotation_angle_per_day=0.5, rotation_space="latent")
        state = synth.initial_state(tun, profile)
        for _ in range(5):
            state = synth.advance_day(state, profile, rng)
        trial = synth.synthesize_trial(tun, "abcd", state, rng)
        # drifted modulation still lies in the basis row space
        basis = tun.basis
        proj = basis.T @ np.linalg.solve(basis @ basis.T, basis)
        residual = trial.features - trial.features @ proj
        assert np.abs(residual).max() < 1e-9

    def test_full_rotation_leaves_subspace(self):
        rng = np.random.default_rng(14)
        tun = quiet_tuning(rng, channels=24, latent=4)
        profile = synth.DriftProfile(rotation_angle_per_day=0.8, rotation_space="full")
        state = synth.initial_state(tun, profile)
        state = synth.advance_day(state, profile, rng)
        trial = synth.synthesize_trial(tun, "abcd", state, rng)
        basis = tun.basis
        proj = basis.T @ np.linalg.solve(basis @ basis.T, basis)
        residual = trial.features - trial.features @ proj
        assert np.abs(residual).max() > 1e-3


class TestGenerateDataset:
    def test_structure_single_day(self):
        rng = np.random.default_rng(15)
        tun = quiet_tuning(rng)
        trials = synth.generate_dataset(
            tun, synth.DriftProfile(), 1, 10, SENTS, np.random.default_rng(0)
        )
        assert len(trials) == 10
        assert all(t.day == 0 for t in trials)
        assert [t.sentence_index for t in trials] == list(range(10))

    def test_day_indices_monotone(self):
        rng = np.random.default_rng(16)
        tun = quiet_tuning(rng)
        trials = synth.generate_dataset(
            tun, synth.DriftProfile(), 3, 4, SENTS, np.random.default_rng(0)
        )
        assert [t.day for t in trials] == sorted(t.day for t in trials)
        assert len(trials) == 12

    def test_sentences_not_repeated(self):
        rng = np.random.default_rng(17)
        tun = quiet_tuning(rng)
        trials = synth.generate_dataset(
            tun, synth.DriftProfile(), 2, 6, SENTS, np.random.default_rng(0)
        )
        texts = [t.transcript for t in trials]
        assert len(set(texts)) == len(texts)

    def test_corpus_exhaustion_raises(self):
        rng = np.random.default_rng(18)
        tun = quiet_tuning(rng)
        with pytest.raises(CorpusExhausted):
            synth.generate_dataset(tun, synth.DriftProfile(), 4, 6, SENTS, rng)

    def test_bit_identical_datasets_for_equal_seeds(self):
        rng = np.random.default_rng(19)
        tun = synth.build_tuning(8, 3, 4, rng, noise_model="poisson", timing_jitter=0.2)
        profile = synth.DriftProfile(
            mean_drift_per_day=0.3, within_day_drift_rate=0.05,
            rotation_angle_per_day=0.2, rotation_space="full", gain_jitter_std=0.05,
        )
        a = synth.generate_dataset(tun, profile, 3, 4, SENTS, np.random.default_rng(123))
        b = synth.generate_dataset(tun, profile, 3, 4, SENTS, np.random.default_rng(123))
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))
        assert all(x.transcript == y.transcript for x, y in zip(a, b))

    def test_null_drift_is_day_stationary(self):
        rng = np.random.default_rng(20)
        tun = synth.build_tuning(12, 4, 4, rng, baseline_rate=2.0, noise_model="poisson")
        sents = ["aaaa bbbb cccc."] + [f"{w} {w}." for w in ("dog", "cat", "sun", "sky", "oak", "elm", "fox", "own", "raw", "law", "saw", "paw", "jaw", "caw", "maw", "naw", "tak", "tok", "tik", "tuk")]
        trials = synth.generate_dataset(
            tun, synth.DriftProfile(), 10, 2, sents[:20], np.random.default_rng(3)
        )
        first = np.concatenate([t.features for t in trials if t.day == 0])
        last = np.concatenate([t.features for t in trials if t.day == 9])
        diff = first.mean(axis=0) - last.mean(axis=0)
        stderr = np.sqrt(first.var(axis=0) / len(first) + last.var(axis=0) / len(last))
        assert np.all(np.abs(diff) <= 3.5 * np.maximum(stderr, 1e-9) + 0.3)


class TestDatasetIo:
    def test_jsonl_roundtrip(self, tmp_path):
        rng = np.random.default_rng(21)
        tun = synth.build_tuning(6, 2, 3, rng, noise_model="poisson")
        profile = synth.DriftProfile(mean_drift_per_day=0.1)
        trials = synth.generate_dataset(tun, profile, 2, 3, SENTS, np.random.default_rng(1))
        path = tmp_path / "data.jsonl"
        synth.write_dataset(trials, path, tuning=tun, profile=profile, seed=1)
        loaded, header = synth.read_dataset(path)
        assert header["type"] == "header"
        assert header["alphabet"] == SYMBOLS
        assert header["channels"] == 6
        assert header["drift_profile"]["mean_drift_per_day"] == 0.1
        assert len(loaded) == len(trials)
        for a, b in zip(trials, loaded):
            assert a.transcript == b.transcript
            assert a.day == b.day and a.sentence_index == b.sentence_index
            assert np.allclose(a.features, b.features, atol=1e-6)

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"day": 0}\n')
        with pytest.raises(ValueError):
            synth.read_dataset(path)
