"""Comparison methods: frozen decoder, supervised recalibration, FA stabilizer.

The factor-analysis stabilizer fits a per-day latent subspace to the raw
(unlabeled) features, aligns its loadings to a reference day with an
orthogonal Procrustes rotation, and re-expresses new-day activity in the
reference frame through the FA posterior mean, so a frozen decoder can
keep using its reference-day input layer. It can only undo drift that
stays inside a stable low-dimensional subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net, recal
from .errors import DegenerateData
from .text import cer, wer


@dataclass
class FaModel:
    loading: np.ndarray        # (C, L)
    private_noise: np.ndarray  # (C,)
    mean: np.ndarray           # (C,)
    latent_dim: int
    loglik_path: list[float]


@dataclass
class AlignmentTransform:
    rotation: np.ndarray  # (L, L), orthogonal
    source_day: int = -1
    reference_day: int = -1


def fit_fa(
    features: np.ndarray,
    latent_dim: int,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> FaModel:
    """EM for the factor model x ~ N(mu, Lambda Lambda' + Psi), Psi diagonal.

    Works on the sample covariance; the log-likelihood (up to constants
    shared by all iterates) is non-decreasing and fitting stops when the
    improvement drops below ``tol``.
    """
    x = np.asarray(features, dtype=np.float64)
    n, c = x.shape
    if n <= latent_dim:
        raise ValueError("need more samples than latent dimensions")
    mean = x.mean(axis=0)
    xc = x - mean
    S = (xc.T @ xc) / n
    variances = np.diag(S)
    dead = np.where(variances <= 1e-12)[0]
    if dead.size:
        raise DegenerateData(f"zero-variance channel {int(dead[0])}")

    # PCA-flavored start
    evals, evecs = np.linalg.eigh(S)
    order = np.argsort(evals)[::-1][:latent_dim]
    lam = evecs[:, order] * np.sqrt(np.maximum(evals[order] - evals.min(), 1e-3))
    psi = np.maximum(variances - np.sum(lam * lam, axis=1), 0.1 * variances)

    eye_l = np.eye(latent_dim)
    loglik_path: list[float] = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        sigma = lam @ lam.T + np.diag(psi)
        chol = np.linalg.cholesky(sigma)
        half = np.linalg.solve(chol, np.eye(c))
        sigma_inv = half.T @ half
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        ll = -0.5 * n * (c * np.log(2 * np.pi) + logdet + np.trace(sigma_inv @ S))
        loglik_path.append(float(ll))
        if ll - prev_ll < tol and np.isfinite(prev_ll):
            break
        prev_ll = ll

        beta = lam.T @ sigma_inv                     # (L, C) posterior map
        s_beta_t = S @ beta.T                        # (C, L)
        second = eye_l - beta @ lam + beta @ s_beta_t  # E[zz'] aggregate
        lam = s_beta_t @ np.linalg.inv(second)
        psi = np.maximum(variances - np.sum(lam * s_beta_t, axis=1), 1e-8)

    return FaModel(
        loading=lam,
        private_noise=psi,
        mean=mean,
        latent_dim=latent_dim,
        loglik_path=loglik_path,
    )


def posterior_mean(fa: FaModel, features: np.ndarray) -> np.ndarray:
    """E[z | x] rows for feature rows (T, C) -> (T, L)."""
    sigma = fa.loading @ fa.loading.T + np.diag(fa.private_noise)
    beta = fa.loading.T @ np.linalg.inv(sigma)
    return (features - fa.mean) @ beta.T


def procrustes_align(reference: FaModel, target: FaModel) -> AlignmentTransform:
    """Orthogonal R minimizing ||reference.loading - target.loading @ R||_F."""
    if reference.latent_dim != target.latent_dim:
        raise ValueError("latent dimensions differ")
    m = target.loading.T @ reference.loading
    u, s, vt = np.linalg.svd(m)
    if s[-1] < 1e-10 * max(s[0], 1e-30):
        raise DegenerateData("rank-deficient cross-product; alignment is ambiguous")
    return AlignmentTransform(rotation=u @ vt)


def stabilize(
    features: np.ndarray,
    fa_ref: FaModel,
    fa_new: FaModel,
    transform: AlignmentTransform,
) -> np.ndarray:
    """Map new-day features into the reference day's frame.

    Posterior latent under the new-day model, rotated into reference
    coordinates, reconstructed through the reference loadings (posterior
    mean a.k.a. Wiener reconstruction, so output is denoised rather than
    bit-identical even under an identity alignment).
    """
    z = posterior_mean(fa_new, features)
    z_ref = z @ transform.rotation
    return z_ref @ fa_ref.loading.T + fa_ref.mean


def run_frozen(
    model: net.DecoderModel,
    trials,
    lm_model,
    cfg: recal.RecalConfig,
) -> list[recal.DecodeRecord]:
    """Pure inference with day layers resolved to the nearest prior day."""
    records = []
    for trial in trials:
        day = net.latest_day_at_or_before(model, trial.day)
        decoded, raw = recal.decode_trial(model, day, trial.features, lm_model, cfg)
        records.append(
            recal.DecodeRecord(
                day=trial.day,
                sentence_index=trial.sentence_index,
                snapshot_version=model.version,
                decoded=decoded,
                raw_decoded=raw,
                pseudo_label="",
                reference=trial.transcript,
                cer=cer(trial.transcript, raw).rate,
                wer=wer(trial.transcript, decoded).rate,
                skipped_training=True,
            )
        )
    return records


def recalibrate_ground_truth(
    model: net.DecoderModel,
    day: int,
    trials,
    lm_model,
    cfg: recal.RecalConfig,
    buf: recal.ReplayBuffer,
    rng: np.random.Generator,
):
    """run_day with ground-truth labels; the supervised lower bound."""
    return recal.run_day(
        model,
        day,
        trials,
        lm_model,
        cfg,
        buf,
        rng,
        label_fn=lambda trial, decoded: trial.transcript,
        label_source="ground_truth",
    )


def run_fa_day(
    model: net.DecoderModel,
    reference_day: int,
    fa_ref: FaModel,
    trials,
    lm_model,
    cfg: recal.RecalConfig,
    refit_every: int = 5,
) -> list[recal.DecodeRecord]:
    """FA-stabilized decoding of one day with a frozen decoder.

    The new-day FA model is fit on the day's accumulated raw features and
    refit after every ``refit_every`` sentences; until the first fit,
    trials are decoded unstabilized. Decoding uses the reference day's
    input layer on stabilized features.
    """
    records = []
    seen: list[np.ndarray] = []
    fa_new: FaModel | None = None
    transform: AlignmentTransform | None = None
    for i, trial in enumerate(trials):
        feats = trial.features
        if fa_new is not None and transform is not None:
            feats = stabilize(feats, fa_ref, fa_new, transform)
            day = reference_day
        else:
            day = net.latest_day_at_or_before(model, trial.day)
        decoded, raw = recal.decode_trial(model, day, feats, lm_model, cfg)
        records.append(
            recal.DecodeRecord(
                day=trial.day,
                sentence_index=trial.sentence_index,
                snapshot_version=model.version,
                decoded=decoded,
                raw_decoded=raw,
                pseudo_label="",
                reference=trial.transcript,
                cer=cer(trial.transcript, raw).rate,
                wer=wer(trial.transcript, decoded).rate,
                skipped_training=True,
            )
        )
        seen.append(trial.features)
        if (i + 1) % refit_every == 0:
            pooled = np.concatenate(seen, axis=0)
            if pooled.shape[0] > fa_ref.latent_dim:
                # drifted-to-silence channels or ambiguous alignments leave
                # the previous stabilizer in place until more data arrives
                try:
                    candidate = fit_fa(pooled, fa_ref.latent_dim)
                    transform = procrustes_align(fa_ref, candidate)
                    fa_new = candidate
                except DegenerateData:
                    pass
    return records
