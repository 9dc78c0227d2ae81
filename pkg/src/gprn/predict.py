"""Projection of the variational posterior to test inputs, and prediction."""

from dataclasses import dataclass
import logging
import math

import numpy as np

from .kernels import cross_gram
from .kron import multilinear

log = logging.getLogger(__name__)

VARIANCE_TOL = 1e-10
# upper bound on float64 entries held per Monte-Carlo chunk
CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class ProjectedPosterior:
    """Posterior means at the test inputs plus what is needed to sample them.

    ``w_proj`` / ``f_proj`` are the ``M* x N`` matrices ``k_* K^-1`` and
    ``var_w`` / ``var_f`` the per-point GP conditional variances
    ``k(x*, x*) - k_* K^-1 k_*^T`` of the weight and latent processes.
    """

    mean_W_star: np.ndarray  # M* x D x K
    mean_f_star: np.ndarray  # M* x K
    var_w: np.ndarray
    var_f: np.ndarray
    w_proj: np.ndarray
    f_proj: np.ndarray
    clamped: int = 0

    @property
    def size(self):
        return self.mean_f_star.shape[0]


def _clamp(var, name):
    bad = var < 0
    if np.any(var < -VARIANCE_TOL):
        log.warning("%s conditional variance %.3g below tolerance", name, var.min())
    if np.any(bad):
        log.warning("clamped %d negative %s conditional variances to 0", int(bad.sum()), name)
    return np.where(bad, 0.0, var), int(bad.sum())


def project_posteriors(qF, qW, hyper, X, X_star, Kf, Kw):
    """Project q(F), q(W) from the (normalized) training inputs ``X`` to ``X_star``."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    N, K = qF.mean.shape
    kw = cross_gram(X, X_star, hyper.theta_w)
    kf = cross_gram(X, X_star, hyper.theta_f)
    w_proj = Kw.solve(kw).T
    f_proj = Kf.solve(kf).T

    # one solve against the unfolded mean serves every (output, latent) fiber
    B = Kw.solve(qW.mean.reshape(N, -1))
    D = B.shape[1] // K
    mean_W = (kw.T @ B).reshape(-1, K, D).transpose(0, 2, 1)
    mean_f = kf.T @ Kf.solve(qF.mean)

    var_w = hyper.theta_w.amplitude**2 - np.einsum("mn,nm->m", w_proj, kw)
    var_f = (hyper.theta_f.amplitude**2 + hyper.sigma_f**2
             - np.einsum("mn,nm->m", f_proj, kf))
    var_w, cw = _clamp(var_w, "weight")
    var_f, cf = _clamp(var_f, "latent")
    return ProjectedPosterior(mean_W, mean_f, var_w, var_f, w_proj, f_proj, cw + cf)


def project(trained, X_star):
    """Project a TrainedModel to raw (un-normalized) test inputs."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    if trained.normalization is not None:
        X_star = trained.normalization.apply(X_star)
    qF, qW, hyper = trained.posteriors
    Kf, Kw = trained.kernels()
    return project_posteriors(qF, qW, hyper, trained.X, X_star, Kf, Kw)


def predict_mean(proj):
    """``E[y*] = E[W(x*)] E[f(x*)]`` per test point, ``M* x D``."""
    return np.einsum("mik,mk->mi", proj.mean_W_star, proj.mean_f_star)


def _chunk_size(per_sample):
    return max(1, CHUNK_ELEMENTS // max(per_sample, 1))


def _chunks(T, per_sample, seed):
    """Deterministic ``(count, rng)`` pairs covering ``T`` samples."""
    size = _chunk_size(per_sample)
    n = -(-T // size)
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        yield min(size, T - i * size), np.random.default_rng(child)


def _draw_latents(proj, qF, rng, S):
    N, K = qF.mean.shape
    Z = rng.standard_normal((S, N, K))
    F = qF.mean + qF.row_chol.lower @ Z @ qF.col_chol.lower.T
    eps = rng.standard_normal((S, proj.size, K))
    return proj.f_proj @ F + np.sqrt(proj.var_f)[:, None] * eps


def draw_joint(proj, qF, qW, rng, S):
    """``S`` samples ``(W*, F*)``, shapes ``(S, M*, D, K)`` and ``(S, M*, K)``."""
    N, K = qF.mean.shape
    F_star = _draw_latents(proj, qF, rng, S)
    Z = rng.standard_normal((S,) + qW.mean.shape)
    W = qW.mean + multilinear(Z, [c.lower for c in qW.mode_chols], offset=1)
    W = W.reshape(S, N, -1)
    D = W.shape[2] // K
    eps = rng.standard_normal((S, proj.size, K * D))
    W_star = proj.w_proj @ W + np.sqrt(proj.var_w)[:, None] * eps
    return W_star.reshape(S, proj.size, K, D).transpose(0, 1, 3, 2), F_star


def _gauss_loglik(resid_sq_sum, count, sigma_y):
    return -0.5 * count * math.log(2 * math.pi * sigma_y**2) - 0.5 * resid_sq_sum / sigma_y**2


def sample_logliks(proj, qF, qW, Y_star, sigma_y, T, seed, mode="joint"):
    """Per-sample values ``log N(Y* | W*_t F*_t, sigma_y^2 I)``, length ``T``.

    ``mode="per_output"`` draws each output's weights from their own
    marginal, sharing the latent draw across outputs; the per-sample values
    then differ from the joint mode but have the same expectation.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    Y_star = np.atleast_2d(np.asarray(Y_star, dtype=float))
    Ms, D = Y_star.shape
    N, K = qF.mean.shape
    if proj.mean_W_star.shape != (Ms, D, K):
        raise ValueError(f"Y_star shape {Y_star.shape} does not match projection")
    out = []
    if mode == "joint":
        per = N * K * D + 2 * Ms * K * D
        for S, rng in _chunks(T, per, seed):
            W_star, F_star = draw_joint(proj, qF, qW, rng, S)
            resid = Y_star - np.einsum("smik,smk->smi", W_star, F_star)
            out.append(_gauss_loglik(np.sum(resid**2, axis=(1, 2)), Ms * D, sigma_y))
    elif mode == "per_output":
        L1, L2 = qW.mode_chols[0].lower, qW.mode_chols[1].lower
        out_diag = _output_diag(qW)
        per = N * K + 2 * Ms * K
        for S, rng in _chunks(T, per, seed):
            F_star = _draw_latents(proj, qF, rng, S)
            sq = np.zeros(S)
            for i in range(D):
                Z = rng.standard_normal((S, N, K))
                W = qW.mean.reshape(N, K, D)[:, :, i] + math.sqrt(out_diag[i]) * (L1 @ Z @ L2.T)
                eps = rng.standard_normal((S, Ms, K))
                w_star = proj.w_proj @ W + np.sqrt(proj.var_w)[:, None] * eps
                sq += np.sum((Y_star[:, i] - np.einsum("smk,smk->sm", w_star, F_star))**2, axis=1)
            out.append(_gauss_loglik(sq, Ms * D, sigma_y))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return np.concatenate(out)


def _output_diag(qW):
    diag = np.ones(1)
    for c in qW.mode_chols[2:]:
        diag = np.outer(diag, c.diag).ravel()
    return diag


def predictive_loglik(trained, X_star, Y_star, T, seed, mode="joint"):
    """Empirical predictive log-likelihood: mean over ``T`` posterior draws.

    Draws come from the variational posterior standing in for the true one.
    """
    proj = project(trained, X_star)
    qF, qW, hyper = trained.posteriors
    values = sample_logliks(proj, qF, qW, Y_star, hyper.sigma_y, T, seed, mode)
    return math.fsum(values) / T
