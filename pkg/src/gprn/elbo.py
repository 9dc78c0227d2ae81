"""Structured evidence lower bound.

Every term works on the per-mode factors and the two N x N kernel matrices;
nothing of size D x D or NKD x NKD is formed.  The additive constants
(``-NDK/2`` and ``-NK/2`` in the KLs, ``-(ND/2) log 2 pi`` in the likelihood)
are kept so that the value is a true lower bound on ``log p(Y)``.
"""

from dataclasses import dataclass
import math

import numpy as np

from .kron import KronCov, kron_logdet, kron_trace, mode_unfold
from .model import kernel_matrices


@dataclass(frozen=True)
class ElboBreakdown:
    kl_w: float
    kl_f: float
    exp_loglik: float

    @property
    def total(self):
        return self.exp_loglik - self.kl_w - self.kl_f

    def as_dict(self):
        return {"kl_w": self.kl_w, "kl_f": self.kl_f,
                "exp_loglik": self.exp_loglik, "total": self.total}


def kl_weights(qW, Kw, spec=None):
    """KL(q(W) || p(W)) with p(w_ik) = N(0, K_w) for every weight fiber."""
    L1 = qW.mode_chols[0]
    N = L1.dim
    if Kw.size != N:
        raise ValueError(f"K_w is {Kw.size}x{Kw.size} but Gamma_1 is {N}x{N}")
    total = qW.cov.total_dim
    rest_trace = kron_trace(KronCov(qW.mode_chols[1:]))
    U1 = mode_unfold(qW.mean, 0)
    trace_term = np.sum(Kw.half_solve(L1.lower) ** 2) * rest_trace
    mean_term = np.sum(Kw.half_solve(U1) ** 2)
    DK = total // N
    return 0.5 * float(trace_term + mean_term + DK * Kw.logdet
                       - kron_logdet(qW.cov) - total)


def kl_latent(qF, Kf):
    """KL(q(F) || p(F)) with p(fhat_k) = N(0, K_fhat) for each column."""
    N, K = qF.mean.shape
    if Kf.size != N:
        raise ValueError(f"K_f is {Kf.size}x{Kf.size} but Sigma is {N}x{N}")
    trace_term = np.sum(Kf.half_solve(qF.row_chol.lower) ** 2) * qF.col_chol.trace()
    mean_term = np.sum(Kf.half_solve(qF.mean) ** 2)
    return 0.5 * float(trace_term + mean_term + K * Kf.logdet
                       - K * qF.row_chol.logdet() - N * qF.col_chol.logdet() - N * K)


def moment_WtW(qW, n, spec=None):
    """E[W_n^T W_n] = G_1[n,n] * G_2 * prod_{m>=3} tr(G_m) + E[W_n]^T E[W_n]."""
    N = qW.mean.shape[0]
    if not 0 <= n < N:
        raise IndexError(f"data index {n} out of range for N={N}")
    K = qW.mean.shape[1]
    mu = qW.mean[n].reshape(K, -1)
    row = qW.mode_chols[0].lower[n]
    out_trace = kron_trace(qW.output_cov)
    return float(row @ row) * out_trace * qW.mode_chols[1].cov + mu @ mu.T


def moment_hht(qF, n):
    """E[h_n h_n^T] = Sigma[n,n] * Omega + m_n m_n^T."""
    N = qF.mean.shape[0]
    if not 0 <= n < N:
        raise IndexError(f"data index {n} out of range for N={N}")
    row = qF.row_chol.lower[n]
    m = qF.mean[n]
    return float(row @ row) * qF.col_chol.cov + np.outer(m, m)


def expected_quadratic(qF, qW, Y):
    """``sum_n E||y_n - W_n h_n||^2`` under q, accumulated in index order."""
    N, K = qF.mean.shape
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (N, qW.cov.total_dim // (N * K)):
        raise ValueError(f"Y has shape {Y.shape}, expected ({N}, {qW.cov.total_dim // (N * K)})")
    Tk = qW.mean.reshape(N, K, -1)
    M = qF.mean
    gamma1 = qW.mode_chols[0].diag
    sig = qF.row_chol.diag
    G2 = qW.mode_chols[1].cov
    Om = qF.col_chol.cov
    out_trace = kron_trace(qW.output_cov)

    resid = Y - np.einsum("nki,nk->ni", Tk, M)
    wgram = np.einsum("nki,nli->nkl", Tk, Tk)
    quad = (
        np.sum(resid**2, axis=1)
        + out_trace * gamma1 * sig * np.sum(G2 * Om)
        + out_trace * gamma1 * np.einsum("nk,kl,nl->n", M, G2, M)
        + sig * np.einsum("nkl,kl->n", wgram, Om)
    )
    return math.fsum(quad)


def expected_loglik(qF, qW, Y, sigma_y, spec=None):
    Y = np.asarray(Y, dtype=float)
    N, D = Y.shape
    if sigma_y <= 0:
        raise ValueError("sigma_y must be positive")
    S = expected_quadratic(qF, qW, Y)
    return (-0.5 * N * D * math.log(2 * math.pi) - N * D * math.log(sigma_y)
            - 0.5 * S / sigma_y**2)


def elbo(qF, qW, hyper, data, spec=None, jitter=1e-8, kernels=None):
    """ELBO breakdown; ``kernels`` may pass precomputed ``(K_f, K_w)``."""
    Kf, Kw = kernels if kernels is not None else kernel_matrices(data.X, hyper, jitter)
    return ElboBreakdown(
        kl_w=kl_weights(qW, Kw, spec),
        kl_f=kl_latent(qF, Kf),
        exp_loglik=expected_loglik(qF, qW, data.Y, hyper.sigma_y, spec),
    )
