"""RBF kernel, Gram matrices with jitter, and log-hyperparameter derivatives.

The kernel is ``a^2 exp(-|xa - xb|^2 / (2 l^2))`` with one lengthscale shared
by every input dimension.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NumericalError

JITTER_START = 1e-8
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class RbfHyper:
    log_lengthscale: float = 0.0
    log_amplitude: float = 0.0

    @property
    def lengthscale(self):
        return float(np.exp(self.log_lengthscale))

    @property
    def amplitude(self):
        return float(np.exp(self.log_amplitude))


def rbf(xa, xb, hyper):
    xa = np.atleast_1d(np.asarray(xa, dtype=float))
    xb = np.atleast_1d(np.asarray(xb, dtype=float))
    if xa.shape != xb.shape:
        raise ValueError(f"input dimension mismatch: {xa.shape} vs {xb.shape}")
    sq = float(np.sum((xa - xb) ** 2))
    return hyper.amplitude**2 * np.exp(-0.5 * sq / hyper.lengthscale**2)


def noisy_latent_kernel(xa, xb, hyper, sigma_f, same_point):
    """Kernel of the noisy latent ``f + sigma_f * eps``.

    ``same_point`` means the two arguments are the same data point (index
    equality); two distinct points with equal coordinates get no noise term.
    """
    value = rbf(xa, xb, hyper)
    if same_point:
        value += sigma_f**2
    return value


def sq_dists(xa, xb):
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    if xa.shape[1] != xb.shape[1]:
        raise ValueError(f"input dimension mismatch: {xa.shape[1]} vs {xb.shape[1]}")
    d2 = (
        np.sum(xa**2, axis=1)[:, None]
        + np.sum(xb**2, axis=1)[None, :]
        - 2.0 * xa @ xb.T
    )
    return np.maximum(d2, 0.0)


def _pairwise_sq(X):
    # exact differences; the expanded form loses ~1e-16 relative on the diagonal
    X = np.atleast_2d(np.asarray(X, dtype=float))
    diff = X[:, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class KernelMatrix:
    """Gram matrix plus the jitter that made it factorizable.

    ``gram`` includes the extra diagonal (``sigma_f^2`` for the latent GP)
    but not the jitter; ``chol @ chol.T == gram + jitter * I``.
    """

    gram: np.ndarray
    jitter: float
    chol: np.ndarray
    logdet: float
    extra_diag: float = 0.0

    @property
    def size(self):
        return self.gram.shape[0]

    @property
    def matrix(self):
        return self.gram + self.jitter * np.eye(self.size)

    def solve(self, rhs):
        return cho_solve((self.chol, True), rhs)

    def half_solve(self, rhs):
        """``chol^{-1} rhs``."""
        return solve_triangular(self.chol, rhs, lower=True)

    def inverse(self):
        return self.solve(np.eye(self.size))


def rbf_gram(X, hyper):
    d2 = _pairwise_sq(X)
    return hyper.amplitude**2 * np.exp(-0.5 * d2 / hyper.lengthscale**2)


def gram(X, hyper, extra_diag=0.0, jitter=None):
    """Gram matrix of ``X`` (N x p) with a cached Cholesky factor.

    ``jitter`` is the absolute diagonal addition tried first; it defaults to
    ``1e-8 a^2``.  On failure the jitter is escalated by factors of ten up to
    ``1e-4 a^2`` before giving up.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 1:
        raise ValueError("gram needs at least one input row")
    amp2 = hyper.amplitude**2
    start = JITTER_START * amp2 if jitter is None else float(jitter)
    if start < 0:
        raise ValueError("jitter must be non-negative")
    K = rbf_gram(X, hyper)
    K[np.diag_indices_from(K)] += extra_diag
    for level in _jitter_ladder(start, amp2):
        try:
            L = np.linalg.cholesky(K + level * np.eye(K.shape[0]))
        except np.linalg.LinAlgError:
            continue
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        return KernelMatrix(K, level, L, logdet, float(extra_diag))
    raise NumericalError(
        f"Gram matrix not positive definite even with jitter {JITTER_MAX * amp2:.3g}"
    )


def _jitter_ladder(start, amp2):
    yield start
    level = JITTER_START * amp2
    while level <= JITTER_MAX * amp2 * (1 + 1e-12):
        if level > start:
            yield level
        level *= 10.0


def cross_gram(X_train, X_test, hyper):
    """``[i, j] = k(x_i, x*_j)``; no noise, no jitter."""
    d2 = sq_dists(X_train, X_test)
    return hyper.amplitude**2 * np.exp(-0.5 * d2 / hyper.lengthscale**2)


def gram_grad(X, hyper):
    """``(dK/dlog l, dK/dlog a)`` for the noise-free RBF Gram matrix."""
    d2 = _pairwise_sq(X)
    K = hyper.amplitude**2 * np.exp(-0.5 * d2 / hyper.lengthscale**2)
    return K * d2 / hyper.lengthscale**2, 2.0 * K
