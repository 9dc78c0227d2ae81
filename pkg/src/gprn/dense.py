"""Dense brute-force counterparts of the structured computations.

These expand every Kronecker product explicitly and are meant for tests and
the ``oracle`` command only; they refuse anything larger than
``MAX_DENSE_DIM`` so they never end up on a production path.
"""

from dataclasses import dataclass
from functools import reduce
import math

import numpy as np

from .errors import OracleFailure
from .kernels import rbf_gram

MAX_DENSE_DIM = 4096


def _guard(dim):
    if dim > MAX_DENSE_DIM:
        raise ValueError(f"dense expansion of dimension {dim} exceeds {MAX_DENSE_DIM}")


def dense_kron(mats):
    mats = [np.asarray(m, dtype=float) for m in mats]
    _guard(int(np.prod([m.shape[0] for m in mats])))
    return reduce(np.kron, mats)


def dense_cov(kron_cov):
    return dense_kron([f.cov for f in kron_cov.factors])


@dataclass(frozen=True)
class DenseGaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.asarray(self.cov, dtype=float)
        _guard(mean.size)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def kl(self, other):
        """KL(self || other), textbook dense formula."""
        d = self.mean.size
        L0 = np.linalg.cholesky(self.cov)
        L1 = np.linalg.cholesky(other.cov)
        A = np.linalg.solve(L1, L0)
        diff = np.linalg.solve(L1, other.mean - self.mean)
        logdet0 = 2 * np.sum(np.log(np.diag(L0)))
        logdet1 = 2 * np.sum(np.log(np.diag(L1)))
        return 0.5 * float(np.sum(A**2) + diff @ diff - d + logdet1 - logdet0)

    def logpdf(self, x):
        L = np.linalg.cholesky(self.cov)
        r = np.linalg.solve(L, np.asarray(x, dtype=float).ravel() - self.mean)
        return float(-0.5 * r @ r - np.sum(np.log(np.diag(L)))
                     - 0.5 * self.mean.size * math.log(2 * math.pi))


def dense_priors(X, hyper, K, D, jitter=1e-8):
    """Dense priors over vec(F) (N*K) and vec(W) (N*K*D), C-ordered."""
    N = np.atleast_2d(X).shape[0]
    Kf = rbf_gram(X, hyper.theta_f)
    Kf = Kf + (hyper.sigma_f**2 + jitter * hyper.theta_f.amplitude**2) * np.eye(N)
    Kw = rbf_gram(X, hyper.theta_w) + jitter * hyper.theta_w.amplitude**2 * np.eye(N)
    pF = DenseGaussian(np.zeros(N * K), dense_kron([Kf, np.eye(K)]))
    pW = DenseGaussian(np.zeros(N * K * D), dense_kron([Kw, np.eye(K * D)]))
    return pF, pW


def dense_posteriors(qF, qW):
    dF = DenseGaussian(qF.mean.ravel(), dense_cov(qF.cov))
    dW = DenseGaussian(qW.mean.ravel(), dense_cov(qW.cov))
    return dF, dW


def dense_expected_loglik(dF, dW, Y, sigma_y, K):
    """Likelihood expectation by explicit moment algebra over vec(W), vec(F)."""
    Y = np.asarray(Y, dtype=float)
    N, D = Y.shape
    EW = dW.mean.reshape(N, K, D)
    EF = dF.mean.reshape(N, K)
    CW = dW.cov.reshape(N, K, D, N, K, D)
    CF = dF.cov.reshape(N, K, N, K)
    S = 0.0
    for n in range(N):
        EFF = np.outer(EF[n], EF[n]) + CF[n, :, n, :]
        for i in range(D):
            EWW = np.outer(EW[n, :, i], EW[n, :, i]) + CW[n, :, i, n, :, i]
            S += Y[n, i] ** 2 - 2 * Y[n, i] * (EW[n, :, i] @ EF[n]) + np.sum(EWW * EFF)
    return (-0.5 * N * D * math.log(2 * math.pi) - N * D * math.log(sigma_y)
            - 0.5 * S / sigma_y**2)


def dense_oracle_elbo(qF, qW, hyper, data, spec=None, jitter=1e-8):
    """ELBO with no structured shortcut; returns ``(total, parts)``."""
    N, K = qF.mean.shape
    D = data.Y.shape[1]
    _guard(N * K * D)
    dF, dW = dense_posteriors(qF, qW)
    pF, pW = dense_priors(data.X, hyper, K, D, jitter)
    parts = {
        "kl_w": dW.kl(pW),
        "kl_f": dF.kl(pF),
        "exp_loglik": dense_expected_loglik(dF, dW, data.Y, hyper.sigma_y, K),
    }
    return parts["exp_loglik"] - parts["kl_w"] - parts["kl_f"], parts


def random_instance(rng, N, K, dims, p=2):
    """Random posterior state, hyperparameters and data for equivalence checks."""
    from .model import Dataset, GprnHyper, TensorizationSpec
    from .posterior import ParamVector, init_posteriors, pack, unpack

    spec = TensorizationSpec(dims)
    qF, qW = init_posteriors(N, K, spec, rng.integers(2**31), mean_scale=1.0, cov_scale=1.0)
    hyper = GprnHyper.from_values(*np.exp(rng.uniform(-0.7, 0.7, size=6)))
    params = pack(qF, qW, hyper)
    values = params.values + 0.4 * rng.standard_normal(params.values.size)
    params = ParamVector(values, params.layout)
    data = Dataset(rng.standard_normal((N, p)), rng.standard_normal((N, spec.D)))
    return params, data, spec, unpack(params)


def run_oracle_suite(n_instances=100, seed=0, rtol=1e-9, max_N=4, max_K=2, max_D=8):
    """Structured vs dense ELBO on random instances with M = 2.

    Returns a list of ``(instance, relative_error)``; raises OracleFailure if
    any instance exceeds ``rtol``.
    """
    from .elbo import elbo

    rng = np.random.default_rng(seed)
    grid = [(a, b) for a in range(1, max_D + 1) for b in range(1, max_D + 1) if a * b <= max_D]
    results = []
    for idx in range(n_instances):
        N = int(rng.integers(1, max_N + 1))
        K = int(rng.integers(1, max_K + 1))
        dims = grid[int(rng.integers(len(grid)))]
        _, data, spec, (qF, qW, hyper) = random_instance(rng, N, K, dims)
        structured = elbo(qF, qW, hyper, data, spec).total
        oracle, _ = dense_oracle_elbo(qF, qW, hyper, data, spec)
        rel = abs(structured - oracle) / max(abs(oracle), 1e-300)
        results.append(((N, K, dims), rel))
    worst = max(rel for _, rel in results)
    if worst > rtol:
        raise OracleFailure(f"structured ELBO deviates from dense oracle: worst rel. error {worst:.3e}")
    return results
