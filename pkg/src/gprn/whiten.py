"""Whitened coordinates for the posterior means, used by the optimizer.

Training steps on ``Mt = Lf^-1 M`` and ``Ut = Lw^-1 unfold_1(mean W)`` instead
of the raw means, where ``Lf``, ``Lw`` are the Cholesky factors of the priors
at the current hyperparameters.  The ELBO is the same function; only the
coordinates differ.  In raw coordinates the prior precision ``K^-1`` has
eigenvalues up to ``1 / jitter``, which makes full-batch Adam oscillate in the
rough directions of the means; in whitened coordinates the mean KL term is
just ``||Mt||^2 / 2``.  Covariance factors and hyperparameters are unchanged,
so the diagonal ablation still constrains the actual covariances.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .gradient import _kernel_hyper_grad, elbo_and_grad
from .model import GprnHyper, kernel_matrices
from .posterior import ParamVector


def _hyper_from_values(values, layout):
    return GprnHyper.from_array(values[layout.segments()["hyper"]])


def _means(values, layout):
    segs = layout.segments()
    N = layout.N
    return values[segs["qf_mean"]].reshape(N, -1), values[segs["qw_mean"]].reshape(N, -1)


def _with_means(values, layout, f_mean, w_mean):
    segs = layout.segments()
    out = np.array(values, dtype=float, copy=True)
    out[segs["qf_mean"]] = f_mean.ravel()
    out[segs["qw_mean"]] = w_mean.ravel()
    return out


def to_whitened(params, X, jitter=1e-8, kernels=None):
    """Raw ParamVector -> whitened coordinate array (same layout)."""
    layout = params.layout
    Kf, Kw = kernels or kernel_matrices(X, _hyper_from_values(params.values, layout), jitter)
    M, U1 = _means(params.values, layout)
    return _with_means(params.values, layout,
                       solve_triangular(Kf.chol, M, lower=True),
                       solve_triangular(Kw.chol, U1, lower=True))


def from_whitened(values, layout, X, jitter=1e-8, kernels=None):
    Kf, Kw = kernels or kernel_matrices(X, _hyper_from_values(values, layout), jitter)
    Mt, Ut = _means(values, layout)
    return ParamVector(_with_means(values, layout, Kf.chol @ Mt, Kw.chol @ Ut), layout)


def _phi(B):
    # adjoint of the Cholesky differential: lower triangle, halved diagonal
    C = np.tril(B)
    C[np.diag_indices_from(C)] *= 0.5
    return C


def _factor_adjoint(L, A):
    """Symmetric ``dObj/dK`` given ``A = dObj/dL`` for ``L = chol(K)``."""
    C = _phi(L.T @ A)
    Linv_T_C = solve_triangular(L, C, lower=True, trans="T")
    adj = solve_triangular(L, Linv_T_C.T, lower=True, trans="T").T
    return 0.5 * (adj + adj.T)


def whitened_elbo_and_grad(values, layout, data, jitter=1e-8):
    """``(breakdown, gradient in whitened coordinates, raw ParamVector)``."""
    hyper = _hyper_from_values(values, layout)
    kernels = kernel_matrices(data.X, hyper, jitter)
    Kf, Kw = kernels
    raw = from_whitened(values, layout, data.X, jitter, kernels)
    breakdown, grad = elbo_and_grad(raw, data, jitter, kernels)

    segs = layout.segments()
    N = layout.N
    Mt, Ut = _means(values, layout)
    gM = grad[segs["qf_mean"]].reshape(N, -1)
    gU = grad[segs["qw_mean"]].reshape(N, -1)
    out = grad.copy()
    out[segs["qf_mean"]] = (Kf.chol.T @ gM).ravel()
    out[segs["qw_mean"]] = (Kw.chol.T @ gU).ravel()

    # raw mean = L(theta) @ whitened mean, so the hyperparameters pick up
    # an extra path through the prior Cholesky factors
    hs = segs["hyper"].start
    adj_f = _factor_adjoint(Kf.chol, gM @ Mt.T)
    g_l, g_a = _kernel_hyper_grad(data.X, hyper.theta_f, Kf, adj_f)
    out[hs + 0] += g_l
    out[hs + 1] += g_a
    out[hs + 4] += 2.0 * hyper.sigma_f**2 * float(np.trace(adj_f))
    adj_w = _factor_adjoint(Kw.chol, gU @ Ut.T)
    g_l, g_a = _kernel_hyper_grad(data.X, hyper.theta_w, Kw, adj_w)
    out[hs + 2] += g_l
    out[hs + 3] += g_a
    return breakdown, out, raw
