"""Hand-derived gradient of the structured ELBO.

All gradients are with respect to the unconstrained coordinates of a
:class:`~gprn.posterior.ParamVector`.  For a covariance ``G = L L^T`` with
symmetric adjoint ``A = dObj/dG`` the factor adjoint is ``2 A L``; for a
log-diagonal entry it is ``(dObj/dL_ii) L_ii``.
"""

import math

import numpy as np

from .elbo import ElboBreakdown
from .errors import NumericalError
from .kernels import gram_grad
from .model import kernel_matrices
from .posterior import unpack


def _chol_grad(L, dL, logdiag_grad=None):
    dim = L.shape[0]
    out = dL.copy()
    out[np.diag_indices(dim)] *= np.diag(L)
    if logdiag_grad is not None:
        out[np.diag_indices(dim)] += logdiag_grad
    return out[np.tril_indices(dim)]


def _kernel_hyper_grad(X, theta, Kmat, adj):
    """``(d/dlog l, d/dlog a)`` of ``sum(adj * K)``; jitter scales with a^2."""
    dK_l, dK_a = gram_grad(X, theta)
    g_l = float(np.sum(adj * dK_l))
    g_a = float(np.sum(adj * dK_a)) + 2.0 * Kmat.jitter * float(np.trace(adj))
    return g_l, g_a


def _prod_except(values, skip):
    return float(np.prod([v for j, v in enumerate(values) if j != skip]))


def elbo_and_grad_parts(params, data, jitter=1e-8, kernels=None):
    """ELBO breakdown and a gradient vector for each of its three parts.

    Returns ``(breakdown, {"exp_loglik": g, "kl_w": g, "kl_f": g})``.
    ``kernels`` reuses precomputed ``(Kf, Kw)`` at the current hyperparameters.
    """
    layout = params.layout
    segs = layout.segments()
    qF, qW, hyper = unpack(params)
    X, Y = data.X, data.Y
    N, K, D = layout.N, layout.K, layout.D
    total = N * K * D
    hs = segs["hyper"].start
    Kf, Kw = kernel_matrices(X, hyper, jitter) if kernels is None else kernels

    U, V, M = qF.row_chol.lower, qF.col_chol.lower, qF.mean
    Sigma, Om = U @ U.T, V @ V.T
    Ls = [c.lower for c in qW.mode_chols]
    Gs = [L @ L.T for L in Ls]
    trs = [float(np.trace(G)) for G in Gs]
    dims = layout.mode_dims

    # KL(q(F) || p(F))
    g_kf = np.zeros(layout.total)
    Kf_inv = Kf.inverse()
    trKS = float(np.sum(Kf_inv * Sigma))
    trOm = float(np.trace(Om))
    Bf = Kf.solve(M)
    kl_f = 0.5 * (trKS * trOm + float(np.sum(M * Bf)) + K * Kf.logdet
                  - K * qF.row_chol.logdet() - N * qF.col_chol.logdet() - N * K)
    g_kf[segs["qf_mean"]] = Bf.ravel()
    g_kf[segs["qf_row"]] = _chol_grad(U, trOm * Kf_inv @ U, np.full(N, -float(K)))
    g_kf[segs["qf_col"]] = _chol_grad(V, trKS * V, np.full(K, -float(N)))
    adj_Kf = 0.5 * (-trOm * Kf_inv @ Sigma @ Kf_inv - Bf @ Bf.T + K * Kf_inv)
    g_l, g_a = _kernel_hyper_grad(X, hyper.theta_f, Kf, adj_Kf)
    g_kf[hs + 0], g_kf[hs + 1] = g_l, g_a
    g_kf[hs + 4] = 2.0 * hyper.sigma_f**2 * float(np.trace(adj_Kf))

    # KL(q(W) || p(W))
    g_kw = np.zeros(layout.total)
    Kw_inv = Kw.inverse()
    rest = _prod_except(trs, 0)
    A_w = float(np.sum(Kw_inv * Gs[0]))
    U1 = qW.mean.reshape(N, -1)
    Bw = Kw.solve(U1)
    logdet_q = sum(total // d * 2.0 * float(np.sum(np.log(np.diag(L))))
                   for d, L in zip(dims, Ls))
    kl_w = 0.5 * (A_w * rest + float(np.sum(U1 * Bw)) + D * K * Kw.logdet
                  - logdet_q - total)
    g_kw[segs["qw_mean"]] = Bw.ravel()
    g_kw[segs["qw_chol0"]] = _chol_grad(Ls[0], rest * Kw_inv @ Ls[0],
                                        np.full(N, -float(total // N)))
    for m in range(1, len(Ls)):
        others = _prod_except(trs[1:], m - 1)
        g_kw[segs[f"qw_chol{m}"]] = _chol_grad(
            Ls[m], A_w * others * Ls[m], np.full(dims[m], -float(total // dims[m])))
    adj_Kw = 0.5 * (-rest * Kw_inv @ Gs[0] @ Kw_inv - Bw @ Bw.T + D * K * Kw_inv)
    g_l, g_a = _kernel_hyper_grad(X, hyper.theta_w, Kw, adj_Kw)
    g_kw[hs + 2], g_kw[hs + 3] = g_l, g_a

    # E_q[log p(Y | W, F)]
    g_ll = np.zeros(layout.total)
    sy = hyper.sigma_y
    c = 0.5 / sy**2
    Tk = qW.mean.reshape(N, K, D)
    gamma = np.einsum("ij,ij->i", Ls[0], Ls[0])
    s = np.einsum("ij,ij->i", U, U)
    G2 = Gs[1]
    out_trs = trs[2:]
    tD = float(np.prod(out_trs))
    cGO = float(np.sum(G2 * Om))
    R = Y - np.einsum("nki,nk->ni", Tk, M)
    wgram = np.einsum("nki,nli->nkl", Tk, Tk)
    q = np.einsum("nk,kl,nl->n", M, G2, M)
    z = np.einsum("nkl,kl->n", wgram, Om)
    gs = float(gamma @ s)
    S = math.fsum(np.sum(R**2, axis=1) + tD * cGO * gamma * s + tD * gamma * q + s * z)
    exp_ll = -0.5 * N * D * math.log(2 * math.pi) - N * D * math.log(sy) - c * S

    dS_T = (-2.0 * np.einsum("ni,nk->nki", R, M)
            + 2.0 * s[:, None, None] * np.einsum("kl,nli->nki", Om, Tk))
    dS_M = -2.0 * np.einsum("ni,nki->nk", R, Tk) + 2.0 * tD * gamma[:, None] * (M @ G2)
    dS_gamma = tD * cGO * s + tD * q
    dS_s = tD * cGO * gamma + z
    dS_G2 = tD * (gs * Om + M.T @ (gamma[:, None] * M))
    dS_Om = tD * gs * G2 + np.einsum("n,nkl->kl", s, wgram)
    dS_tD = cGO * gs + float(gamma @ q)

    g_ll[segs["qw_mean"]] = -c * dS_T.ravel()
    g_ll[segs["qf_mean"]] = -c * dS_M.ravel()
    g_ll[segs["qw_chol0"]] = _chol_grad(Ls[0], -c * 2.0 * dS_gamma[:, None] * Ls[0])
    g_ll[segs["qf_row"]] = _chol_grad(U, -c * 2.0 * dS_s[:, None] * U)
    g_ll[segs["qw_chol1"]] = _chol_grad(Ls[1], -c * 2.0 * dS_G2 @ Ls[1])
    g_ll[segs["qf_col"]] = _chol_grad(V, -c * 2.0 * dS_Om @ V)
    for j, m in enumerate(range(2, len(Ls))):
        dtD = 2.0 * _prod_except(out_trs, j) * Ls[m]
        g_ll[segs[f"qw_chol{m}"]] = _chol_grad(Ls[m], -c * dS_tD * dtD)
    g_ll[hs + 5] = -N * D + S / sy**2

    breakdown = ElboBreakdown(kl_w=float(kl_w), kl_f=float(kl_f), exp_loglik=float(exp_ll))
    return breakdown, {"exp_loglik": g_ll, "kl_w": g_kw, "kl_f": g_kf}


def elbo_and_grad(params, data, jitter=1e-8, kernels=None):
    breakdown, parts = elbo_and_grad_parts(params, data, jitter, kernels)
    grad = parts["exp_loglik"] - parts["kl_w"] - parts["kl_f"]
    if not (np.isfinite(breakdown.total) and np.all(np.isfinite(grad))):
        raise NumericalError("non-finite ELBO or gradient", state=params)
    return breakdown, grad


def elbo_gradient(params, data, spec=None, jitter=1e-8):
    """Gradient of the ELBO total with respect to every unconstrained coordinate."""
    return elbo_and_grad(params, data, jitter)[1]
