"""The GPRN generative model.

Outputs are ``y(x) = W(x) [f(x) + sigma_f eps] + sigma_y z`` where every
latent ``f_k`` and every weight ``w_ik`` is an independent GP.  The ``D``
outputs are laid out on a ``d_1 x ... x d_M`` grid; output ``i`` sits at
``np.unravel_index(i, dims)`` (last mode fastest).
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError, DataError
from .kernels import RbfHyper, gram, noisy_latent_kernel

# log-noise floor; sigma -> 0 makes the likelihood singular
LOG_NOISE_FLOOR = -10.0


@dataclass(frozen=True)
class GprnHyper:
    theta_f: RbfHyper = field(default_factory=RbfHyper)
    theta_w: RbfHyper = field(default_factory=RbfHyper)
    log_sigma_f: float = math.log(0.1)
    log_sigma_y: float = math.log(0.1)

    SIZE = 6

    @property
    def sigma_f(self):
        return float(np.exp(self.log_sigma_f))

    @property
    def sigma_y(self):
        return float(np.exp(self.log_sigma_y))

    def to_array(self):
        return np.array([
            self.theta_f.log_lengthscale,
            self.theta_f.log_amplitude,
            self.theta_w.log_lengthscale,
            self.theta_w.log_amplitude,
            self.log_sigma_f,
            self.log_sigma_y,
        ])

    @classmethod
    def from_array(cls, values):
        v = [float(x) for x in np.asarray(values, dtype=float)]
        if len(v) != cls.SIZE:
            raise ValueError(f"expected {cls.SIZE} hyperparameters, got {len(v)}")
        return cls(RbfHyper(v[0], v[1]), RbfHyper(v[2], v[3]), v[4], v[5])

    @classmethod
    def from_values(cls, lengthscale_f=1.0, amplitude_f=1.0, lengthscale_w=1.0,
                    amplitude_w=1.0, sigma_f=0.1, sigma_y=0.1):
        """Build from positive (not log) values."""
        logs = np.log([lengthscale_f, amplitude_f, lengthscale_w, amplitude_w,
                       max(sigma_f, 1e-300), max(sigma_y, 1e-300)])
        return cls.from_array(logs)


@dataclass(frozen=True)
class TensorizationSpec:
    """Grid ``dims`` for the ``D`` outputs, with the flat <-> grid index maps."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise ConfigError(f"tensorization dims must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def D(self):
        return int(np.prod(self.dims))

    @property
    def M(self):
        return len(self.dims)

    def flat_to_multi(self, i):
        return np.unravel_index(i, self.dims)

    def multi_to_flat(self, coords):
        return np.ravel_multi_index(tuple(coords), self.dims)


def make_tensorization(D, M=None, dims=None):
    """Tensorize ``D`` outputs either as ``M`` equal modes or explicit ``dims``."""
    D = int(D)
    if (M is None) == (dims is None):
        raise ConfigError("give exactly one of M or dims")
    if dims is not None:
        spec = TensorizationSpec(dims)
        if spec.D != D:
            raise ConfigError(f"dims {spec.dims} multiply to {spec.D}, not D={D}")
        return spec
    M = int(M)
    if M < 1:
        raise ConfigError("M must be positive")
    d = round(D ** (1.0 / M))
    for cand in (d - 1, d, d + 1):
        if cand >= 1 and cand**M == D:
            return TensorizationSpec((cand,) * M)
    raise ConfigError(f"D={D} is not a perfect {M}-th power; pass explicit dims")


@dataclass(frozen=True)
class Normalization:
    """Per-column input standardization learned on the training inputs."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def invert(self, X):
        return np.asarray(X, dtype=float) * self.std + self.mean


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    normalization: Normalization = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataError("dataset contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def D(self):
        return self.Y.shape[1]


def kernel_matrices(X, hyper, jitter=1e-8):
    """``(K_fhat, K_w)`` at the training inputs.

    ``jitter`` is relative to each kernel's ``a^2``; keeping it proportional
    makes ``dK/dlog a`` exact through the jitter as well.
    """
    Kf = gram(X, hyper.theta_f, extra_diag=hyper.sigma_f**2,
              jitter=jitter * hyper.theta_f.amplitude**2)
    Kw = gram(X, hyper.theta_w, jitter=jitter * hyper.theta_w.amplitude**2)
    return Kf, Kw


def sample_gprn(X, hyper, K, spec, seed, weights=None, latents=None):
    """Draw a synthetic dataset from the prior.

    Returns ``(dataset, W, F)`` with ``W`` of shape ``(N, K, *spec.dims)`` and
    ``F`` the ``N x K`` noisy latents ``fhat``.  ``weights`` / ``latents``
    replace the corresponding draw with fixed values.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    if N < 1 or K < 1:
        raise ValueError("need N >= 1 and K >= 1")
    rng = np.random.default_rng(seed)
    Kf, Kw = kernel_matrices(X, hyper)
    if latents is None:
        F = Kf.chol @ rng.standard_normal((N, K))
    else:
        F = np.asarray(latents, dtype=float).reshape(N, K)
    if weights is None:
        z = rng.standard_normal((N, K * spec.D))
        W = (Kw.chol @ z).reshape((N, K) + spec.dims)
    else:
        W = np.asarray(weights, dtype=float).reshape((N, K) + spec.dims)
    Wn = W.reshape(N, K, spec.D)
    Y = np.einsum("nki,nk->ni", Wn, F)
    Y = Y + hyper.sigma_y * rng.standard_normal(Y.shape)
    return Dataset(X, Y), W, F


def sample_outputs(X, W_values, hyper, seed, size):
    """``size`` output draws at fixed weights, marginalizing the latents.

    ``W_values`` is ``(N, D, K)``.  Returns an array ``(size, N, D)``.
    """
    W_values = np.asarray(W_values, dtype=float)
    Kf, _ = kernel_matrices(X, hyper, jitter=0.0)
    rng = np.random.default_rng(seed)
    N, D, K = W_values.shape
    F = np.einsum("ab,sbk->sak", Kf.chol, rng.standard_normal((size, N, K)))
    Y = np.einsum("nik,snk->sni", W_values, F)
    return Y + hyper.sigma_y * rng.standard_normal(Y.shape)


def output_cross_cov(i, j, a, b, W_values, X, hyper):
    """``cov(y_i(x_a), y_j(x_b))`` given the weights.

    ``W_values`` is ``(N, D, K)``: the weight matrices at each data point.
    ``a``/``b`` are data-point indices; the latent noise switches on for
    a == b and the output noise for (a, i) == (b, j).
    """
    W_values = np.asarray(W_values, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    same = a == b
    kf = noisy_latent_kernel(X[a], X[b], hyper.theta_f, hyper.sigma_f, same)
    value = float(np.dot(W_values[a, i, :], W_values[b, j, :])) * kf
    if same and i == j:
        value += hyper.sigma_y**2
    return value
