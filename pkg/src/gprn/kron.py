"""Kronecker-structured Gaussian algebra.

Conventions used throughout the package:

* Tensors are stored C-ordered, so ``vec(T) = T.ravel()`` lets the *last*
  mode vary fastest.  Under this convention the covariance of ``vec(T)`` for
  a tensor normal with per-mode covariances ``G_1, ..., G_P`` is
  ``G_1 (x) G_2 (x) ... (x) G_P`` in that order.
* Modes are 0-based.  ``mode_unfold(T, m)`` puts mode ``m`` on the rows and
  orders the columns lexicographically over the remaining modes (slowest
  varying first), i.e. ``np.moveaxis(T, m, 0).reshape(d_m, -1)``.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular factor ``L`` of a covariance ``L @ L.T``.

    Optimizers see the factor through :meth:`to_unconstrained`: the
    strictly-lower entries as-is and the diagonal as ``log(L_ii)``.
    """

    lower: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        if lower.ndim != 2 or lower.shape[0] != lower.shape[1]:
            raise ValueError(f"Cholesky factor must be square, got {lower.shape}")
        if np.any(np.triu(lower, 1) != 0.0):
            raise ValueError("Cholesky factor must be lower triangular")
        if np.any(np.diag(lower) < 0.0):
            raise ValueError("Cholesky factor needs a non-negative diagonal")
        object.__setattr__(self, "lower", lower)

    @classmethod
    def identity(cls, dim, scale=1.0):
        return cls(scale * np.eye(dim))

    @classmethod
    def from_unconstrained(cls, values, dim):
        values = np.asarray(values, dtype=float)
        if values.shape != (n_tril(dim),):
            raise ValueError(f"expected {n_tril(dim)} values for dim {dim}, got {values.shape}")
        lower = np.zeros((dim, dim))
        rows, cols = np.tril_indices(dim)
        lower[rows, cols] = values
        lower[np.diag_indices(dim)] = np.exp(np.diag(lower))
        return cls(lower)

    @classmethod
    def from_cov(cls, cov):
        return cls(np.linalg.cholesky(np.asarray(cov, dtype=float)))

    def to_unconstrained(self):
        tril = self.lower.copy()
        with np.errstate(divide="ignore"):
            tril[np.diag_indices(self.dim)] = np.log(np.diag(self.lower))
        return tril[np.tril_indices(self.dim)]

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def cov(self):
        return self.lower @ self.lower.T

    @property
    def diag(self):
        """Diagonal of the covariance, without forming it."""
        return np.einsum("ij,ij->i", self.lower, self.lower)

    def logdet(self):
        with np.errstate(divide="ignore"):
            return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def trace(self):
        return float(np.sum(self.lower**2))


def n_tril(dim):
    """Number of free entries in a ``dim x dim`` lower-triangular factor."""
    return dim * (dim + 1) // 2


@dataclass(frozen=True)
class KronCov:
    """Covariance ``cov(f_0) (x) cov(f_1) (x) ...`` kept in factored form."""

    factors: tuple

    def __post_init__(self):
        if len(self.factors) == 0:
            raise ValueError("KronCov needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def dims(self):
        return tuple(f.dim for f in self.factors)

    @property
    def total_dim(self):
        return int(np.prod(self.dims))


def kron_logdet(cov):
    """``log|G_1 (x) ... (x) G_P| = sum_m (total/d_m) log|G_m|``."""
    total = cov.total_dim
    return float(sum(total // f.dim * f.logdet() for f in cov.factors))


def kron_trace(cov):
    return float(np.prod([f.trace() for f in cov.factors]))


def mode_unfold(tensor, mode):
    tensor = np.asarray(tensor)
    _check_mode(tensor, mode)
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1)


def mode_fold(matrix, mode, shape):
    """Inverse of :func:`mode_unfold` for a tensor of the given ``shape``."""
    shape = tuple(shape)
    if not 0 <= mode < len(shape):
        raise IndexError(f"mode {mode} out of range for {len(shape)}-way tensor")
    moved = (shape[mode],) + shape[:mode] + shape[mode + 1:]
    return np.moveaxis(np.reshape(matrix, moved), 0, mode)


def slice_mode1(tensor, n):
    """The ``n``-th slice along the leading mode (the data-point axis)."""
    tensor = np.asarray(tensor)
    if not 0 <= n < tensor.shape[0]:
        raise IndexError(f"slice {n} out of range for leading dimension {tensor.shape[0]}")
    return tensor[n]


def slice_as_matrix(tensor_slice):
    """Reshape a ``K x d_1 x ... x d_M`` slice into the ``D x K`` weight matrix.

    Row ``i`` is the output whose tensor coordinates are
    ``np.unravel_index(i, (d_1, ..., d_M))``.
    """
    tensor_slice = np.asarray(tensor_slice)
    return tensor_slice.reshape(tensor_slice.shape[0], -1).T


def fiber(tensor, fixed_indices):
    """Vector along the single mode whose entry in ``fixed_indices`` is None."""
    tensor = np.asarray(tensor)
    fixed_indices = tuple(fixed_indices)
    if len(fixed_indices) != tensor.ndim:
        raise ValueError(f"need {tensor.ndim} indices, got {len(fixed_indices)}")
    free = [m for m, idx in enumerate(fixed_indices) if idx is None]
    if len(free) != 1:
        raise ValueError("exactly one mode must be left free (None)")
    for m, idx in enumerate(fixed_indices):
        if idx is not None and not 0 <= idx < tensor.shape[m]:
            raise IndexError(f"index {idx} out of range for mode {m} of size {tensor.shape[m]}")
    key = tuple(slice(None) if idx is None else idx for idx in fixed_indices)
    return tensor[key]


def multilinear(tensor, matrices, offset=0):
    """Apply ``matrices[j]`` along mode ``offset + j`` of ``tensor``.

    ``offset`` lets a leading batch axis pass through untouched.
    """
    out = np.asarray(tensor, dtype=float)
    for j, mat in enumerate(matrices):
        axis = offset + j
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [axis])), 0, axis)
    return out


def sample_kron_normal(mean, cov, seed, count):
    """Draw ``count`` tensors from ``N(vec(mean), cov)``.

    Each draw is ``mean + Z x_1 L_1 x_2 L_2 ...`` with ``Z`` standard normal.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    mean = np.asarray(mean, dtype=float)
    if mean.shape != cov.dims:
        raise ValueError(f"mean shape {mean.shape} does not match factor dims {cov.dims}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count,) + mean.shape)
    draws = mean + multilinear(z, [f.lower for f in cov.factors], offset=1)
    return list(draws)


def _check_mode(tensor, mode):
    if not 0 <= mode < tensor.ndim:
        raise IndexError(f"mode {mode} out of range for {tensor.ndim}-way tensor")
