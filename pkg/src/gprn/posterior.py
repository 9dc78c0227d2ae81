"""Matrix-normal q(F), tensor-normal q(W), and their flat parameter layout."""

from dataclasses import dataclass

import numpy as np

from .kron import CholFactor, KronCov, n_tril, slice_as_matrix, slice_mode1
from .model import GprnHyper


@dataclass(frozen=True)
class MatrixNormalPosterior:
    """q(F) = N(vec(F) | vec(mean), Sigma (x) Omega) for the N x K latents."""

    mean: np.ndarray
    row_chol: CholFactor
    col_chol: CholFactor

    @property
    def cov(self):
        return KronCov((self.row_chol, self.col_chol))


@dataclass(frozen=True)
class TensorNormalPosterior:
    """q(W) over the ``N x K x d_1 x ... x d_M`` weight tensor.

    ``mode_chols`` holds one factor per mode in the same order as the mean
    axes: data points, latents, then the output grid.
    """

    mean: np.ndarray
    mode_chols: tuple

    def __post_init__(self):
        object.__setattr__(self, "mode_chols", tuple(self.mode_chols))
        dims = tuple(c.dim for c in self.mode_chols)
        if np.shape(self.mean) != dims:
            raise ValueError(f"mean shape {np.shape(self.mean)} vs factor dims {dims}")

    @property
    def cov(self):
        return KronCov(self.mode_chols)

    @property
    def output_cov(self):
        """Covariance over the D outputs, ``G_3 (x) ... (x) G_{M+2}``."""
        return KronCov(self.mode_chols[2:])


@dataclass(frozen=True)
class Layout:
    """Segment map of the flat parameter vector.

    Order: q(F) mean, q(F) row factor, q(F) column factor, q(W) mean, q(W)
    mode factors, then the six log-hyperparameters.  Means are C-ordered;
    factors use ``np.tril_indices`` order with log-diagonals.
    """

    N: int
    K: int
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def D(self):
        return int(np.prod(self.dims))

    @property
    def mode_dims(self):
        return (self.N, self.K) + self.dims

    def sizes(self):
        out = [("qf_mean", self.N * self.K),
               ("qf_row", n_tril(self.N)),
               ("qf_col", n_tril(self.K)),
               ("qw_mean", self.N * self.K * self.D)]
        out += [(f"qw_chol{m}", n_tril(d)) for m, d in enumerate(self.mode_dims)]
        out.append(("hyper", GprnHyper.SIZE))
        return out

    def segments(self):
        segs, start = {}, 0
        for name, size in self.sizes():
            segs[name] = slice(start, start + size)
            start += size
        return segs

    @property
    def total(self):
        return sum(size for _, size in self.sizes())

    @property
    def qw_cov_count(self):
        return sum(n_tril(d) for d in self.mode_dims)

    @property
    def qf_count(self):
        return self.N * self.K + n_tril(self.N) + n_tril(self.K)

    def chol_names(self):
        return ["qf_row", "qf_col"] + [f"qw_chol{m}" for m in range(len(self.mode_dims))]

    def chol_dims(self):
        return dict(zip(self.chol_names(), (self.N, self.K) + self.mode_dims))

    def offdiag_mask(self):
        """Boolean mask of the strictly-lower Cholesky coordinates."""
        mask = np.zeros(self.total, dtype=bool)
        segs = self.segments()
        for name, dim in self.chol_dims().items():
            rows, cols = np.tril_indices(dim)
            mask[segs[name]] = rows != cols
        return mask

    def hyper_index(self, name):
        names = ["log_lengthscale_f", "log_amplitude_f", "log_lengthscale_w",
                 "log_amplitude_w", "log_sigma_f", "log_sigma_y"]
        return self.segments()["hyper"].start + names.index(name)

    def to_dict(self):
        return {"N": self.N, "K": self.K, "dims": list(self.dims),
                "segments": [[name, size] for name, size in self.sizes()]}

    @classmethod
    def from_dict(cls, d):
        layout = cls(int(d["N"]), int(d["K"]), tuple(d["dims"]))
        if "segments" in d and [list(s) for s in d["segments"]] != [list(s) for s in layout.to_dict()["segments"]]:
            raise ValueError("stored layout segments do not match dims")
        return layout


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.layout.total,):
            raise ValueError(f"parameter vector has length {values.size}, layout needs {self.layout.total}")
        object.__setattr__(self, "values", values)

    def segment(self, name):
        return self.values[self.layout.segments()[name]]


def pack(qF, qW, hyper):
    N, K = qF.mean.shape
    layout = Layout(N, K, qW.mean.shape[2:])
    parts = [qF.mean.ravel(), qF.row_chol.to_unconstrained(),
             qF.col_chol.to_unconstrained(), qW.mean.ravel()]
    parts += [c.to_unconstrained() for c in qW.mode_chols]
    parts.append(hyper.to_array())
    return ParamVector(np.concatenate(parts), layout)


def unpack(params):
    layout, segs, v = params.layout, params.layout.segments(), params.values
    N, K = layout.N, layout.K
    qF = MatrixNormalPosterior(
        v[segs["qf_mean"]].reshape(N, K),
        CholFactor.from_unconstrained(v[segs["qf_row"]], N),
        CholFactor.from_unconstrained(v[segs["qf_col"]], K),
    )
    chols = [CholFactor.from_unconstrained(v[segs[f"qw_chol{m}"]], d)
             for m, d in enumerate(layout.mode_dims)]
    qW = TensorNormalPosterior(v[segs["qw_mean"]].reshape(layout.mode_dims), chols)
    return qF, qW, GprnHyper.from_array(v[segs["hyper"]])


def init_posteriors(N, K, spec, seed, mean_scale=0.1, cov_scale=0.1):
    rng = np.random.default_rng(seed)
    qF = MatrixNormalPosterior(
        mean_scale * rng.standard_normal((N, K)),
        CholFactor.identity(N, cov_scale),
        CholFactor.identity(K, cov_scale),
    )
    dims = (N, K) + tuple(spec.dims)
    qW = TensorNormalPosterior(
        mean_scale * rng.standard_normal(dims),
        [CholFactor.identity(d, cov_scale) for d in dims],
    )
    return qF, qW


@dataclass(frozen=True)
class WeightSlice:
    """Marginal of the weight matrix W_n under q(W).

    ``cov(W_n[i, k], W_n[i', k']) = row_scalar * output_cov[i, i'] * col_cov[k, k']``.
    """

    mean: np.ndarray
    row_scalar: float
    col_cov: np.ndarray
    output_cov: KronCov


def marginal_weight_slice(qW, n, spec=None):
    mean = slice_as_matrix(slice_mode1(qW.mean, n))
    if spec is not None and mean.shape[0] != spec.D:
        raise ValueError(f"slice has {mean.shape[0]} outputs, spec has {spec.D}")
    row = qW.mode_chols[0].lower[n]
    return WeightSlice(mean, float(row @ row), qW.mode_chols[1].cov, qW.output_cov)
