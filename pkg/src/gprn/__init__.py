"""Gaussian process regression networks with Kronecker-structured variational inference."""

from .elbo import ElboBreakdown, elbo
from .errors import ConfigError, DataError, GprnError, NumericalError, OracleFailure
from .model import Dataset, GprnHyper, TensorizationSpec, make_tensorization, sample_gprn
from .posterior import ParamVector, init_posteriors, pack, unpack
from .predict import predict_mean, predictive_loglik, project
from .train import AdamConfig, TrainedModel, train

__version__ = "0.1.0"
