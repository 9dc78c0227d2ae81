"""Full-batch Adam ascent on the ELBO, plus a finite-difference gradient check."""

from dataclasses import dataclass, field
import logging
import time

import numpy as np

from .elbo import ElboBreakdown
from .errors import NumericalError
from .gradient import elbo_and_grad
from .model import LOG_NOISE_FLOOR, GprnHyper, kernel_matrices
from .posterior import ParamVector, init_posteriors, pack, unpack

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 2000

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def start(cls, params):
        params = np.asarray(params, dtype=float)
        return cls(params.copy(), np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(state, grad, config, learning_rate=None):
    """One bias-corrected Adam step uphill (the ELBO is maximized)."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.params.shape:
        raise ValueError("gradient and parameter lengths differ")
    lr = config.learning_rate if learning_rate is None else learning_rate
    t = state.t + 1
    m = config.beta1 * state.m + (1 - config.beta1) * grad
    v = config.beta2 * state.v + (1 - config.beta2) * grad**2
    m_hat = m / (1 - config.beta1**t)
    v_hat = v / (1 - config.beta2**t)
    params = state.params + lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return AdamState(params, m, v, t)


@dataclass
class TrainTrace:
    elbos: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)

    def __len__(self):
        return len(self.elbos)

    def append(self, breakdown, seconds, grad_norm):
        self.elbos.append(breakdown)
        self.seconds.append(seconds)
        self.grad_norms.append(grad_norm)

    def totals(self):
        return np.array([b.total for b in self.elbos])

    def rows(self):
        for epoch, (b, sec, gn) in enumerate(zip(self.elbos, self.seconds, self.grad_norms)):
            yield {"epoch": epoch, "kl_w": b.kl_w, "kl_f": b.kl_f,
                   "exp_loglik": b.exp_loglik, "total": b.total,
                   "grad_norm": gn, "seconds": sec}


@dataclass(frozen=True)
class TrainedModel:
    """Final variational state with everything needed to predict."""

    params: ParamVector
    spec: object
    X: np.ndarray
    jitter: float = 1e-8
    normalization: object = None
    final_elbo: ElboBreakdown = None
    metadata: dict = field(default_factory=dict)

    @property
    def posteriors(self):
        return unpack(self.params)

    @property
    def hyper(self):
        return unpack(self.params)[2]

    def kernels(self):
        return kernel_matrices(self.X, self.hyper, self.jitter)


def initial_params(N, K, spec, seed, hyper=None, mean_scale=0.1, cov_scale=0.1):
    qF, qW = init_posteriors(N, K, spec, seed, mean_scale, cov_scale)
    return pack(qF, qW, hyper if hyper is not None else GprnHyper())


def _clip_noise(values, layout):
    for name in ("log_sigma_f", "log_sigma_y"):
        i = layout.hyper_index(name)
        values[i] = max(values[i], LOG_NOISE_FLOOR)
    return values


def train(data, config, K, spec, seed, hyper=None, jitter=1e-8, mean_scale=0.1,
          cov_scale=0.1, diagonal=False, params=None, callback=None, whiten=True):
    """Maximize the ELBO jointly over variational parameters and hyperparameters.

    With ``whiten=True`` Adam works on prior-whitened means (see
    :mod:`gprn.whiten`); the initial draw is taken in those coordinates.
    Inputs and outputs of this function are always raw ParamVectors.
    ``diagonal=True`` freezes every strictly-lower Cholesky entry at zero
    (factorized-covariance ablation).  If an epoch produces a non-finite
    ELBO the learning rate is halved once and the step retried from the
    last good state; a second failure raises :class:`NumericalError`
    carrying that state.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if data.D != spec.D:
        raise ValueError(f"data has {data.D} outputs but tensorization has {spec.D}")
    fresh = params is None
    if fresh:
        params = initial_params(data.N, K, spec, seed, hyper, mean_scale, cov_scale)
    layout = params.layout
    mask = layout.offdiag_mask() if diagonal else None
    if diagonal:
        values = params.values.copy()
        values[mask] = 0.0
        params = ParamVector(values, layout)

    if whiten:
        from .whiten import to_whitened, whitened_elbo_and_grad

        # a fresh draw is taken directly in whitened coordinates
        start = params.values if fresh else to_whitened(params, data.X, jitter)

        def evaluate(values):
            return whitened_elbo_and_grad(values, layout, data, jitter)
    else:
        start = params.values

        def evaluate(values):
            p = ParamVector(values, layout)
            breakdown, grad = elbo_and_grad(p, data, jitter)
            return breakdown, grad, p

    trace = TrainTrace()
    state = AdamState.start(start)
    lr = config.learning_rate
    halved = False
    breakdown, grad, raw = evaluate(state.params)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if mask is not None:
            grad[mask] = 0.0
        while True:
            new_state = adam_step(state, grad, config, learning_rate=lr)
            _clip_noise(new_state.params, layout)
            try:
                new_breakdown, new_grad, new_raw = evaluate(new_state.params)
                break
            except (NumericalError, np.linalg.LinAlgError) as exc:
                if halved:
                    raise NumericalError(
                        f"non-finite ELBO at epoch {epoch} after halving the learning rate",
                        state=raw) from exc
                halved = True
                lr *= 0.5
                log.warning("epoch %d: non-finite ELBO, learning rate halved to %g", epoch, lr)
        trace.append(breakdown, time.perf_counter() - t0, float(np.linalg.norm(grad)))
        if callback is not None:
            callback(epoch, breakdown)
        state, breakdown, grad, raw = new_state, new_breakdown, new_grad, new_raw

    final = raw
    model = TrainedModel(
        params=final, spec=spec, X=data.X, jitter=jitter,
        normalization=data.normalization, final_elbo=breakdown,
        metadata={"epochs": config.epochs, "seed": seed, "K": K,
                  "learning_rate": lr, "diagonal": diagonal,
                  "whiten": whiten},
    )
    return model, trace


def numeric_gradient(params, data, h=1e-5, jitter=1e-8):
    """Central-difference gradient of the ELBO total, one coordinate at a time.

    Each of the three ELBO parts is differenced on its own and the results
    combined.  This is the same central difference, but a large part (a KL of
    1e6, say) no longer swamps the change in a small one through rounding of
    the total.
    """
    from .elbo import elbo

    layout = params.layout

    def f(values):
        qF, qW, hyper = unpack(ParamVector(values, layout))
        b = elbo(qF, qW, hyper, data, jitter=jitter)
        return np.array([b.exp_loglik, -b.kl_w, -b.kl_f])

    base = params.values
    numeric = np.empty_like(base)
    for i in range(base.size):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        numeric[i] = float(np.sum((f(up) - f(down)) / (2 * h)))
    return numeric


def grad_check(params, data, spec=None, h=1e-5, jitter=1e-8, grad_fn=None,
               atol=1e-7):
    """Compare the analytic gradient with central differences, block by block.

    Returns ``{block: worst relative error}``.  A coordinate whose absolute
    error is at most ``atol`` counts as exact.  ``grad_fn(params, data)``
    replaces the analytic gradient (used to test the checker itself).
    """
    layout = params.layout
    if grad_fn is None:
        analytic = elbo_and_grad(params, data, jitter)[1]
    else:
        analytic = np.asarray(grad_fn(params, data), dtype=float)
    numeric = numeric_gradient(params, data, h, jitter)
    abs_err = np.abs(analytic - numeric)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(abs_err <= atol, 0.0, abs_err / np.abs(numeric))
    rel = np.nan_to_num(rel, nan=0.0, posinf=np.inf)
    return {name: float(rel[s].max()) if s.stop > s.start else 0.0
            for name, s in layout.segments().items()}


def step_sweep(params, data, steps=(1e-4, 1e-5, 1e-6), jitter=1e-8):
    """``||numeric - analytic|| / ||analytic||`` for each finite-difference step.

    Large steps are dominated by truncation error, small ones by roundoff.
    """
    analytic = elbo_and_grad(params, data, jitter)[1]
    scale = max(float(np.linalg.norm(analytic)), 1e-300)
    return {h: float(np.linalg.norm(numeric_gradient(params, data, h, jitter) - analytic)) / scale
            for h in steps}
