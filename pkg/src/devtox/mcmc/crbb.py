"""Random-walk Metropolis-Hastings for the parametric Beta-Binomial model.

Each stage has its own block (intercept, slope, log dispersion).  The two
stages share no parameters, so their blocks are updated independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln

from ..distributions import logistic
from ..model import Hyperparameters, Kernel
from .state import GibbsState, ModelData

__all__ = ["MhAdapter", "bb_log_posterior", "crbb_beta_prior", "step_mh_crbb"]

TARGET_ACCEPTANCE = 0.3
_ADAPT_EVERY = 50
_MIN_COV_SAMPLES = 200


def crbb_beta_prior(hyper: Hyperparameters, stage: int):
    """Normal prior on one stage's coefficients: mean mu0_j, covariance E Sigma_j.

    The inverse-Wishart mean Lambda0/(nu0-3) is used when it exists and the
    scale Lambda0 otherwise.
    """
    nu = hyper.nu0[stage]
    cov = hyper.Lambda0[stage] / (nu - 3.0) if nu > 3 else hyper.Lambda0[stage]
    return hyper.mu0[stage], cov


def bb_log_posterior(block, stage, data: ModelData, hyper: Hyperparameters) -> float:
    """Log target for one stage block (b0, b1, log lambda), up to a constant."""
    b0, b1, loglam = block
    if stage == 0:
        k, t = data.R, data.m
    else:
        k, t = data.y, data.n_alive
    lam = np.exp(loglam)
    if not np.isfinite(lam) or lam <= 0:
        return -np.inf
    p = logistic(b0 + b1 * data.dose)
    a = lam * p
    b = lam * (1.0 - p)
    if np.any(a <= 0) or np.any(b <= 0):
        return -np.inf
    ll = np.sum(betaln(k + a, t - k + b) - betaln(a, b))
    mean, cov = crbb_beta_prior(hyper, stage)
    d = np.array([b0, b1]) - mean
    lp = -0.5 * d @ np.linalg.solve(cov, d)
    shape, rate = hyper.lambda_shape, hyper.lambda_rate
    # Gamma prior on lambda plus the log-scale Jacobian
    lp += shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * loglam - rate * lam + loglam
    return float(ll + lp)


@dataclass
class MhAdapter:
    """Per-stage proposal scale and shape, tuned toward ~30% acceptance during burn-in."""

    max_dose: float
    scale: np.ndarray = field(default_factory=lambda: np.full(2, 2.38 / np.sqrt(3.0)))
    shape: np.ndarray = field(init=False)
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(2, np.int64))
    proposed: np.ndarray = field(default_factory=lambda: np.zeros(2, np.int64))
    history: list = field(default_factory=list)
    _window_acc: np.ndarray = field(default_factory=lambda: np.zeros(2, np.int64))
    _window_n: int = 0

    def __post_init__(self):
        span = max(self.max_dose, 1e-8)
        base = np.diag([0.05, 0.05 / span ** 2, 0.1])
        self.shape = np.stack([base, base])

    def record(self, accepted, block_values, adapting: bool):
        self.proposed += 1
        self.accepted += accepted
        if not adapting:
            return
        self._window_acc += accepted
        self._window_n += 1
        self.history.append(np.array(block_values))
        if self._window_n == _ADAPT_EVERY:
            rate = self._window_acc / self._window_n
            self.scale *= np.exp(rate - TARGET_ACCEPTANCE)
            self._window_acc[:] = 0
            self._window_n = 0
            if len(self.history) >= _MIN_COV_SAMPLES:
                h = np.asarray(self.history[len(self.history) // 2:])
                for j in range(2):
                    self.shape[j] = np.cov(h[:, j].T) + 1e-8 * np.eye(3)

    def reset_counts(self):
        self.accepted[:] = 0
        self.proposed[:] = 0

    @property
    def acceptance_rate(self) -> np.ndarray:
        return self.accepted / np.maximum(self.proposed, 1)


def step_mh_crbb(state: GibbsState, data: ModelData, rng, proposal_scale, proposal_shape=None):
    """One random-walk Metropolis update of each stage block.

    ``proposal_scale`` is a scalar or per-stage pair multiplying the Cholesky
    factor of ``proposal_shape`` (identity by default).  Returns the state and
    the per-stage acceptance indicators.
    """
    if state.spec.kernel is not Kernel.BB:
        raise ValueError("step_mh_crbb needs the Beta-Binomial kernel")
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=float), (2,))
    if np.any(scale < 0):
        raise ValueError("proposal scale must be nonnegative")
    shape = np.stack([np.eye(3)] * 2) if proposal_shape is None else np.asarray(proposal_shape)
    accepted = np.zeros(2, np.int64)
    for j in range(2):
        current = np.array([*state.betas[j, 0], np.log(state.bb_lambda[j])])
        step = scale[j] * (np.linalg.cholesky(shape[j]) @ rng.standard_normal(3))
        proposal = current + step
        if np.array_equal(proposal, current):
            # staying put is always accepted; skip the exp(log) round trip
            accepted[j] = 1
            continue
        log_ratio = (bb_log_posterior(proposal, j, data, state.hyper)
                     - bb_log_posterior(current, j, data, state.hyper))
        if np.log(rng.random()) < log_ratio:
            state.betas[j, 0] = proposal[:2]
            state.bb_lambda[j] = np.exp(proposal[2])
            accepted[j] = 1
    state.iteration += 1
    return state, accepted
