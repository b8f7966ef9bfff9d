"""Getting-it-right check of the Gibbs sampler.

Two routes to the joint distribution of parameters and data are compared:

* forward: parameters from the prior, then data given parameters;
* successive substitution: alternate one Gibbs sweep (parameters given
  data) with regenerating the data given the sampler's latent logits.

If every conditional update is correct both routes have the same
stationary distribution, so marginal moments of any test function agree up
to Monte Carlo error.  The Gibbs route is autocorrelated; its standard
errors come from batch means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import logistic, sample_inverse_gamma, sample_inverse_wishart, sample_mvn
from .mcmc.state import ModelData, initial_state
from .mcmc.steps import gibbs_sweep
from .model import Hyperparameters, Kernel, ModelSpec, Weights, dp_weights, lsbp_weights

__all__ = ["GirProblem", "GirResult", "tiny_problem", "forward_summaries", "gibbs_summaries",
           "batch_means_se", "getting_it_right", "SUMMARY_NAMES"]

SUMMARY_NAMES = ("beta1_intercept", "beta2_intercept", "beta1_slope", "mu1_intercept",
                 "sigma2_1", "sigma2_2", "mean_R", "mean_y", "mean_R_squared")


@dataclass(frozen=True)
class GirProblem:
    spec: ModelSpec
    hyper: Hyperparameters
    dose: np.ndarray
    m: np.ndarray


def tiny_problem(truncation: int = 3, model: str = "Gen-LNB") -> GirProblem:
    """Two doses with three dams each, 1 to 5 implants per dam.

    The prior is tightened (nu0 = 8, a_sigma = 5) so that every summary has
    finite variance.
    """
    dose = np.repeat([0.0, 1.0], 3)
    m = np.array([1, 3, 5, 2, 4, 5])
    hyper = Hyperparameters.default(1.0, a_sigma=5.0, b_sigma=1.2, nu0=8.0)
    return GirProblem(ModelSpec.from_name(model, truncation), hyper, dose, m)


def _summaries(betas, mu, sigma2, R, y):
    """Test functions of one joint draw; component 0 stands in for every atom."""
    s2 = np.full(2, np.nan) if sigma2 is None else sigma2
    return np.array([betas[0, 0, 0], betas[1, 0, 0], betas[0, 0, 1], mu[0, 0],
                     s2[0], s2[1], R.mean(), y.mean(), (R.astype(float) ** 2).mean()])


def _simulate_counts(psi, m, rng):
    R = rng.binomial(m, logistic(psi[:, 0]))
    y = rng.binomial(m - R, logistic(psi[:, 1]))
    return R, y


def forward_summaries(problem: GirProblem, n_draws: int, rng) -> np.ndarray:
    """(n_draws, k) test functions from independent prior-then-data draws."""
    spec, hyper = problem.spec, problem.hyper
    dose, m = problem.dose, problem.m
    L, n = spec.truncation, len(dose)
    X = np.column_stack([np.ones(n), dose])
    out = np.empty((n_draws, len(SUMMARY_NAMES)))
    for s in range(n_draws):
        mu = np.empty((2, 2))
        betas = np.empty((2, L, 2))
        for j in range(2):
            Sigma = sample_inverse_wishart(hyper.nu0[j], hyper.Lambda0[j], rng)
            mu[j] = sample_mvn(hyper.mu0[j], Sigma / hyper.kappa0[j], rng)
            betas[j] = sample_mvn(mu[j], Sigma, rng, size=L)
        if spec.weights is Weights.DOSE_DEPENDENT:
            gammas = sample_mvn(hyper.gamma0, hyper.Gamma0, rng, size=L - 1)
            w = lsbp_weights(dose, gammas)
        elif spec.weights is Weights.COMMON:
            alpha = rng.gamma(hyper.a_alpha, 1.0 / hyper.b_alpha)
            sticks = np.clip(rng.beta(1.0, alpha, size=L - 1), 1e-12, 1 - 1e-12)
            w = np.broadcast_to(dp_weights(sticks), (n, L))
        else:
            w = np.ones((n, 1))
        labels = np.array([rng.choice(w.shape[-1], p=wi / wi.sum()) for wi in w])
        theta = np.einsum("nk,jnk->nj", X, betas[:, labels])
        sigma2 = None
        psi = theta
        if spec.kernel is Kernel.LNB:
            sigma2 = sample_inverse_gamma(hyper.a_sigma, hyper.b_sigma, rng, size=2)
            psi = theta + np.sqrt(sigma2) * rng.standard_normal((n, 2))
        R, y = _simulate_counts(psi, m, rng)
        out[s] = _summaries(betas, mu, sigma2, R, y)
    return out


def gibbs_summaries(problem: GirProblem, n_transitions: int, rng, burn_in: int = 1000) -> np.ndarray:
    """(n_transitions, k) test functions along a successive-substitution path."""
    spec = problem.spec
    if spec.kernel is not Kernel.LNB:
        raise ValueError("data regeneration uses the latent logits of the LNB kernel")
    dose, m = problem.dose, problem.m
    zeros = np.zeros_like(m)
    data = ModelData(dose, m, zeros, zeros)
    state = initial_state(spec, problem.hyper, data, rng)
    R, y = _simulate_counts(state.psi, m, rng)
    data = data.with_counts(R, y)
    out = np.empty((n_transitions, len(SUMMARY_NAMES)))
    for it in range(burn_in + n_transitions):
        state = gibbs_sweep(state, data, rng)
        R, y = _simulate_counts(state.psi, m, rng)
        data = data.with_counts(R, y)
        if it >= burn_in:
            out[it - burn_in] = _summaries(state.betas, state.mu, state.sigma2, R, y)
    return out


def batch_means_se(x, n_batches: int = 100) -> np.ndarray:
    """Standard error of the column means of an autocorrelated series."""
    x = np.asarray(x, dtype=float)
    size = len(x) // n_batches
    means = x[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


@dataclass(frozen=True)
class GirResult:
    names: tuple
    forward_mean: np.ndarray
    forward_se: np.ndarray
    gibbs_mean: np.ndarray
    gibbs_se: np.ndarray

    @property
    def z(self) -> np.ndarray:
        """Standardized difference of the two routes' means."""
        return (self.gibbs_mean - self.forward_mean) / np.hypot(self.forward_se, self.gibbs_se)

    def passed(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.z) <= k))

    def table(self) -> str:
        lines = [f"{'summary':<18}{'forward':>11}{'gibbs':>11}{'z':>8}"]
        for i, name in enumerate(self.names):
            lines.append(f"{name:<18}{self.forward_mean[i]:>11.4f}{self.gibbs_mean[i]:>11.4f}"
                         f"{self.z[i]:>8.2f}")
        return "\n".join(lines)


def getting_it_right(problem: GirProblem | None = None, n_transitions: int = 200_000,
                     n_forward: int = 100_000, seed: int = 0, burn_in: int = 1000) -> GirResult:
    problem = problem or tiny_problem()
    fwd_rng, gibbs_rng = np.random.default_rng(seed).spawn(2)
    f = forward_summaries(problem, n_forward, fwd_rng)
    g = gibbs_summaries(problem, n_transitions, gibbs_rng, burn_in)
    return GirResult(SUMMARY_NAMES, f.mean(axis=0), f.std(axis=0, ddof=1) / np.sqrt(len(f)),
                     g.mean(axis=0), batch_means_se(g))
