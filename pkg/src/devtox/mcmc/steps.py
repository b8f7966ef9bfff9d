"""Blocked Gibbs updates for the continuation-ratio mixtures.

Every step mutates ``state`` in place and returns it.  All updates are
vectorized over dams and components; the per-dam draws are exactly those a
sequential loop would produce from the same stream order.
"""

from __future__ import annotations

import numpy as np

from ..distributions import (
    log_logistic,
    polya_gamma_array,
    sample_inverse_wishart,
    sample_mvn,
)
from ..model import Kernel, Weights
from .state import GibbsState, ModelData, NumericalFailure

__all__ = [
    "draw_gaussian_2d",
    "step_update_atoms",
    "step_update_weights",
    "step_update_weights_cw",
    "step_update_config",
    "step_update_sigma2",
    "step_update_hyper",
    "refresh_empty_stage",
    "gibbs_sweep",
    "log_mixture_weights",
]

_STICK_MIN = np.finfo(float).tiny
_STICK_MAX = 1.0 - 1e-12


def draw_gaussian_2d(prec, lin, rng, what="coefficients", iteration=None):
    """Draw N(prec^{-1} lin, prec^{-1}) for a batch of 2x2 precisions.

    Closed-form inverse and Cholesky factor; raises NumericalFailure naming the
    first offending batch index when a precision is not positive definite.
    """
    prec = np.asarray(prec, dtype=float)
    lin = np.asarray(lin, dtype=float)
    a, b, c = prec[..., 0, 0], prec[..., 0, 1], prec[..., 1, 1]
    det = a * c - b * b
    bad = ~(np.isfinite(det) & (det > 0) & (c > 0) & np.all(np.isfinite(lin), axis=-1))
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        component = int(idx[-1]) if idx.size else None
        raise NumericalFailure(f"posterior precision for {what} is not positive definite",
                               component=component, iteration=iteration)
    mean0 = (c * lin[..., 0] - b * lin[..., 1]) / det
    mean1 = (a * lin[..., 1] - b * lin[..., 0]) / det
    z = rng.standard_normal(lin.shape)
    l00 = np.sqrt(c / det)
    l10 = -b / np.sqrt(c * det)
    l11 = 1.0 / np.sqrt(c)
    out = np.empty_like(lin)
    out[..., 0] = mean0 + l00 * z[..., 0]
    out[..., 1] = mean1 + l10 * z[..., 0] + l11 * z[..., 1]
    return out


def _design_stats(index, size, dose, weight, response):
    """Per-group sums of weight*(1, x, x^2) and response*(1, x)."""
    def s(v):
        return np.bincount(index, weights=v, minlength=size)
    w0, w1, w2 = s(weight), s(weight * dose), s(weight * dose * dose)
    r0, r1 = s(response), s(response * dose)
    prec = np.empty((size, 2, 2))
    prec[:, 0, 0], prec[:, 0, 1], prec[:, 1, 0], prec[:, 1, 1] = w0, w1, w1, w2
    return prec, np.column_stack([r0, r1])


def step_update_atoms(state: GibbsState, data: ModelData, rng) -> GibbsState:
    """Refresh the Polya-Gamma layer (and the latent logits for LNB), then the atoms.

    Dams with an empty second stage carry no information about the stage-2
    atoms: their PG variate is the degenerate PG(0) and their latent logit is
    left out of the stage-2 regression.
    """
    spec = state.spec
    if spec.kernel is Kernel.BB:
        raise ValueError("atoms of the Beta-Binomial model are updated by Metropolis-Hastings")
    n, L = data.n, spec.truncation
    theta = state.dam_atoms(data)
    trials = np.column_stack([data.m, data.n_alive])
    kappa = np.column_stack([data.R, data.y]) - 0.5 * trials
    if spec.kernel is Kernel.LNB:
        s2 = state.sigma2
        zeta = polya_gamma_array(trials.ravel(), state.psi.ravel(), rng).reshape(n, 2)
        denom = 1.0 + s2 * zeta
        psi = (theta + s2 * kappa) / denom + np.sqrt(s2 / denom) * rng.standard_normal((n, 2))
        state.zeta, state.psi = zeta, psi
        used = np.column_stack([np.ones(n, bool), data.n_alive > 0])
        weight = np.where(used, 1.0 / s2, 0.0)
        response = weight * psi
    else:
        zeta = polya_gamma_array(trials.ravel(), theta.ravel(), rng).reshape(n, 2)
        state.zeta = zeta
        weight, response = zeta, kappa

    index = np.concatenate([state.labels, state.labels + L])
    dose2 = np.concatenate([data.dose, data.dose])
    prec, lin = _design_stats(index, 2 * L, dose2, weight.T.ravel(), response.T.ravel())
    prec = prec.reshape(2, L, 2, 2)
    lin = lin.reshape(2, L, 2)
    Sinv = np.linalg.inv(state.Sigma)
    prec += Sinv[:, None]
    lin += np.einsum("jab,jb->ja", Sinv, state.mu)[:, None]
    state.betas = draw_gaussian_2d(prec, lin, rng, "atoms", state.iteration)
    return state


def _at_risk(labels, n_breaks):
    """Flattened (dam, break, indicator) triples for the stick-breaking regression."""
    counts = np.minimum(labels, n_breaks - 1) + 1
    dam = np.repeat(np.arange(len(labels)), counts)
    starts = np.cumsum(counts) - counts
    brk = np.arange(counts.sum()) - np.repeat(starts, counts)
    return dam, brk, brk == labels[dam]


def step_update_weights(state: GibbsState, data: ModelData, rng) -> GibbsState:
    """Logit stick-breaking coefficients via Polya-Gamma augmentation.

    A dam with label l is at risk for breaks 1..l (all L-1 breaks for the
    last component) and its indicator is 1 only at break l.
    """
    if state.spec.weights is not Weights.DOSE_DEPENDENT:
        raise ValueError("step_update_weights needs dose-dependent weights")
    nb = state.truncation - 1
    dam, brk, iota = _at_risk(state.labels, nb)
    x = data.dose[dam]
    g = state.gammas
    xi = polya_gamma_array(np.ones(len(dam), np.int64), g[brk, 0] + g[brk, 1] * x, rng)
    state.xi = np.full((data.n, nb), np.nan)
    state.xi[dam, brk] = xi
    prec, lin = _design_stats(brk, nb, x, xi, iota - 0.5)
    hyp = state.hyper
    G0inv = np.linalg.inv(hyp.Gamma0)
    prec += G0inv
    lin += G0inv @ hyp.gamma0
    state.gammas = draw_gaussian_2d(prec, lin, rng, "stick-breaking coefficients", state.iteration)
    return state


def step_update_weights_cw(state: GibbsState, rng) -> GibbsState:
    """Stick proportions and concentration for the common-weights model."""
    if state.spec.weights is not Weights.COMMON:
        raise ValueError("step_update_weights_cw needs common weights")
    L = state.truncation
    hyp = state.hyper
    M = np.bincount(state.labels, minlength=L)
    tail = np.cumsum(M[::-1])[::-1]
    v = rng.beta(1.0 + M[:-1], state.alpha + tail[1:])
    v = np.clip(v, _STICK_MIN, _STICK_MAX)
    state.sticks = v
    state.alpha = rng.gamma(hyp.a_alpha + L - 1, 1.0 / (hyp.b_alpha - np.log1p(-v).sum()))
    return state


def log_mixture_weights(state: GibbsState, doses) -> np.ndarray:
    """log omega_l at each of ``doses``, shape (len(doses), L)."""
    doses = np.atleast_1d(np.asarray(doses, dtype=float))
    L = state.truncation
    if L == 1:
        return np.zeros((len(doses), 1))
    if state.spec.weights is Weights.DOSE_DEPENDENT:
        eta = state.gammas[:, 0] + state.gammas[:, 1] * doses[:, None]
        log_brk, log_rest = log_logistic(eta), log_logistic(-eta)
    else:
        v = np.asarray(state.sticks)[None, :]
        log_brk, log_rest = np.log(v), np.log1p(-v)
        log_brk = np.broadcast_to(log_brk, (len(doses), L - 1))
        log_rest = np.broadcast_to(log_rest, (len(doses), L - 1))
    cum = np.cumsum(log_rest, axis=1)
    out = np.empty((len(doses), L))
    out[:, 0] = log_brk[:, 0]
    out[:, 1:-1] = log_brk[:, 1:] + cum[:, :-1]
    out[:, -1] = cum[:, -1]
    return out


def _component_loglik(state: GibbsState, data: ModelData) -> np.ndarray:
    """Log-likelihood of each dam under each component, shape (n, L), up to constants."""
    b = state.betas
    theta1 = b[0, :, 0] + np.outer(data.dose, b[0, :, 1])
    theta2 = b[1, :, 0] + np.outer(data.dose, b[1, :, 1])
    if state.spec.kernel is Kernel.LNB:
        s2 = state.sigma2
        ll = -0.5 * (state.psi[:, :1] - theta1) ** 2 / s2[0]
        dev2 = -0.5 * (state.psi[:, 1:] - theta2) ** 2 / s2[1]
        ll += np.where((data.n_alive > 0)[:, None], dev2, 0.0)
        return ll
    ll = data.R[:, None] * theta1 - data.m[:, None] * np.logaddexp(0.0, theta1)
    ll += data.y[:, None] * theta2 - data.n_alive[:, None] * np.logaddexp(0.0, theta2)
    return ll


def step_update_config(state: GibbsState, data: ModelData, rng) -> GibbsState:
    """Component labels from their discrete full conditionals (log-sum-exp normalized)."""
    L = state.truncation
    if L == 1:
        state.labels = np.zeros(data.n, dtype=np.int64)
        return state
    logw = log_mixture_weights(state, data.levels)[data.level_index]
    logp = logw + _component_loglik(state, data)
    top = logp.max(axis=1)
    if not np.all(np.isfinite(top)):
        raise NumericalFailure("every component has zero mass for some dam", iteration=state.iteration)
    p = np.exp(logp - top[:, None])
    cum = np.cumsum(p, axis=1)
    u = rng.random(data.n) * cum[:, -1]
    state.labels = np.minimum((cum < u[:, None]).sum(axis=1), L - 1)
    return state


def step_update_sigma2(state: GibbsState, data: ModelData, rng) -> GibbsState:
    """Inverse-Gamma update of the two LNB variances from squared latent residuals."""
    if state.spec.kernel is not Kernel.LNB:
        raise ValueError("step_update_sigma2 needs the LNB kernel")
    hyp = state.hyper
    resid = state.psi - state.dam_atoms(data)
    used = np.column_stack([np.ones(data.n, bool), data.n_alive > 0])
    n_used = used.sum(axis=0)
    ss = np.where(used, resid * resid, 0.0).sum(axis=0)
    shape = hyp.a_sigma + 0.5 * n_used
    rate = hyp.b_sigma + 0.5 * ss
    state.sigma2 = 1.0 / rng.gamma(shape, 1.0 / rate)
    return state


def step_update_hyper(state: GibbsState, rng) -> GibbsState:
    """Normal-inverse-Wishart update of (mu_j, Sigma_j) from the occupied atoms."""
    hyp = state.hyper
    occupied = np.unique(state.labels)
    k = len(occupied)
    for j in range(2):
        B = state.betas[j, occupied]
        kappa0, nu0, mu0 = hyp.kappa0[j], hyp.nu0[j], hyp.mu0[j]
        if k:
            bbar = B.mean(axis=0)
            dev = B - bbar
            d = bbar - mu0
            scale = hyp.Lambda0[j] + dev.T @ dev + (k * kappa0 / (k + kappa0)) * np.outer(d, d)
            centre = (kappa0 * mu0 + k * bbar) / (kappa0 + k)
        else:
            scale, centre = hyp.Lambda0[j], mu0
        try:
            Sigma = sample_inverse_wishart(nu0 + k, scale, rng)
            mu = sample_mvn(centre, Sigma / (kappa0 + k), rng)
        except ValueError as err:
            raise NumericalFailure(f"hyperparameter update failed for stage {j + 1}: {err}",
                                   iteration=state.iteration) from err
        state.Sigma[j] = Sigma
        state.mu[j] = mu
    return state


def refresh_empty_stage(state: GibbsState, data: ModelData, rng) -> GibbsState:
    """Redraw stage-2 latent logits of dams with no live fetuses from their prior slice.

    Those logits are integrated out of the other updates, so this completes
    the state to a draw from the joint posterior.
    """
    empty = np.flatnonzero(data.n_alive == 0)
    if state.spec.kernel is Kernel.LNB and empty.size:
        b = state.betas[1, state.labels[empty]]
        theta = b[:, 0] + b[:, 1] * data.dose[empty]
        state.psi[empty, 1] = theta + np.sqrt(state.sigma2[1]) * rng.standard_normal(empty.size)
        state.zeta[empty, 1] = 0.0
    return state


def gibbs_sweep(state: GibbsState, data: ModelData, rng) -> GibbsState:
    """One full scan in the order atoms, weights, labels, variances, hyperparameters."""
    spec = state.spec
    step_update_atoms(state, data, rng)
    if spec.weights is Weights.DOSE_DEPENDENT:
        step_update_weights(state, data, rng)
    elif spec.weights is Weights.COMMON:
        step_update_weights_cw(state, rng)
    step_update_config(state, data, rng)
    if spec.kernel is Kernel.LNB:
        step_update_sigma2(state, data, rng)
    step_update_hyper(state, rng)
    refresh_empty_stage(state, data, rng)
    state.iteration += 1
    return state
