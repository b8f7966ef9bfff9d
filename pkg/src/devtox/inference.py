"""Posterior risk-assessment functionals.

All functions take a (possibly batched) :class:`MixtureParams` and evaluate
draw by draw with the batch axis leading.  Dose arguments may be scalars or
arrays broadcasting against the batch, so each draw can be evaluated at its
own dose (used by the root finder).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .distributions import (
    QuadratureRule,
    bb_pmf,
    binomial_pmf,
    gauss_hermite,
    lnb_pmf,
    logistic,
    logit_normal_integral,
    logit_normal_square_integral,
    sample_shifted_poisson,
)
from .model import Dataset, Kernel, MixtureParams, ModelSpec

__all__ = [
    "ENDPOINTS",
    "CurveDraws",
    "dose_response_draw",
    "dose_response_draws",
    "stage_moments",
    "intracluster_corr_draw",
    "EdResult",
    "effective_dose",
    "endpoint_curve",
    "bmd",
    "ImplantModel",
    "fit_implant_model",
    "PredictiveDraws",
    "posterior_predictive",
    "conditional_pmfs",
    "RiskSummary",
    "risk_summary",
]

ENDPOINTS = ("D", "M", "r")


def _stage_probs(params: MixtureParams, spec: ModelSpec, x, rule):
    """Per-component probabilities of the two stage events, shape batch + (2, L)."""
    theta = params.atoms(x)
    if spec.kernel is Kernel.LNB:
        s2 = np.asarray(params.sigma2, dtype=float)[..., :, None]
        return logit_normal_integral(theta, np.broadcast_to(s2, theta.shape), rule)
    return logistic(theta)


def stage_moments(params: MixtureParams, spec: ModelSpec, x, rule: QuadratureRule | None = None):
    """Per-component stage means and variances of the success probability.

    Returns ``(p, v)`` with shape batch + (2, L); ``v`` is the variance of the
    random stage probability within a dam (0 for the Binomial kernel).
    """
    rule = rule or gauss_hermite()
    theta = params.atoms(x)
    if spec.kernel is Kernel.LNB:
        s2 = np.broadcast_to(np.asarray(params.sigma2, dtype=float)[..., :, None], theta.shape)
        p = np.asarray(logit_normal_integral(theta, s2, rule))
        sq = np.asarray(logit_normal_square_integral(theta, s2, rule))
        v = np.maximum(sq - p * p, 0.0)
    elif spec.kernel is Kernel.BB:
        p = logistic(theta)
        lam = np.asarray(params.bb_lambda, dtype=float)[..., :, None]
        v = p * (1.0 - p) / (lam + 1.0)
    else:
        p = logistic(theta)
        v = np.zeros_like(p)
    return p, v


@dataclass(frozen=True)
class CurveDraws:
    grid: np.ndarray
    D: np.ndarray
    M: np.ndarray
    r: np.ndarray

    def __getitem__(self, endpoint: str) -> np.ndarray:
        if endpoint not in ENDPOINTS:
            raise KeyError(endpoint)
        return getattr(self, endpoint)

    def band(self, endpoint: str, level: float = 0.95):
        """Pointwise equal-tailed credible band and posterior mean."""
        vals = self[endpoint]
        lo, hi = np.nanquantile(vals, [(1 - level) / 2, (1 + level) / 2], axis=0)
        return np.nanmean(vals, axis=0), lo, hi


def dose_response_draw(params: MixtureParams, spec: ModelSpec, x, rule: QuadratureRule | None = None,
                       strict: bool = True):
    """(D, M, r) at dose ``x`` for every draw.

    D and r are weighted averages of the per-component stage probabilities;
    M is conditional on viability, so its denominator is the weighted
    survival mass.  With ``strict`` a zero survival mass raises; otherwise
    that draw's M is NaN.
    """
    if np.any(np.asarray(x) < 0):
        raise ValueError("dose must be nonnegative")
    rule = rule or gauss_hermite()
    p = _stage_probs(params, spec, x, rule)
    w = params.weights(x)
    p1, p2 = p[..., 0, :], p[..., 1, :]
    D = np.sum(w * p1, axis=-1)
    surv = np.sum(w * (1.0 - p1), axis=-1)
    both = np.sum(w * (1.0 - p1) * (1.0 - p2), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        M = np.sum(w * (1.0 - p1) * p2, axis=-1) / surv
    if np.any(surv <= 0):
        if strict:
            raise ValueError("malformation risk undefined: zero survival mass in some draw")
        M = np.where(surv > 0, M, np.nan)
    r = 1.0 - both
    return D, M, r


def dose_response_draws(params: MixtureParams, spec: ModelSpec, grid: Sequence[float],
                        rule: QuadratureRule | None = None, strict: bool = False) -> CurveDraws:
    """Curves on ``grid``; each array has shape batch + (len(grid),)."""
    grid = np.asarray(grid, dtype=float)
    cols = [dose_response_draw(params, spec, x, rule, strict) for x in grid]
    D, M, r = (np.stack([np.asarray(c[k]) for c in cols], axis=-1) for k in range(3))
    return CurveDraws(grid, D, M, r)


def intracluster_corr_draw(params: MixtureParams, spec: ModelSpec, x, j: int,
                           rule: QuadratureRule | None = None, strict: bool = True):
    """Correlation between the category-``j`` indicators of two implants of one dam.

    Categories: 1 non-viable, 2 viable and malformed, 3 viable and normal.
    The covariance is assembled as a within-component part (from the spread
    of the latent stage probability) plus a between-component part, both
    sums of nonnegative terms, so mixtures with distinct atoms give strictly
    positive values without cancellation.
    """
    if j not in (1, 2, 3):
        raise ValueError("category must be 1, 2 or 3")
    p, v = stage_moments(params, spec, x, rule)
    p1, p2 = p[..., 0, :], p[..., 1, :]
    v1, v2 = v[..., 0, :], v[..., 1, :]
    t1 = (1.0 - p1) ** 2 + v1  # E(1 - phi_1)^2
    if j == 1:
        e, within = p1, v1
    elif j == 2:
        e, within = (1.0 - p1) * p2, v1 * p2 ** 2 + t1 * v2
    else:
        e, within = (1.0 - p1) * (1.0 - p2), v1 * (1.0 - p2) ** 2 + t1 * v2
    w = params.weights(x)
    E = np.sum(w * e, axis=-1)
    between = np.sum(w * (e - E[..., None]) ** 2, axis=-1)
    cov = np.sum(w * within, axis=-1) + between
    var = E * (1.0 - E)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / var
    bad = ~(var > 0)
    if np.any(bad):
        if strict:
            raise ValueError(f"category {j} has zero variance in some draw")
        corr = np.where(bad, np.nan, corr)
    return corr if np.ndim(corr) else float(corr)


def endpoint_curve(params: MixtureParams, spec: ModelSpec, endpoint: str,
                   rule: QuadratureRule | None = None) -> Callable:
    """Per-draw curve ``x -> P(x)`` for one endpoint, usable by :func:`effective_dose`."""
    k = ENDPOINTS.index(endpoint)

    def curve(x):
        return dose_response_draw(params, spec, x, rule, strict=False)[k]
    return curve


@dataclass(frozen=True)
class EdResult:
    """Effective-dose draws; censored draws hold NaN."""

    samples: np.ndarray
    censored: np.ndarray
    alpha: float
    search_max: float

    @property
    def n_censored(self) -> int:
        return int(self.censored.sum())

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if self.censored.size else 0.0

    @property
    def valid(self) -> np.ndarray:
        return self.samples[~self.censored]


def effective_dose(curve_fn: Callable, alpha: float, search_max: float, n_draws: int | None = None,
                   n_grid: int = 60, tol: float = 1e-10) -> EdResult:
    """Smallest dose whose extra risk over control reaches ``alpha``, per draw.

    ``curve_fn`` maps an array of per-draw doses to per-draw probabilities.
    The bracket [0, search_max] is scanned on ``n_grid`` cells for the first
    sign change of (P(x) - P(0)) - alpha (1 - P(0)), which is then refined by
    bisection to width ``tol``.  Draws that never reach the target are censored.
    """
    if not 0 < alpha < 1:
        raise ValueError("benchmark response must lie in (0, 1)")
    if not search_max > 0:
        raise ValueError("search_max must be positive")
    p0 = np.atleast_1d(np.asarray(curve_fn(0.0 if n_draws is None else np.zeros(n_draws)), dtype=float))
    S = p0.shape[0]

    def excess(x):
        return (np.asarray(curve_fn(x), dtype=float) - p0) - alpha * (1.0 - p0)

    grid = np.linspace(0.0, search_max, n_grid + 1)
    lo = np.zeros(S)
    hi = np.full(S, np.nan)
    found = np.zeros(S, bool)
    prev = np.zeros(S)
    for g in grid[1:]:
        val = excess(np.full(S, g))
        hit = (~found) & (val >= 0)
        hi[hit] = g
        lo[hit] = prev[hit]
        found |= hit
        prev[:] = g
        if found.all():
            break
    idx = np.flatnonzero(found)
    a, b = lo[idx], hi[idx]
    while idx.size and np.max(b - a) > tol:
        mid = 0.5 * (a + b)
        x = np.zeros(S)
        x[idx] = mid
        val = excess(x)[idx]
        up = val >= 0
        b = np.where(up, mid, b)
        a = np.where(up, a, mid)
    samples = np.full(S, np.nan)
    samples[idx] = b
    return EdResult(samples, ~found, float(alpha), float(search_max))


def bmd(ed_samples, level: float = 0.95) -> float:
    """Lower endpoint of the equal-tailed credible interval (type-7 quantile)."""
    s = np.asarray(ed_samples, dtype=float)
    s = s[~np.isnan(s)]
    if s.size == 0:
        raise ValueError("no effective-dose samples")
    if not 0 <= level <= 1:
        raise ValueError("level must lie in [0, 1]")
    return float(np.quantile(s, (1.0 - level) / 2.0, method="linear"))


@dataclass(frozen=True)
class ImplantModel:
    """1 + Poisson(rate) implant counts, independent of dose."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("implant rate must be positive")

    def sample(self, rng, size=None):
        return sample_shifted_poisson(self.rate, rng, size)


def fit_implant_model(data: Dataset) -> ImplantModel:
    """Maximum-likelihood shifted-Poisson rate, pooled over doses."""
    m = np.asarray(data.m, dtype=float)
    if m.size == 0:
        raise ValueError("empty dataset")
    rate = m.mean() - 1.0
    if rate < 1e-6:
        warnings.warn("all implant counts equal 1; rate floored at 1e-6", stacklevel=2)
        rate = 1e-6
    return ImplantModel(float(rate))


@dataclass(frozen=True)
class PredictiveDraws:
    """One predictive dam per draw and dose: arrays of shape (draws, doses)."""

    doses: np.ndarray
    m: np.ndarray
    R: np.ndarray
    y: np.ndarray

    def ratio(self, endpoint: str) -> np.ndarray:
        """Per-dam proportion for an endpoint; NaN where the malformation ratio is 0/0."""
        with np.errstate(invalid="ignore", divide="ignore"):
            if endpoint == "D":
                return self.R / self.m
            if endpoint == "M":
                alive = self.m - self.R
                return np.where(alive > 0, self.y / np.maximum(alive, 1), np.nan)
            if endpoint == "r":
                return (self.R + self.y) / self.m
        raise ValueError(f"unknown endpoint {endpoint!r}")


def _sample_components(w, rng):
    cum = np.cumsum(w, axis=-1)
    u = rng.random(w.shape[:-1]) * cum[..., -1]
    return np.minimum((cum < u[..., None]).sum(axis=-1), w.shape[-1] - 1)


def _stage_success(params, spec, theta, rng):
    """Per-dam stage success probabilities given component atoms ``theta`` (…, 2)."""
    if spec.kernel is Kernel.LNB:
        sd = np.sqrt(np.asarray(params.sigma2, dtype=float))[:, None, :]
        return logistic(theta + sd * rng.standard_normal(theta.shape))
    p = logistic(theta)
    if spec.kernel is Kernel.BB:
        lam = np.asarray(params.bb_lambda, dtype=float)[:, None, :]
        return rng.beta(lam * p, lam * (1.0 - p))
    return p


def posterior_predictive(params: MixtureParams, spec: ModelSpec, doses, implant: ImplantModel,
                         rng) -> PredictiveDraws:
    """One (m*, R*, y*) per retained draw at each dose in ``doses``."""
    doses = np.asarray(doses, dtype=float)
    S = params.betas.shape[0]
    N = len(doses)
    w = params.weights(doses[:, None])  # (N, S, L)
    w = np.moveaxis(np.asarray(w), 0, 1)  # (S, N, L)
    comp = _sample_components(w, rng)
    theta = params.atoms(doses[:, None])  # (N, S, 2, L)
    theta = np.moveaxis(theta, 0, 1)  # (S, N, 2, L)
    th = np.take_along_axis(theta, comp[:, :, None, None], axis=-1)[..., 0]  # (S, N, 2)
    m = implant.sample(rng, size=(S, N))
    p = _stage_success(params, spec, th, rng)
    R = rng.binomial(m, p[..., 0])
    y = rng.binomial(m - R, p[..., 1])
    return PredictiveDraws(doses, m, R, y)


def _stage_pmf_table(params, spec, x, stage, trials, rule):
    """Stage-``stage`` mass of 0..trials under every component: batch + (L, trials+1)."""
    theta = params.atoms(x)[..., stage, :, None]
    k = np.arange(trials + 1)
    if spec.kernel is Kernel.BINOMIAL:
        return binomial_pmf(k, trials, logistic(theta))
    if spec.kernel is Kernel.LNB:
        s2 = np.asarray(params.sigma2, dtype=float)[..., stage, None, None]
        return lnb_pmf(k, trials, theta, s2, rule)
    lam = np.asarray(params.bb_lambda, dtype=float)[..., stage, None, None]
    return bb_pmf(k, trials, theta, lam)


def conditional_pmfs(params: MixtureParams, spec: ModelSpec, x: float, m: int, R_cond: int,
                     rule: QuadratureRule | None = None, strict: bool = True):
    """Per-draw Pr(R | m) and Pr(y | m, R = R_cond) at dose ``x``.

    The second pmf reweights components by how well each explains
    ``R_cond`` before mixing the second-stage masses.
    """
    if not 0 <= R_cond <= m:
        raise ValueError("need 0 <= R_cond <= m")
    rule = rule or gauss_hermite()
    w = np.asarray(params.weights(x))
    f1 = _stage_pmf_table(params, spec, x, 0, m, rule)
    f2 = _stage_pmf_table(params, spec, x, 1, m - R_cond, rule)
    pr = np.sum(w[..., None] * f1, axis=-2)
    post = w * f1[..., R_cond]
    total = post.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        if strict:
            raise ValueError(f"Pr(R = {R_cond} | m = {m}) is zero in some draw")
    with np.errstate(invalid="ignore", divide="ignore"):
        post = post / total
    py = np.sum(post[..., None] * f2, axis=-2)
    return pr, py


@dataclass
class RiskSummary:
    """Curves, effective doses and benchmark doses for one fitted model."""

    model: str
    curves: CurveDraws
    ed: dict = field(default_factory=dict)  # (endpoint, bmr) -> EdResult
    max_censored_fraction: float = 0.05

    def bmd_table(self, level: float = 0.95) -> list[dict]:
        rows = []
        for (endpoint, bmr), res in self.ed.items():
            value = bmd(res.samples, level) if res.valid.size else math.nan
            rows.append({"model": self.model, "endpoint": endpoint, "bmr": bmr, "bmd": value,
                         "censored_fraction": res.censored_fraction,
                         "reliable": res.censored_fraction <= self.max_censored_fraction})
        return rows

    def write(self, directory) -> Path:
        """Long-format tables: curves.csv, ed_samples.csv, bmd.csv."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        c = self.curves
        with open(directory / "curves.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "dose", "D", "M", "r"])
            for s in range(c.D.shape[0]):
                for g, x in enumerate(c.grid):
                    w.writerow([s, repr(float(x)), repr(float(c.D[s, g])), repr(float(c.M[s, g])),
                                repr(float(c.r[s, g]))])
        with open(directory / "ed_samples.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["endpoint", "bmr", "draw", "ed", "censored"])
            for (endpoint, bmr), res in self.ed.items():
                for s, (v, cen) in enumerate(zip(res.samples, res.censored)):
                    w.writerow([endpoint, bmr, s, "" if cen else repr(float(v)), int(cen)])
        with open(directory / "bmd.csv", "w", newline="", encoding="utf-8") as fh:
            rows = self.bmd_table()
            w = csv.DictWriter(fh, fieldnames=["model", "endpoint", "bmr", "bmd", "censored_fraction",
                                               "reliable"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        return directory


def risk_summary(model: str, params: MixtureParams, spec: ModelSpec, grid, bmrs=(0.05, 0.10),
                 endpoints=ENDPOINTS, search_max: float | None = None,
                 rule: QuadratureRule | None = None, n_grid: int = 60) -> RiskSummary:
    """Curves on ``grid`` and effective doses for each endpoint and BMR.

    ``search_max`` defaults to 1.5 times the largest grid dose.
    """
    grid = np.asarray(grid, dtype=float)
    curves = dose_response_draws(params, spec, grid, rule)
    search_max = 1.5 * float(grid.max()) if search_max is None else search_max
    S = params.betas.shape[0]
    ed = {}
    for endpoint in endpoints:
        fn = endpoint_curve(params, spec, endpoint, rule)
        for a in bmrs:
            ed[(endpoint, float(a))] = effective_dose(fn, a, search_max, n_draws=S, n_grid=n_grid)
    return RiskSummary(model, curves, ed)
