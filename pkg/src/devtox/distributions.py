"""Random variates and mass functions used by the samplers and risk summaries.

Logit-normal integrals are evaluated with Gauss-Hermite quadrature.  For
wide normals the poles of the logistic function at ``±iπ(2k+1)`` slow the
convergence of plain Gauss-Hermite, so the two nearest pole pairs are
subtracted and integrated in closed form through the Faddeeva function;
only the (entire-in-a-wide-strip) remainder goes through the rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np
from scipy.special import betaln, gammaln, wofz

__all__ = [
    "QuadratureRule",
    "gauss_hermite",
    "logistic",
    "log_logistic",
    "sample_polya_gamma",
    "polya_gamma_array",
    "polya_gamma_mean",
    "logit_normal_integral",
    "logit_normal_square_integral",
    "bb_pmf",
    "lnb_pmf",
    "binomial_pmf",
    "taylor_lnb_moments",
    "sample_mvn",
    "sample_wishart",
    "sample_inverse_wishart",
    "sample_inverse_gamma",
    "sample_shifted_poisson",
    "sample_standard_families",
]

DEFAULT_ORDER = 30
# below this variance plain Gauss-Hermite is already exact to rounding and the
# pole correction would only add cancellation error
_POLE_CORRECTION_MIN_VAR = 0.25
_N_POLE_PAIRS = 2
# below this variance the LNB mass equals the Binomial mass to O(m^2 sigma2)
_LNB_MIN_VAR = 1e-16


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule in the physicists' convention (weight ``exp(-t^2)``)."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if len(self.nodes) != self.order or len(self.weights) != self.order:
            raise ValueError("nodes and weights must both have length `order`")
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    def expect(self, f, theta, sigma2):
        """E f(psi) for psi ~ N(theta, sigma2), broadcasting over theta/sigma2.

        ``f`` receives an array with a trailing quadrature axis.
        """
        theta = np.asarray(theta, dtype=float)[..., None]
        sd = np.sqrt(2.0 * np.asarray(sigma2, dtype=float))[..., None]
        vals = f(theta + sd * self.nodes)
        return vals @ self.weights / math.sqrt(math.pi)


@lru_cache(maxsize=None)
def gauss_hermite(order: int = DEFAULT_ORDER) -> QuadratureRule:
    if order < 1:
        raise ValueError(f"quadrature order must be positive, got {order}")
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, order)


def logistic(x):
    """exp(x)/(1+exp(x)) without overflow; NaN propagates."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    nan = np.isnan(x)
    out[nan] = np.nan
    return out if out.ndim else float(out)


def log_logistic(x):
    """log(logistic(x)), stable for large |x|."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Polya-Gamma variates
# ---------------------------------------------------------------------------

_TRUNC = 0.64
_PI2_8 = math.pi * math.pi / 8.0


@numba.njit(cache=True)
def _pg_coef(n, x):
    # n-th term of the alternating series for the J*(1, z) density
    k = (n + 0.5) * math.pi
    if x > _TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    if x <= 0.0:
        return 0.0
    return math.exp(-1.5 * (math.log(0.5 * math.pi) + math.log(x)) + math.log(k)
                    - 2.0 * (n + 0.5) * (n + 0.5) / x)


@numba.njit(cache=True)
def _log_norm_cdf(v):
    return math.log(0.5 * math.erfc(-v / math.sqrt(2.0)))


@numba.njit(cache=True)
def _mass_truncated_exponential(z):
    t = _TRUNC
    fz = _PI2_8 + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    xb = x0 - z + _log_norm_cdf(b)
    xa = x0 + z + _log_norm_cdf(a)
    q_over_p = 4.0 / math.pi * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + q_over_p)


@numba.njit(cache=True)
def _truncated_inverse_gauss(z, rng):
    # inverse Gaussian(mean 1/z, shape 1) restricted to (0, TRUNC)
    t = _TRUNC
    x = t + 1.0
    if 1.0 / t > z:
        alpha = 0.0
        while rng.random() > alpha:
            e1 = rng.standard_exponential()
            e2 = rng.standard_exponential()
            while e1 * e1 > 2.0 * e2 / t:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
            x = 1.0 + e1 * t
            x = t / (x * x)
            alpha = math.exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > t:
            yy = rng.standard_normal()
            yy *= yy
            half_mu = 0.5 * mu
            mu_y = mu * yy
            x = mu + half_mu * mu_y - half_mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if rng.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@numba.njit(cache=True)
def _pg1(c, rng):
    """One exact PG(1, c) draw by the alternating-series rejection method."""
    z = 0.5 * abs(c)
    fz = _PI2_8 + 0.5 * z * z
    while True:
        if rng.random() < _mass_truncated_exponential(z):
            x = _TRUNC + rng.standard_exponential() / fz
        else:
            x = _truncated_inverse_gauss(z, rng)
        s = _pg_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _pg_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _pg_coef(n, x)
                if y > s:
                    break


@numba.njit(cache=True)
def _pg_array(b, c, rng):
    out = np.zeros(b.shape[0])
    for i in range(b.shape[0]):
        acc = 0.0
        for _ in range(b[i]):
            acc += _pg1(c[i], rng)
        out[i] = acc
    return out


def polya_gamma_array(b, c, rng: np.random.Generator) -> np.ndarray:
    """Elementwise PG(b_i, c_i) for integer shapes b_i >= 0 (shape 0 gives 0)."""
    b = np.ascontiguousarray(b, dtype=np.int64).ravel()
    c = np.ascontiguousarray(np.broadcast_to(c, b.shape), dtype=np.float64).ravel()
    if np.any(b < 0):
        raise ValueError("Polya-Gamma shape must be nonnegative")
    return _pg_array(b, c, rng)


def sample_polya_gamma(b, c: float, rng: np.random.Generator) -> float:
    """Draw PG(b, c) for a positive integer shape ``b``.

    The integer-shape draw is the sum of ``b`` independent PG(1, c) draws.
    Non-integer shapes are rejected.
    """
    if not b > 0:
        raise ValueError(f"Polya-Gamma shape must be positive, got {b}")
    if int(b) != b:
        raise ValueError(f"only integer Polya-Gamma shapes are supported, got {b}")
    return float(_pg_array(np.array([int(b)], dtype=np.int64), np.array([float(c)]), rng)[0])


def polya_gamma_mean(b, c):
    """E PG(b, c) = b tanh(c/2) / (2c), with limit b/4 at c = 0."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-6
    safe = np.where(small, 1.0, c)
    return np.where(small, b / 4.0 * (1.0 - c * c / 12.0), b * np.tanh(safe / 2.0) / (2.0 * safe))


# ---------------------------------------------------------------------------
# Logit-normal integrals
# ---------------------------------------------------------------------------

def _pole_terms(theta, sd, psi, square):
    """Closed-form expectations of the principal parts of phi (or phi^2).

    Returns (principal parts evaluated at the nodes ``psi``, their exact
    normal expectations).  ``theta``/``sd`` carry a trailing singleton axis.
    """
    at_nodes = np.zeros_like(psi)
    exact = np.zeros(np.broadcast_shapes(theta.shape, sd.shape)[:-1])
    for k in range(_N_POLE_PAIRS):
        z0 = 1j * math.pi * (2 * k + 1)
        u = (z0 - theta[..., 0]) / (math.sqrt(2.0) * sd[..., 0])
        wu = wofz(u)
        # E[1/(X - z0)] for X ~ N(theta, sd^2), Im z0 > 0; the conjugate pole
        # contributes the complex conjugate
        at_nodes += 2.0 * np.real(1.0 / (psi - z0))
        exact += 2.0 * np.real(1j * math.sqrt(math.pi / 2.0) * wu / sd[..., 0])
        if square:
            dw = -2.0 * u * wu + 2j / math.sqrt(math.pi)
            at_nodes += 2.0 * np.real(1.0 / (psi - z0) ** 2)
            exact += 2.0 * np.real(1j * math.sqrt(math.pi) / 2.0 * dw / sd[..., 0] ** 2)
    return at_nodes, exact


def _logit_normal_moment(theta, sigma2, rule, square):
    theta, sigma2 = np.broadcast_arrays(np.asarray(theta, float), np.asarray(sigma2, float))
    if np.any(sigma2 < 0):
        raise ValueError("sigma2 must be nonnegative")
    power = 2 if square else 1
    out = logistic(theta) ** power
    out = np.array(out, dtype=float, ndmin=0)
    plain = (sigma2 > 0) & (sigma2 < _POLE_CORRECTION_MIN_VAR)
    wide = sigma2 >= _POLE_CORRECTION_MIN_VAR
    if np.any(plain):
        out[plain] = rule.expect(lambda p: logistic(p) ** power, theta[plain], sigma2[plain])
    if np.any(wide):
        th = theta[wide][:, None]
        sd = np.sqrt(sigma2[wide])[:, None]
        psi = th + math.sqrt(2.0) * sd * rule.nodes
        at_nodes, exact = _pole_terms(th, sd, psi, square)
        remainder = logistic(psi) ** power - at_nodes
        out[wide] = remainder @ rule.weights / math.sqrt(math.pi) + exact
    return out if out.ndim else float(out)


def logit_normal_integral(theta, sigma2, rule: QuadratureRule | None = None):
    """∫ logistic(psi) N(psi | theta, sigma2) dpsi; exact logistic at sigma2 = 0."""
    return _logit_normal_moment(theta, sigma2, rule or gauss_hermite(), square=False)


def logit_normal_square_integral(theta, sigma2, rule: QuadratureRule | None = None):
    """∫ logistic(psi)^2 N(psi | theta, sigma2) dpsi."""
    return _logit_normal_moment(theta, sigma2, rule or gauss_hermite(), square=True)


# ---------------------------------------------------------------------------
# Mass functions
# ---------------------------------------------------------------------------

def _check_counts(y, m):
    y = np.asarray(y)
    m = np.asarray(m)
    if np.any(y < 0) or np.any(y > m):
        raise ValueError("count y must satisfy 0 <= y <= m")
    return y, m


def _log_binom_coef(y, m):
    return gammaln(m + 1.0) - gammaln(y + 1.0) - gammaln(m - y + 1.0)


def binomial_pmf(y, m, p):
    """Binomial mass in log space; handles p in {0, 1}."""
    y, m = _check_counts(y, m)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = (_log_binom_coef(y, m)
                + np.where(y > 0, y * np.log(p), 0.0)
                + np.where(m - y > 0, (m - y) * np.log1p(-p), 0.0))
    return np.exp(logp)


def bb_pmf(y, m, theta, lam):
    """Beta-Binomial mass with mean logistic(theta) and dispersion ``lam``."""
    y, m = _check_counts(y, m)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("Beta-Binomial dispersion must be positive")
    mean = logistic(theta)
    a = lam * mean
    b = lam * (1.0 - mean)
    out = np.exp(_log_binom_coef(y, m) + betaln(y + a, m - y + b) - betaln(a, b))
    return out if np.ndim(out) else float(out)


def _lnb_mode(y, m, theta, s2, max_iter=100):
    """Mode of y log phi(psi) + (m - y) log phi(-psi) - (psi - theta)^2 / (2 s2).

    The log integrand is strictly concave, so safeguarded Newton on its
    derivative converges inside the bracket [theta + s2 (y - m), theta + s2 y].
    """
    lo, hi = theta + s2 * (y - m), theta + s2 * y
    psi = theta.copy()
    for _ in range(max_iter):
        p = logistic(psi)
        grad = y - m * p - (psi - theta) / s2
        up = grad > 0
        lo = np.where(up, psi, lo)
        hi = np.where(up, hi, psi)
        new = psi + grad / (m * p * (1.0 - p) + 1.0 / s2)
        new = np.where((new > lo) & (new < hi), new, 0.5 * (lo + hi))
        done = np.abs(new - psi) <= 1e-12 * (1.0 + np.abs(psi))
        psi = new
        if np.all(done):
            break
    return psi


def _lnb_adaptive(y, m, theta, s2, rule):
    """Unnormalized adaptive Gauss-Hermite mass on broadcast arrays with s2 > 0."""
    yf, mf = y.astype(float), m.astype(float)
    mode = _lnb_mode(yf, mf, theta, s2)
    p = logistic(mode)
    scale = math.sqrt(2.0) / np.sqrt(mf * p * (1.0 - p) + 1.0 / s2)
    t = rule.nodes
    x = mode[..., None] + scale[..., None] * t
    log_f = (_log_binom_coef(y, m)[..., None] + yf[..., None] * log_logistic(x)
             + (mf - yf)[..., None] * log_logistic(-x)
             - (x - theta[..., None]) ** 2 / (2.0 * s2[..., None])
             - 0.5 * np.log(2.0 * math.pi * s2)[..., None])
    return scale * (np.exp(log_f + t * t) @ rule.weights)


def lnb_pmf(y, m, theta, sigma2, rule: QuadratureRule | None = None):
    """Logistic-Normal-Binomial mass; the Binomial mass for negligible sigma2.

    The rule is centred at the mode of the integrand and scaled by its
    curvature there (adaptive Gauss-Hermite), which keeps the error small
    when the Binomial factor is much narrower than the normal mixing density.
    Each mass is divided by the quadrature total over 0..m so the pmf sums
    to one to rounding.
    """
    y, m = _check_counts(y, m)
    rule = rule or gauss_hermite()
    theta = np.asarray(theta, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 < 0):
        raise ValueError("sigma2 must be nonnegative")
    binomial = sigma2 <= _LNB_MIN_VAR
    s2 = np.where(binomial, 1.0, sigma2)
    mb, tb, sb = np.broadcast_arrays(m, theta, s2)
    total = np.zeros(mb.shape)
    for j in range(int(mb.max(initial=0)) + 1):
        jj = np.full(mb.shape, j)
        inside = jj <= mb
        total += np.where(inside, _lnb_adaptive(np.minimum(jj, mb), mb, tb, sb, rule), 0.0)
    yb, mb2, tb2, sb2 = np.broadcast_arrays(y, m, theta, s2)
    out = _lnb_adaptive(yb, mb2, tb2, sb2, rule) / total
    degenerate = np.broadcast_to(binomial, out.shape)
    if np.any(degenerate):
        out = np.where(degenerate, binomial_pmf(yb, mb2, logistic(tb2)), out)
    return out if np.ndim(out) else float(out)


def taylor_lnb_moments(theta, sigma2):
    """Second-order Taylor approximations to the LNB implant mean and correlation.

    Derivatives of the logistic are expressed through its value,
    phi' = phi(1-phi) and phi'' = phi(1-phi)(1-2phi).
    """
    p = logistic(theta)
    d1 = p * (1.0 - p)
    d2 = d1 * (1.0 - 2.0 * p)
    sigma2 = np.asarray(sigma2, dtype=float)
    mean = p + 0.5 * sigma2 * d2
    q = 1.0 - 2.0 * p
    num = sigma2 * d1 * (4.0 - sigma2 * q * q)
    den = 4.0 + sigma2 * q * (2.0 - 4.0 * p - sigma2 * d2)
    corr = num / den
    if np.ndim(mean) == 0:
        return float(mean), float(corr)
    return mean, corr


# ---------------------------------------------------------------------------
# Standard families
# ---------------------------------------------------------------------------

def _cholesky(cov, what="covariance"):
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as err:
        raise ValueError(f"{what} is not positive definite") from err


def sample_mvn(mean, cov, rng, size=None):
    """Multivariate normal through the Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=float)
    chol = _cholesky(cov)
    shape = (mean.shape[-1],) if size is None else (*np.atleast_1d(size), mean.shape[-1])
    z = rng.standard_normal(shape)
    return mean + z @ chol.T


def sample_wishart(df, scale, rng):
    """Wishart(df, scale) via the Bartlett decomposition."""
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if df < p:
        raise ValueError(f"Wishart degrees of freedom {df} below dimension {p}")
    chol = _cholesky(scale, "Wishart scale")
    a = np.zeros((p, p))
    for i in range(p):
        a[i, i] = math.sqrt(rng.chisquare(df - i))
        a[i, :i] = rng.standard_normal(i)
    la = chol @ a
    return la @ la.T


def sample_inverse_wishart(df, scale, rng):
    """Sigma with Sigma^{-1} ~ Wishart(df, scale^{-1}); E Sigma = scale/(df-p-1)."""
    scale = np.asarray(scale, dtype=float)
    _cholesky(scale, "inverse-Wishart scale")
    w = sample_wishart(df, np.linalg.inv(scale), rng)
    return np.linalg.inv(w)


def sample_inverse_gamma(shape, rate, rng, size=None):
    """Inverse-Gamma with density proportional to x^{-shape-1} exp(-rate/x)."""
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ValueError("inverse-Gamma shape and rate must be positive")
    return 1.0 / rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size=size)


def sample_shifted_poisson(rate, rng, size=None):
    """1 + Poisson(rate): support starts at one, mean rate + 1."""
    if rate <= 0:
        raise ValueError("shifted Poisson rate must be positive")
    return 1 + rng.poisson(rate, size=size)


_FAMILIES = {
    "mvn": lambda p, rng, size: sample_mvn(p["mean"], p["cov"], rng, size),
    "wishart": lambda p, rng, size: sample_wishart(p["df"], p["scale"], rng),
    "inverse_wishart": lambda p, rng, size: sample_inverse_wishart(p["df"], p["scale"], rng),
    "beta": lambda p, rng, size: rng.beta(p["a"], p["b"], size=size),
    "gamma": lambda p, rng, size: rng.gamma(p["shape"], 1.0 / p["rate"], size=size),
    "inverse_gamma": lambda p, rng, size: sample_inverse_gamma(p["shape"], p["rate"], rng, size),
    "shifted_poisson": lambda p, rng, size: sample_shifted_poisson(p["rate"], rng, size),
}


def sample_standard_families(family: str, params: dict, rng, size=None):
    """Dispatch a draw from one of the named families by string key.

    Gamma and inverse-Gamma take (shape, rate).  Matrix families ignore ``size``.
    """
    try:
        draw = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(_FAMILIES)}") from None
    return draw(params, rng, size)
