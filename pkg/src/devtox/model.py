"""Data containers, model specifications and mixture kernel evaluation.

Covariates are always ``(1, dose)`` on the natural dose scale.  Component
parameters are stored with category (stage) first: ``betas[j, l]`` is the
regression vector of stage ``j`` (0 = non-viable, 1 = malformed given
viable) in component ``l``.  Parameter containers accept an optional leading
batch axis so a whole chain can be evaluated at once.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .distributions import (
    QuadratureRule,
    bb_pmf,
    binomial_pmf,
    gauss_hermite,
    lnb_pmf,
    logistic,
    logit_normal_integral,
    sample_inverse_gamma,
    sample_inverse_wishart,
    sample_mvn,
)

__all__ = [
    "DamRecord",
    "Dataset",
    "Kernel",
    "Weights",
    "ModelSpec",
    "MODEL_NAMES",
    "Hyperparameters",
    "MixtureParams",
    "stick_breaking",
    "lsbp_weights",
    "dp_weights",
    "kernel_pmf",
    "mixture_pmf",
    "elicit_sigma2_prior",
    "prior_doseresponse_check",
]


@dataclass(frozen=True)
class DamRecord:
    dose: float
    m: int
    R: int
    y: int

    def __post_init__(self):
        if not self.dose >= 0:
            raise ValueError(f"dose must be nonnegative, got {self.dose}")
        if self.m < 1:
            raise ValueError(f"implant count must be at least 1, got {self.m}")
        if self.R < 0 or self.y < 0:
            raise ValueError("counts must be nonnegative")
        if self.R + self.y > self.m:
            raise ValueError(f"R + y = {self.R + self.y} exceeds m = {self.m}")


@dataclass(frozen=True)
class Dataset:
    records: tuple[DamRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise ValueError("dataset is empty")

    @classmethod
    def from_arrays(cls, dose, m, R, y) -> "Dataset":
        return cls(tuple(DamRecord(float(d), int(a), int(b), int(c))
                         for d, a, b, c in zip(dose, m, R, y)))

    def __len__(self):
        return len(self.records)

    @property
    def dose(self) -> np.ndarray:
        return np.array([r.dose for r in self.records], dtype=float)

    @property
    def m(self) -> np.ndarray:
        return np.array([r.m for r in self.records], dtype=np.int64)

    @property
    def R(self) -> np.ndarray:
        return np.array([r.R for r in self.records], dtype=np.int64)

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=np.int64)

    @property
    def dose_levels(self) -> np.ndarray:
        return np.unique(self.dose)

    @property
    def group_sizes(self) -> np.ndarray:
        return np.unique(self.dose, return_counts=True)[1]

    @property
    def max_dose(self) -> float:
        return float(self.dose.max())

    def subset(self, index) -> "Dataset":
        return Dataset(tuple(self.records[i] for i in index))


class Kernel(str, enum.Enum):
    BINOMIAL = "Binomial"
    LNB = "LNB"
    BB = "BB"


class Weights(str, enum.Enum):
    SINGLE = "Single"
    COMMON = "CommonWeights"
    DOSE_DEPENDENT = "DoseDependent"


MODEL_NAMES = {
    "CR-logits": (Kernel.BINOMIAL, Weights.SINGLE),
    "CR-BB": (Kernel.BB, Weights.SINGLE),
    "CR-LNB": (Kernel.LNB, Weights.SINGLE),
    "CW-Bin": (Kernel.BINOMIAL, Weights.COMMON),
    "Gen-Bin": (Kernel.BINOMIAL, Weights.DOSE_DEPENDENT),
    "CW-LNB": (Kernel.LNB, Weights.COMMON),
    "Gen-LNB": (Kernel.LNB, Weights.DOSE_DEPENDENT),
}


@dataclass(frozen=True)
class ModelSpec:
    kernel: Kernel
    weights: Weights
    truncation: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        object.__setattr__(self, "weights", Weights(self.weights))
        if self.truncation < 1:
            raise ValueError("truncation level must be at least 1")
        if self.weights is Weights.SINGLE and self.truncation != 1:
            raise ValueError("single-component models need truncation 1")
        if self.weights is not Weights.SINGLE and self.truncation < 2:
            raise ValueError("mixture weights need truncation of at least 2")
        if self.kernel is Kernel.BB and self.weights is not Weights.SINGLE:
            raise ValueError("the Beta-Binomial kernel is only available without mixing")

    @classmethod
    def from_name(cls, name: str, truncation: int = 50) -> "ModelSpec":
        try:
            kernel, weights = MODEL_NAMES[name]
        except KeyError:
            raise ValueError(f"unknown model {name!r}; choose from {list(MODEL_NAMES)}") from None
        return cls(kernel, weights, 1 if weights is Weights.SINGLE else truncation)

    @property
    def name(self) -> str:
        for key, value in MODEL_NAMES.items():
            if value == (self.kernel, self.weights):
                return key
        raise AssertionError("unreachable")

    def to_dict(self):
        return {"kernel": self.kernel.value, "weights": self.weights.value,
                "truncation": self.truncation, "name": self.name}

    @classmethod
    def from_dict(cls, d):
        return cls(Kernel(d["kernel"]), Weights(d["weights"]), int(d["truncation"]))


def _as_pd(mat, what):
    mat = np.array(mat, dtype=float)
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} must be positive definite") from None
    return mat


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings.  Per-stage quantities have a leading axis of length 2.

    ``lambda_shape``/``lambda_rate`` define the Gamma prior on the Beta-Binomial
    dispersions and are used by the parametric CR-BB sampler only.
    """

    gamma0: np.ndarray
    Gamma0: np.ndarray
    mu0: np.ndarray
    kappa0: np.ndarray
    nu0: np.ndarray
    Lambda0: np.ndarray
    a_sigma: float = 3.0
    b_sigma: float = 1.2
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    lambda_shape: float = 2.0
    lambda_rate: float = 0.1

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "gamma0", np.asarray(self.gamma0, dtype=float).reshape(2))
        set_(self, "Gamma0", _as_pd(self.Gamma0, "Gamma0"))
        set_(self, "mu0", np.asarray(self.mu0, dtype=float).reshape(2, 2))
        set_(self, "kappa0", np.broadcast_to(np.asarray(self.kappa0, float), (2,)).copy())
        set_(self, "nu0", np.broadcast_to(np.asarray(self.nu0, float), (2,)).copy())
        lam = np.asarray(self.Lambda0, dtype=float)
        if lam.shape == (2, 2):
            lam = np.stack([lam, lam])
        set_(self, "Lambda0", np.stack([_as_pd(lam[j], f"Lambda0[{j}]") for j in range(2)]))
        if np.any(self.nu0 < 2):
            raise ValueError("nu0 must be at least the dimension (2)")
        scalars = (self.a_sigma, self.b_sigma, self.a_alpha, self.b_alpha,
                   self.lambda_shape, self.lambda_rate, *self.kappa0)
        if any(not v > 0 for v in scalars):
            raise ValueError("scalar hyperparameters must be positive")

    @classmethod
    def default(cls, max_dose: float, a_sigma: float = 3.0, b_sigma: float = 1.2,
                weight_slope_span: float = 2.0, **overrides) -> "Hyperparameters":
        """Defaults giving a prior-mean curve rising from about 0.05 to 0.5.

        ``weight_slope_span`` is the prior sd of the change in a stick-breaking
        logit across the full dose range; larger values let the mixture
        weights switch over shorter dose intervals.
        """
        if not max_dose > 0:
            raise ValueError("max_dose must be positive")
        lo = math.log(0.05 / 0.95)
        mu = np.array([lo, -lo / max_dose])
        Lambda = np.diag([1.0, (2.0 / max_dose) ** 2])
        kwargs = dict(
            gamma0=np.zeros(2),
            Gamma0=np.diag([4.0, (weight_slope_span / max_dose) ** 2]),
            mu0=np.stack([mu, mu]),
            kappa0=1.0,
            nu0=4.0,
            Lambda0=np.stack([Lambda, Lambda]),
            a_sigma=a_sigma,
            b_sigma=b_sigma,
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    def replace(self, **changes) -> "Hyperparameters":
        return replace(self, **changes)

    def to_dict(self):
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            out[name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def stick_breaking(v):
    """Stick-breaking weights from break proportions along the last axis.

    ``v`` of length L-1 gives L weights; the last one is the remaining stick.
    """
    v = np.asarray(v, dtype=float)
    rest = np.cumprod(1.0 - v, axis=-1)
    lead = np.concatenate([np.ones(v.shape[:-1] + (1,)), rest[..., :-1]], axis=-1)
    return np.concatenate([v * lead, rest[..., -1:]], axis=-1) if v.shape[-1] else np.ones(v.shape[:-1] + (1,))


def lsbp_weights(x, gammas):
    """Logit stick-breaking weights at dose ``x`` for break coefficients ``gammas``.

    ``gammas`` has shape (..., L-1, 2); an empty set gives the single weight 1.
    """
    gammas = np.asarray(gammas, dtype=float)
    if gammas.size == 0:
        return np.ones(gammas.shape[:-2] + (1,))
    x = np.asarray(x, dtype=float)
    eta = gammas[..., 0] + gammas[..., 1] * x[..., None]
    return stick_breaking(logistic(eta))


def dp_weights(v):
    """Dirichlet-process stick-breaking weights; the last weight takes the remainder.

    The remainder is kept as a product so it stays positive; the vector is
    then rescaled to absorb rounding in the sum.
    """
    v = np.asarray(v, dtype=float)
    if np.any((v <= 0) | (v >= 1)):
        raise ValueError("stick proportions must lie in (0, 1)")
    w = stick_breaking(v)
    return w / w.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class MixtureParams:
    """One (or a batch of) parameter draws.

    Shapes without batch axis: ``betas`` (2, L, 2); ``gammas`` (L-1, 2) for
    dose-dependent weights; ``sticks`` (L-1,) and ``alpha`` for common
    weights; ``sigma2`` (2,) for the LNB kernel; ``bb_lambda`` (2,) for BB.
    """

    betas: np.ndarray
    gammas: np.ndarray | None = None
    sticks: np.ndarray | None = None
    alpha: np.ndarray | float | None = None
    sigma2: np.ndarray | None = None
    bb_lambda: np.ndarray | None = None

    @property
    def n_components(self) -> int:
        return self.betas.shape[-2]

    @property
    def batch_shape(self) -> tuple:
        return self.betas.shape[:-3]

    def weights(self, x):
        """Mixture weights at dose ``x``, shape batch + (L,) (x broadcasts with batch)."""
        x = np.asarray(x, dtype=float)
        if self.gammas is not None:
            return lsbp_weights(x, self.gammas)
        shape = np.broadcast_shapes(self.batch_shape, x.shape) + (self.n_components,)
        if self.sticks is not None:
            w = stick_breaking(self.sticks)
        else:
            w = np.ones(self.batch_shape + (1,))
        return np.broadcast_to(w, shape)

    def atoms(self, x):
        """Linear predictors theta_{jl}(x), shape batch + (2, L)."""
        x = np.asarray(x, dtype=float)
        return self.betas[..., 0] + self.betas[..., 1] * x[..., None, None]

    def __getitem__(self, idx) -> "MixtureParams":
        def take(v):
            return None if v is None else np.asarray(v)[idx]
        return MixtureParams(self.betas[idx], take(self.gammas), take(self.sticks),
                             take(self.alpha), take(self.sigma2), take(self.bb_lambda))


def _stage_moments(theta, spec: ModelSpec, params: MixtureParams, rule):
    """Per-component probabilities of each stage event, shape batch + (2, L)."""
    if spec.kernel is Kernel.LNB:
        return logit_normal_integral(theta, params.sigma2[..., :, None], rule)
    return logistic(theta)


def _stage_pmf(count, trials, theta, stage, spec, params, rule):
    if spec.kernel is Kernel.BINOMIAL:
        return binomial_pmf(count, trials, logistic(theta))
    if spec.kernel is Kernel.LNB:
        return lnb_pmf(count, trials, theta, params.sigma2[..., stage], rule)
    return bb_pmf(count, trials, theta, params.bb_lambda[..., stage])


def kernel_pmf(R, y, m, theta1, theta2, spec: ModelSpec, params: MixtureParams | None = None,
               rule: QuadratureRule | None = None):
    """Continuation-ratio kernel: first-stage mass of R times second-stage mass of y.

    ``params`` supplies ``sigma2`` (LNB) or ``bb_lambda`` (BB) and may be batched
    consistently with ``theta1``/``theta2``.
    """
    if R < 0 or y < 0 or R + y > m:
        raise ValueError(f"need 0 <= R, y and R + y <= m; got R={R}, y={y}, m={m}")
    rule = rule or gauss_hermite()
    first = _stage_pmf(R, m, theta1, 0, spec, params, rule)
    second = _stage_pmf(y, m - R, theta2, 1, spec, params, rule)
    return first * second


def mixture_pmf(R, y, m, x, params: MixtureParams, spec: ModelSpec,
                rule: QuadratureRule | None = None):
    """Mixture of continuation-ratio kernels at dose x (batched over draws)."""
    rule = rule or gauss_hermite()
    theta = params.atoms(x)
    w = params.weights(x)
    extras = params
    if spec.kernel is not Kernel.BINOMIAL:
        # broadcast per-stage extras against the component axis
        extras = MixtureParams(params.betas,
                               sigma2=None if params.sigma2 is None else np.asarray(params.sigma2)[..., None, :],
                               bb_lambda=None if params.bb_lambda is None else np.asarray(params.bb_lambda)[..., None, :])
    comp = kernel_pmf(R, y, m, theta[..., 0, :], theta[..., 1, :], spec, extras, rule)
    out = np.sum(w * comp, axis=-1)
    return out if np.ndim(out) else float(out)


def elicit_sigma2_prior(target_extra_variance: float, shape: float = 3.0):
    """Inverse-Gamma(a, b) for sigma^2 whose mean 4v matches a target correlation v.

    The intracluster correlation under the LNB kernel is about sigma^2/4, so a
    prior mean of 4v gives on average an extra (m-1)v folds of Binomial variance.
    Returns exact rationals when the inputs are rationals.
    """
    v, a = target_extra_variance, shape
    if not 0 < v < 1:
        raise ValueError("target extra variance must lie in (0, 1)")
    if not a > 1:
        raise ValueError("inverse-Gamma shape must exceed 1 for a finite prior mean")
    return a, 4 * v * (a - 1)


def sample_prior(hyper: Hyperparameters, spec: ModelSpec, n_draws: int, rng) -> MixtureParams:
    """Independent draws of the mixture parameters from the prior (batched)."""
    if n_draws < 1:
        raise ValueError("need at least one prior draw")
    L = spec.truncation
    betas = np.empty((n_draws, 2, L, 2))
    for s in range(n_draws):
        for j in range(2):
            Sigma = sample_inverse_wishart(hyper.nu0[j], hyper.Lambda0[j], rng)
            mu = sample_mvn(hyper.mu0[j], Sigma / hyper.kappa0[j], rng)
            betas[s, j] = sample_mvn(mu, Sigma, rng, size=L)
    gammas = sticks = alpha = sigma2 = lam = None
    if spec.weights is Weights.DOSE_DEPENDENT:
        gammas = sample_mvn(hyper.gamma0, hyper.Gamma0, rng, size=(n_draws, L - 1))
    elif spec.weights is Weights.COMMON:
        alpha = rng.gamma(hyper.a_alpha, 1.0 / hyper.b_alpha, size=n_draws)
        sticks = rng.beta(1.0, alpha[:, None], size=(n_draws, L - 1))
    if spec.kernel is Kernel.LNB:
        sigma2 = sample_inverse_gamma(hyper.a_sigma, hyper.b_sigma, rng, size=(n_draws, 2))
    elif spec.kernel is Kernel.BB:
        lam = rng.gamma(hyper.lambda_shape, 1.0 / hyper.lambda_rate, size=(n_draws, 2))
    return MixtureParams(betas, gammas, sticks, alpha, sigma2, lam)


def prior_doseresponse_check(hyper: Hyperparameters, spec: ModelSpec, grid: Sequence[float],
                             n_draws: int, rng, rule: QuadratureRule | None = None):
    """Monte Carlo prior-expected D, M, r curves on ``grid``.

    Returns ``(mean, se)`` arrays of shape (len(grid), 3).
    """
    from .inference import dose_response_draw

    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    params = sample_prior(hyper, spec, n_draws, rng)
    rows = np.empty((n_draws, len(grid), 3))
    for g, x in enumerate(grid):
        D, M, r = dose_response_draw(params, spec, x, rule, strict=False)
        rows[:, g] = np.stack([D, M, r], axis=-1)
    mean = np.nanmean(rows, axis=0)
    se = np.nanstd(rows, axis=0, ddof=1) / math.sqrt(n_draws)
    return mean, se
