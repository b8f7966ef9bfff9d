"""Sampler state, run configuration and the array view of a dataset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..distributions import polya_gamma_mean, sample_mvn
from ..model import Dataset, Hyperparameters, Kernel, MixtureParams, ModelSpec, Weights

__all__ = ["McmcConfig", "ModelData", "GibbsState", "NumericalFailure", "initial_state"]


class NumericalFailure(RuntimeError):
    """A conditional draw could not be formed (singular or non-finite matrix)."""

    def __init__(self, message, component=None, iteration=None):
        self.reason = message
        self.component = component
        self.iteration = iteration
        parts = [message]
        if component is not None:
            parts.append(f"component {component}")
        if iteration is not None:
            parts.append(f"iteration {iteration}")
        super().__init__(", ".join(parts))


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 30000
    burn_in: int = 20000
    thin: int = 2
    truncation: int = 50
    seed: int = 0
    n_chains: int = 1

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.truncation < 1:
            raise ValueError("truncation must be at least 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def keep(self, iteration: int) -> bool:
        """Whether 1-based ``iteration`` is stored."""
        return iteration > self.burn_in and (iteration - self.burn_in) % self.thin == 0

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: int(v) for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ModelData:
    """Arrays the samplers work on.

    Unlike :class:`Dataset`, implant counts of zero are allowed; such dams
    carry no likelihood, which is how the prior-only checks switch the data off.
    """

    dose: np.ndarray
    m: np.ndarray
    R: np.ndarray
    y: np.ndarray
    X: np.ndarray = field(init=False)
    n_alive: np.ndarray = field(init=False)
    levels: np.ndarray = field(init=False)
    level_index: np.ndarray = field(init=False)

    def __post_init__(self):
        set_ = object.__setattr__
        dose = np.asarray(self.dose, dtype=float)
        m = np.asarray(self.m, dtype=np.int64)
        R = np.asarray(self.R, dtype=np.int64)
        y = np.asarray(self.y, dtype=np.int64)
        if not dose.ndim == m.ndim == R.ndim == y.ndim == 1 or not len(dose) == len(m) == len(R) == len(y):
            raise ValueError("dose, m, R, y must be 1-d arrays of equal length")
        if len(dose) == 0:
            raise ValueError("no dams")
        if np.any(m < 0) or np.any(R < 0) or np.any(y < 0) or np.any(R + y > m):
            raise ValueError("counts must satisfy 0 <= R, y and R + y <= m")
        set_(self, "dose", dose)
        set_(self, "m", m)
        set_(self, "R", R)
        set_(self, "y", y)
        set_(self, "X", np.column_stack([np.ones_like(dose), dose]))
        set_(self, "n_alive", m - R)
        levels, index = np.unique(dose, return_inverse=True)
        set_(self, "levels", levels)
        set_(self, "level_index", index)

    @classmethod
    def from_dataset(cls, data: Dataset) -> "ModelData":
        return cls(data.dose, data.m, data.R, data.y)

    def with_counts(self, R, y) -> "ModelData":
        return ModelData(self.dose, self.m, R, y)

    @property
    def n(self) -> int:
        return len(self.dose)


@dataclass
class GibbsState:
    """Mutable sampler state.  Component labels are 0-based internally.

    ``psi``/``zeta`` are (n, 2) with stage in the last axis; ``xi`` is (n, L-1)
    with NaN where a dam is not at risk for a break.
    """

    spec: ModelSpec
    hyper: Hyperparameters
    labels: np.ndarray
    betas: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    gammas: np.ndarray | None = None
    sticks: np.ndarray | None = None
    alpha: float | None = None
    sigma2: np.ndarray | None = None
    bb_lambda: np.ndarray | None = None
    psi: np.ndarray | None = None
    zeta: np.ndarray | None = None
    xi: np.ndarray | None = None
    iteration: int = 0

    @property
    def truncation(self) -> int:
        return self.spec.truncation

    def params(self) -> MixtureParams:
        """Snapshot of the mixture parameters (copies)."""
        def cp(v):
            return None if v is None else np.array(v, dtype=float)
        return MixtureParams(self.betas.copy(), cp(self.gammas), cp(self.sticks),
                             None if self.alpha is None else float(self.alpha),
                             cp(self.sigma2), cp(self.bb_lambda))

    def dam_atoms(self, data: ModelData) -> np.ndarray:
        """x_d' beta_{j, L_di} for each dam, shape (n, 2)."""
        b = self.betas[:, self.labels]  # (2, n, 2)
        return (b[..., 0] + b[..., 1] * data.dose).T


def initial_state(spec: ModelSpec, hyper: Hyperparameters, data: ModelData, rng) -> GibbsState:
    """Starting point: uniform labels, atoms from the prior, hyperparameters at prior centres."""
    L = spec.truncation
    n = data.n
    labels = rng.integers(0, L, size=n)
    mu = hyper.mu0.copy()
    # prior mean of the inverse-Wishart where it exists, otherwise its scale
    denom = np.where(hyper.nu0 > 3, hyper.nu0 - 3, 1.0)
    Sigma = hyper.Lambda0 / denom[:, None, None]
    betas = np.stack([sample_mvn(mu[j], Sigma[j], rng, size=L) for j in range(2)])
    state = GibbsState(spec, hyper, labels, betas, mu, Sigma)
    if spec.weights is Weights.DOSE_DEPENDENT:
        state.gammas = np.tile(hyper.gamma0, (L - 1, 1))
        state.xi = np.full((n, L - 1), np.nan)
    elif spec.weights is Weights.COMMON:
        state.alpha = hyper.a_alpha / hyper.b_alpha
        state.sticks = np.clip(rng.beta(1.0, state.alpha, size=L - 1), 1e-12, 1 - 1e-12)
    theta = state.dam_atoms(data)
    trials = np.column_stack([data.m, data.n_alive])
    if spec.kernel is Kernel.LNB:
        state.sigma2 = np.full(2, hyper.b_sigma / (hyper.a_sigma - 1) if hyper.a_sigma > 1 else hyper.b_sigma)
        state.psi = theta.copy()
        state.zeta = polya_gamma_mean(trials, state.psi)
    elif spec.kernel is Kernel.BINOMIAL:
        state.zeta = polya_gamma_mean(trials, theta)
    else:
        state.bb_lambda = np.full(2, hyper.lambda_shape / hyper.lambda_rate)
    return state
