"""Dataset I/O and the two synthetic-data generators.

Datasets are CSV files with header ``dose,m,R,y``.  Simulator settings are
dataclasses that round-trip through JSON.  The default coefficients are
illustrative (non-canonical): they are chosen to give the qualitative
features the simulations are meant to exhibit, a dip in the malformation and
combined-risk curves for the first generator and smoothly increasing curves
with dose-increasing dispersion for the second.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .distributions import bb_pmf, logistic, logit_normal_integral, sample_shifted_poisson
from .model import Dataset, DamRecord

__all__ = [
    "DatasetParseError",
    "parse_dataset",
    "read_dataset",
    "format_dataset",
    "write_dataset",
    "Sim1Config",
    "Sim2Config",
    "TrueCurves",
    "SimulationResult",
    "simulate_sim1",
    "simulate_sim2",
    "sim1_true_curves",
    "sim2_true_curves",
    "sim2_true_correlations",
    "write_truth",
]

HEADER = ("dose", "m", "R", "y")


class DatasetParseError(ValueError):
    """Malformed dataset text; the message names the offending row."""


def parse_dataset(text: str) -> Dataset:
    """Parse CSV text with header ``dose,m,R,y`` into a validated Dataset.

    Row numbers in error messages count the header as row 1.
    """
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DatasetParseError("empty dataset: no header row")
    header = [h.strip() for h in rows[0]]
    missing = [h for h in HEADER if h not in header]
    if missing:
        raise DatasetParseError(f"row 1: missing column(s) {', '.join(missing)}")
    col = {h: header.index(h) for h in HEADER}
    if len(rows) == 1:
        raise DatasetParseError("empty dataset: header only")
    records, errors = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            if len(row) < len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(row)}")
            dose = float(row[col["dose"]])
            counts = []
            for name in ("m", "R", "y"):
                raw = row[col[name]].strip()
                val = float(raw)
                if not val.is_integer():
                    raise ValueError(f"{name} must be an integer, got {raw!r}")
                counts.append(int(val))
            records.append(DamRecord(dose, *counts))
        except ValueError as err:
            errors.append(f"row {lineno}: {err}")
    if errors:
        raise DatasetParseError("; ".join(errors))
    return Dataset(tuple(records))


def read_dataset(path) -> Dataset:
    return parse_dataset(Path(path).read_text(encoding="utf-8"))


def format_dataset(data: Dataset) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(HEADER)
    for r in data.records:
        w.writerow([repr(float(r.dose)), r.m, r.R, r.y])
    return out.getvalue()


def write_dataset(data: Dataset, path) -> Path:
    path = Path(path)
    path.write_text(format_dataset(data), encoding="utf-8", newline="\n")
    return path


def _grid(step: float, top: float) -> np.ndarray:
    n = int(round(top / step))
    return np.round(np.linspace(0.0, n * step, n + 1), 12)


@dataclass(frozen=True)
class TrueCurves:
    grid: np.ndarray
    D: np.ndarray
    M: np.ndarray
    r: np.ndarray

    def __getitem__(self, endpoint):
        return {"D": self.D, "M": self.M, "r": self.r}[endpoint]


@dataclass(frozen=True)
class SimulationResult:
    data: Dataset
    truth: TrueCurves
    correlations: dict | None = None  # category -> values at the design doses
    doses: np.ndarray | None = None


class _JsonConfig:
    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, d):
        def tup(v):
            return tuple(tup(x) for x in v) if isinstance(v, (list, tuple)) else v
        return cls(**{k: tup(v) for k, v in d.items()})

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Sim1Config(_JsonConfig):
    """Three-component CR-LNB mixture with probit stick-breaking weights.

    ``weight_coef[j] = (a_j0, a_j1)`` gives p_j(x) = Phi(a_j0 + a_j1 x);
    ``atom_coef[j][k] = (b_jk0, b_jk1)`` for stage j and component k;
    ``dispersion_coef[j] = (c_j0, c_j1)`` gives sigma_j^2(x) = c_j0 + c_j1 x.
    """

    doses: tuple = (0.0, 0.625, 1.25, 2.5, 5.0)
    n_dams: int = 100
    implant_mean: float = 20.0
    weight_coef: tuple = ((0.6, -2.5), (0.55, -2.0))
    atom_coef: tuple = (
        ((-3.0, 0.5), (-3.0, 0.5), (-3.0, 0.5)),
        ((-0.65, 0.0), (-2.6, 0.0), (-2.5, 0.62)),
    )
    dispersion_coef: tuple = ((0.15, 0.05), (0.15, 0.05))
    grid_step: float = 0.2

    def __post_init__(self):
        d = np.asarray(self.doses, dtype=float)
        if d.ndim != 1 or np.any(d < 0) or len(np.unique(d)) != len(d):
            raise ValueError("doses must be distinct and nonnegative")
        if self.n_dams < len(d):
            raise ValueError("need at least one dam per dose")
        if not self.implant_mean > 1:
            raise ValueError("implant mean must exceed 1 (shifted Poisson)")
        if np.shape(self.weight_coef) != (2, 2):
            raise ValueError("weight_coef must be 2x2")
        if np.shape(self.atom_coef) != (2, 3, 2):
            raise ValueError("atom_coef must be 2x3x2")
        if np.shape(self.dispersion_coef) != (2, 2):
            raise ValueError("dispersion_coef must be 2x2")
        c = np.asarray(self.dispersion_coef, dtype=float)
        if np.any(c[:, 0, None] + c[:, 1, None] * d <= 0):
            raise ValueError("dispersion must be positive at every design dose")
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")

    @property
    def grid(self) -> np.ndarray:
        return _grid(self.grid_step, max(self.doses))

    def weights(self, x) -> np.ndarray:
        """(w1, w2, w3) at doses ``x``, shape x.shape + (3,)."""
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.weight_coef, dtype=float)
        p1 = ndtr(a[0, 0] + a[0, 1] * x)
        p2 = ndtr(a[1, 0] + a[1, 1] * x)
        return np.stack([p1, (1 - p1) * p2, (1 - p1) * (1 - p2)], axis=-1)

    def atoms(self, x) -> np.ndarray:
        """theta_jk(x), shape x.shape + (2, 3)."""
        x = np.asarray(x, dtype=float)[..., None, None]
        b = np.asarray(self.atom_coef, dtype=float)
        return b[..., 0] + b[..., 1] * x

    def dispersion(self, x) -> np.ndarray:
        """(sigma_1^2(x), sigma_2^2(x)), shape x.shape + (2,)."""
        x = np.asarray(x, dtype=float)[..., None]
        c = np.asarray(self.dispersion_coef, dtype=float)
        return c[:, 0] + c[:, 1] * x


@dataclass(frozen=True)
class Sim2Config(_JsonConfig):
    """Product of Beta-Binomials with linear logits and linear dispersions.

    ``logit_coef[j] = (b_j0, b_j1)`` and ``dispersion_coef[j] = (c_j0, c_j1)``
    with lambda_j(x) = c_j0 + c_j1 x.
    """

    doses: tuple = (0.0, 0.625, 1.25, 2.5, 3.75, 5.0)
    n_dams: int = 150
    implant_mean: float = 20.0
    logit_coef: tuple = ((-3.0, 0.5), (-2.5, 0.4))
    dispersion_coef: tuple = ((20.0, -3.0), (15.0, -2.0))
    grid_step: float = 0.2

    def __post_init__(self):
        d = np.asarray(self.doses, dtype=float)
        if d.ndim != 1 or np.any(d < 0) or len(np.unique(d)) != len(d):
            raise ValueError("doses must be distinct and nonnegative")
        if self.n_dams < 1:
            raise ValueError("need at least one dam")
        if not self.implant_mean > 1:
            raise ValueError("implant mean must exceed 1 (shifted Poisson)")
        if np.shape(self.logit_coef) != (2, 2) or np.shape(self.dispersion_coef) != (2, 2):
            raise ValueError("coefficients must be 2x2")
        if np.any(self.dispersion(d) <= 0):
            raise ValueError("dispersion must be positive at every design dose")
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")

    @property
    def grid(self) -> np.ndarray:
        return _grid(self.grid_step, max(self.doses))

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        b = np.asarray(self.logit_coef, dtype=float)
        return b[:, 0] + b[:, 1] * x

    def dispersion(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        c = np.asarray(self.dispersion_coef, dtype=float)
        return c[:, 0] + c[:, 1] * x


def sim1_true_curves(cfg: Sim1Config, grid=None) -> TrueCurves:
    """Exact D, M, r of the first generator (logit-normal integrals by quadrature)."""
    grid = cfg.grid if grid is None else np.asarray(grid, dtype=float)
    w = cfg.weights(grid)  # (G, 3)
    theta = cfg.atoms(grid)  # (G, 2, 3)
    s2 = np.broadcast_to(cfg.dispersion(grid)[..., None], theta.shape)
    p = np.asarray(logit_normal_integral(theta, s2))
    p1, p2 = p[:, 0], p[:, 1]
    D = np.sum(w * p1, axis=-1)
    surv = np.sum(w * (1 - p1), axis=-1)
    M = np.sum(w * (1 - p1) * p2, axis=-1) / surv
    r = 1 - np.sum(w * (1 - p1) * (1 - p2), axis=-1)
    return TrueCurves(grid, D, M, r)


def simulate_sim1(cfg: Sim1Config, rng) -> SimulationResult:
    """Draw a dataset from the first generator; dams are split evenly over doses."""
    doses = np.asarray(cfg.doses, dtype=float)
    N = len(doses)
    per = np.full(N, cfg.n_dams // N)
    per[: cfg.n_dams % N] += 1
    x = np.repeat(doses, per)
    n = len(x)
    m = sample_shifted_poisson(cfg.implant_mean - 1, rng, size=n)
    w = cfg.weights(x)
    cum = np.cumsum(w, axis=1)
    comp = np.minimum((cum < rng.random(n)[:, None] * cum[:, -1:]).sum(axis=1), 2)
    theta = np.take_along_axis(cfg.atoms(x), comp[:, None, None], axis=2)[..., 0]  # (n, 2)
    psi = theta + np.sqrt(cfg.dispersion(x)) * rng.standard_normal((n, 2))
    p = logistic(psi)
    R = rng.binomial(m, p[:, 0])
    y = rng.binomial(m - R, p[:, 1])
    data = Dataset.from_arrays(x, m, R, y)
    return SimulationResult(data, sim1_true_curves(cfg), None, doses)


def sim2_true_curves(cfg: Sim2Config, grid=None) -> TrueCurves:
    grid = cfg.grid if grid is None else np.asarray(grid, dtype=float)
    p = logistic(cfg.logits(grid))
    D, M = p[:, 0], p[:, 1]
    return TrueCurves(grid, D, M, 1 - (1 - D) * (1 - M))


def sim2_true_correlations(cfg: Sim2Config, doses=None) -> dict:
    """Category-level intracluster correlations of the Beta-Binomial product.

    Evaluated by enumerating the joint mass of two implants:
    corr_j = (Pr(both in j) - p_j^2) / (p_j (1 - p_j)).
    """
    doses = np.asarray(cfg.doses if doses is None else doses, dtype=float)
    theta = cfg.logits(doses)
    lam = cfg.dispersion(doses)
    t1, t2, l1, l2 = theta[:, 0], theta[:, 1], lam[:, 0], lam[:, 1]
    both1 = bb_pmf(2, 2, t1, l1)
    none1 = bb_pmf(0, 2, t1, l1)
    both = {1: both1, 2: none1 * bb_pmf(2, 2, t2, l2), 3: none1 * bb_pmf(0, 2, t2, l2)}
    pa, pb = logistic(t1), logistic(t2)
    marg = {1: pa, 2: (1 - pa) * pb, 3: (1 - pa) * (1 - pb)}
    return {j: (both[j] - marg[j] ** 2) / (marg[j] * (1 - marg[j])) for j in (1, 2, 3)}


def simulate_sim2(cfg: Sim2Config, rng) -> SimulationResult:
    """Draw a dataset from the second generator; doses are assigned uniformly at random."""
    doses = np.asarray(cfg.doses, dtype=float)
    x = doses[np.sort(rng.integers(0, len(doses), size=cfg.n_dams))]
    n = len(x)
    m = sample_shifted_poisson(cfg.implant_mean - 1, rng, size=n)
    mean = logistic(cfg.logits(x))
    lam = cfg.dispersion(x)
    p = rng.beta(lam * mean, lam * (1 - mean))
    R = rng.binomial(m, p[:, 0])
    y = rng.binomial(m - R, p[:, 1])
    data = Dataset.from_arrays(x, m, R, y)
    return SimulationResult(data, sim2_true_curves(cfg), sim2_true_correlations(cfg), doses)


def write_truth(result: SimulationResult, directory) -> Path:
    """truth_curves.csv (dose, D, M, r) and, when available, truth_correlations.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    t = result.truth
    with open(directory / "truth_curves.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dose", "D", "M", "r"])
        for g in range(len(t.grid)):
            w.writerow([repr(float(t.grid[g])), repr(float(t.D[g])), repr(float(t.M[g])),
                        repr(float(t.r[g]))])
    if result.correlations is not None:
        with open(directory / "truth_correlations.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dose", "category", "corr"])
            for j, vals in result.correlations.items():
                for x, v in zip(result.doses, vals):
                    w.writerow([repr(float(x)), j, repr(float(v))])
    return directory
