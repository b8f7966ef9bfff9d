"""Held-out model comparison: posterior predictive loss and interval score.

Both criteria compare observed per-dam proportions in a test set with one
predictive dam per retained draw at each test dose (see
:func:`devtox.inference.posterior_predictive`).  Dams at the same dose share
the same predictive draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .inference import ENDPOINTS, PredictiveDraws
from .model import Dataset

__all__ = ["CvSplit", "cv_split", "PredictiveLoss", "ppl", "interval_score",
           "observed_ratio", "ComparisonReport", "compare"]


@dataclass(frozen=True)
class CvSplit:
    train: Dataset
    test: Dataset
    fraction: float
    test_index: tuple


def cv_split(data: Dataset, fraction: float = 0.2, rng=None) -> CvSplit:
    """Hold out a dose-stratified random subset of dams.

    Each dose group contributes ``floor(fraction * n_d + 0.5)`` test dams,
    at least one and at most ``n_d - 1`` so every dose stays in training.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    rng = np.random.default_rng(rng)
    dose = data.dose
    test = []
    for x in data.dose_levels:
        idx = np.flatnonzero(dose == x)
        if len(idx) < 2:
            raise ValueError(f"dose group {x:g} has {len(idx)} dam(s); need at least 2 to split")
        k = int(np.floor(fraction * len(idx) + 0.5))
        k = min(max(k, 1), len(idx) - 1)
        test.extend(rng.choice(idx, size=k, replace=False).tolist())
    test = sorted(test)
    train = sorted(set(range(len(data))) - set(test))
    return CvSplit(data.subset(train), data.subset(test), fraction, tuple(test))


def observed_ratio(data: Dataset, endpoint: str) -> np.ndarray:
    """Per-dam proportion for an endpoint; NaN for 0/0 malformation ratios."""
    m, R, y = data.m.astype(float), data.R.astype(float), data.y.astype(float)
    if endpoint == "D":
        return R / m
    if endpoint == "M":
        alive = m - R
        return np.where(alive > 0, y / np.maximum(alive, 1), np.nan)
    if endpoint == "r":
        return (R + y) / m
    raise ValueError(f"unknown endpoint {endpoint!r}")


def _matched(test: Dataset, predictive: PredictiveDraws, endpoint: str):
    """Observed ratios, the predictive draw column of each test dam, and the skip mask."""
    doses = np.asarray(predictive.doses, dtype=float)
    col = np.array([np.flatnonzero(np.isclose(doses, x)) for x in test.dose], dtype=object)
    missing = [x for x, c in zip(test.dose, col) if len(c) == 0]
    if missing:
        raise ValueError(f"no predictive draws at test dose(s) {sorted(set(missing))}")
    col = np.array([c[0] for c in col], dtype=int)
    obs = observed_ratio(test, endpoint)
    return obs, col, np.isnan(obs)


@dataclass(frozen=True)
class PredictiveLoss:
    G: float
    P: float
    skipped: int = 0

    @property
    def total(self) -> float:
        return self.G + self.P


def ppl(test: Dataset, predictive: PredictiveDraws, endpoint: str) -> PredictiveLoss:
    """Goodness-of-fit (sum of squared deviations from the predictive mean) and penalty.

    The penalty adds the predictive variance once per contributing test dam.
    Test dams without live implants are skipped for the malformation endpoint.
    """
    obs, col, skip = _matched(test, predictive, endpoint)
    draws = predictive.ratio(endpoint)
    mean = np.nanmean(draws, axis=0)
    var = np.nanvar(draws, axis=0)
    keep = ~skip
    G = float(np.sum((obs[keep] - mean[col[keep]]) ** 2))
    P = float(np.sum(var[col[keep]]))
    return PredictiveLoss(G, P, int(skip.sum()))


def interval_score(test: Dataset, predictive: PredictiveDraws, endpoint: str,
                   alpha: float = 0.05) -> float:
    """Interval score of the central ``1 - alpha`` predictive intervals, summed over test dams."""
    obs, col, skip = _matched(test, predictive, endpoint)
    draws = predictive.ratio(endpoint)
    lo, hi = np.nanquantile(draws, [alpha / 2, 1 - alpha / 2], axis=0)
    o, l, u = obs[~skip], lo[col[~skip]], hi[col[~skip]]
    score = (u - l) + (2 / alpha) * (l - o) * (o < l) + (2 / alpha) * (o - u) * (o > u)
    return float(np.sum(score))


@dataclass
class ComparisonReport:
    """G, P and S per model and endpoint."""

    entries: dict = field(default_factory=dict)  # (model, endpoint) -> (G, P, S)

    def add(self, model: str, endpoint: str, loss: PredictiveLoss, score: float):
        if loss.P < 0 or score < 0:
            raise ValueError("penalty and interval score must be nonnegative")
        self.entries[(model, endpoint)] = (loss.G, loss.P, score)

    @property
    def models(self) -> list:
        return list(dict.fromkeys(k[0] for k in self.entries))

    @property
    def endpoints(self) -> list:
        return list(dict.fromkeys(k[1] for k in self.entries))

    def best(self, endpoint: str, criterion: str) -> str:
        """Model with the smallest G, P or S for an endpoint."""
        i = "GPS".index(criterion)
        return min(self.models, key=lambda m: self.entries[(m, endpoint)][i])

    def rows(self) -> list[dict]:
        return [{"model": m, "endpoint": e, "G": v[0], "P": v[1], "S": v[2]}
                for (m, e), v in self.entries.items()]

    def table(self, digits: int = 2) -> str:
        """Plain-text table: endpoint and criterion down the side, models across."""
        models = self.models
        width = max([10] + [len(m) + 2 for m in models])
        head = f"{'endpoint':<10}{'crit':<6}" + "".join(f"{m:>{width}}" for m in models)
        lines = [head, "-" * len(head)]
        for e in self.endpoints:
            for i, c in enumerate("GPS"):
                best = self.best(e, c)
                cells = []
                for m in models:
                    v = self.entries.get((m, e))
                    s = "" if v is None else f"{v[i]:.{digits}f}" + ("*" if m == best else "")
                    cells.append(f"{s:>{width}}")
                lines.append(f"{e if i == 0 else '':<10}{c:<6}" + "".join(cells))
        lines.append("* smallest value")
        return "\n".join(lines)

    def write_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["model", "endpoint", "G", "P", "S"])
            w.writeheader()
            w.writerows(self.rows())


def compare(test: Dataset, predictives: dict, endpoints=ENDPOINTS, alpha: float = 0.05) -> ComparisonReport:
    """Score each model's predictive draws (``{model: PredictiveDraws}``) on ``test``."""
    report = ComparisonReport()
    for name, pred in predictives.items():
        for e in endpoints:
            report.add(name, e, ppl(test, pred, e), interval_score(test, pred, e, alpha))
    return report
