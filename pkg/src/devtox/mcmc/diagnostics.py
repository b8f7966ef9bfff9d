"""Trace extraction and convergence statistics for label-invariant summaries.

Component labels switch freely in a mixture sampler, so only summaries that do
not depend on labelling are traced: hyperparameters, variances, the average
dam-level coefficient, sorted mixture weights and the dose-response curves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import Chain

__all__ = ["effective_sample_size", "split_rhat", "sorted_top_weights", "DiagnosticBundle", "diagnostics"]


def _autocovariance(x):
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def effective_sample_size(x) -> tuple[float, bool]:
    """Geyer initial-monotone-sequence ESS of a single trace.

    Returns ``(ess, degenerate)``; a constant trace reports its length and is
    flagged degenerate.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.ptp(x) == 0:
        return float(n), True
    acov = _autocovariance(x)
    rho = acov / acov[0]
    # sums of adjacent pairs, truncated at the first non-positive pair
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    stop = np.flatnonzero(pairs <= 0)
    pairs = pairs[: stop[0]] if stop.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    return float(n / max(tau, 1.0 / np.log10(max(n, 10)))), False


def split_rhat(x, chain=None) -> float:
    """Split-chain potential scale reduction; 1 by convention for constant traces."""
    x = np.asarray(x, dtype=float)
    chain = np.zeros(len(x), np.int64) if chain is None else np.asarray(chain)
    halves = []
    for c in np.unique(chain):
        xc = x[chain == c]
        h = len(xc) // 2
        if h < 2:
            continue
        halves.extend([xc[:h], xc[h:2 * h]])
    if not halves:
        return float("nan")
    n = min(len(h) for h in halves)
    arr = np.stack([h[:n] for h in halves])
    if np.ptp(arr) == 0:
        return 1.0
    within = arr.var(axis=1, ddof=1).mean()
    between = n * arr.mean(axis=1).var(ddof=1)
    if within == 0:
        return float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def sorted_top_weights(chain: Chain, dose: float, k: int = 4) -> np.ndarray:
    """Per-draw mixture weights at ``dose`` sorted in decreasing order, first ``k`` (zero padded)."""
    w = np.sort(np.asarray(chain.params.weights(dose)), axis=-1)[..., ::-1]
    out = np.zeros(w.shape[:-1] + (k,))
    kk = min(k, w.shape[-1])
    out[..., :kk] = w[..., :kk]
    return out


@dataclass(frozen=True)
class DiagnosticBundle:
    traces: dict
    ess: dict
    rhat: dict
    degenerate: dict

    def table(self) -> list[dict]:
        return [{"name": k, "ess": self.ess[k], "rhat": self.rhat[k], "degenerate": self.degenerate[k]}
                for k in self.traces]


def diagnostics(chain: Chain, data=None, dose: float | None = None, top: int = 4,
                levels=None) -> DiagnosticBundle:
    """Traces and convergence statistics for a fitted chain.

    Sorted weights are traced at every observed dose level when ``data`` is
    given (or at ``levels``); dose-response probabilities are traced at ``dose`` (default: the
    largest observed dose, or 0 without data).
    """
    from ..inference import dose_response_draws

    if len(chain) == 0:
        raise ValueError("empty chain")
    traces = {}
    for j in range(2):
        for a in range(2):
            traces[f"mu[{j + 1}][{a}]"] = chain.mu[:, j, a]
            traces[f"beta_avg[{j + 1}][{a}]"] = chain.beta_avg[:, j, a]
        for a, b in ((0, 0), (0, 1), (1, 1)):
            traces[f"Sigma[{j + 1}][{a}{b}]"] = chain.Sigma[:, j, a, b]
        if chain.sigma2 is not None:
            traces[f"sigma2[{j + 1}]"] = chain.sigma2[:, j]
        if chain.bb_lambda is not None:
            traces[f"lambda[{j + 1}]"] = chain.bb_lambda[:, j]
    if chain.alpha is not None:
        traces["alpha"] = chain.alpha
    if levels is None:
        levels = [] if data is None else np.unique(np.asarray(data.dose, dtype=float))
    levels = np.asarray(levels, dtype=float)
    if chain.spec.truncation > 1:
        for x in levels:
            w = sorted_top_weights(chain, x, top)
            for r in range(top):
                traces[f"weight{r + 1}@{x:g}"] = w[:, r]
    if dose is None:
        dose = float(max(levels)) if len(levels) else 0.0
    curves = dose_response_draws(chain.params, chain.spec, [dose], strict=False)
    for name in "DMr":
        traces[f"{name}@{dose:g}"] = curves[name][:, 0]
    ess, rhat, degenerate = {}, {}, {}
    for name, tr in traces.items():
        per_chain = [effective_sample_size(tr[chain.chain == c]) for c in np.unique(chain.chain)]
        ess[name] = float(sum(e for e, _ in per_chain))
        degenerate[name] = all(d for _, d in per_chain)
        rhat[name] = split_rhat(tr, chain.chain)
    return DiagnosticBundle(traces, ess, rhat, degenerate)
