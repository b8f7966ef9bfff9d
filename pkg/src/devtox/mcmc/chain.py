"""Chain storage, serialization and the driver that runs the samplers."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..model import Dataset, Hyperparameters, Kernel, MixtureParams, ModelSpec, Weights
from .crbb import MhAdapter, step_mh_crbb
from .state import GibbsState, McmcConfig, ModelData, NumericalFailure, initial_state
from .steps import gibbs_sweep

__all__ = ["Chain", "fit", "DRAW_FIELDS"]

# field order of one serialized draw
DRAW_FIELDS = ("iteration", "chain", "betas", "gammas", "sticks", "alpha", "sigma2",
               "bb_lambda", "mu", "Sigma", "beta_avg", "n_occupied")
_OPTIONAL = ("gammas", "sticks", "alpha", "sigma2", "bb_lambda")


@dataclass
class Chain:
    """Retained draws with a leading draw axis.

    ``beta_avg`` is the label-invariant average of each dam's stage
    coefficients and ``n_occupied`` the number of distinct labels, both per
    retained draw.  Multi-chain runs are stacked and told apart by ``chain``.
    """

    spec: ModelSpec
    config: McmcConfig
    hyper: Hyperparameters
    iteration: np.ndarray
    chain: np.ndarray
    betas: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    beta_avg: np.ndarray
    n_occupied: np.ndarray
    gammas: np.ndarray | None = None
    sticks: np.ndarray | None = None
    alpha: np.ndarray | None = None
    sigma2: np.ndarray | None = None
    bb_lambda: np.ndarray | None = None
    acceptance: dict | None = None
    wall_time: float = 0.0
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iteration)

    @property
    def params(self) -> MixtureParams:
        return MixtureParams(self.betas, self.gammas, self.sticks, self.alpha,
                             self.sigma2, self.bb_lambda)

    def select(self, index) -> "Chain":
        """Subset of draws (e.g. one chain, or a thinned view)."""
        def take(v):
            return None if v is None else v[index]
        return Chain(self.spec, self.config, self.hyper, self.iteration[index], self.chain[index],
                     self.betas[index], self.mu[index], self.Sigma[index], self.beta_avg[index],
                     self.n_occupied[index], take(self.gammas), take(self.sticks), take(self.alpha),
                     take(self.sigma2), take(self.bb_lambda), self.acceptance, self.wall_time,
                     self.seed, dict(self.extra))

    def manifest(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "config": self.config.to_dict(),
            "hyper": self.hyper.to_dict(),
            "seed": self.seed,
            "n_draws": len(self),
            "wall_time_s": self.wall_time,
            "acceptance": self.acceptance,
            "draw_fields": list(DRAW_FIELDS),
            **self.extra,
        }

    def save(self, directory) -> Path:
        """Write ``draws.jsonl`` (one line per draw) and ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "draws.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for s in range(len(self)):
                rec = {}
                for name in DRAW_FIELDS:
                    v = getattr(self, name)
                    rec[name] = None if v is None else np.asarray(v[s]).tolist()
                fh.write(json.dumps(rec) + "\n")
        with open(directory / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.manifest(), fh, indent=2)
            fh.write("\n")
        return directory

    @classmethod
    def load(cls, directory) -> "Chain":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        rows = [json.loads(line) for line in
                (directory / "draws.jsonl").read_text(encoding="utf-8").splitlines() if line]
        if not rows:
            raise ValueError(f"no draws in {directory}")
        cols = {}
        for name in DRAW_FIELDS:
            vals = [r[name] for r in rows]
            cols[name] = None if vals[0] is None else np.asarray(vals)
        known = {"spec", "config", "hyper", "seed", "n_draws", "wall_time_s", "acceptance", "draw_fields"}
        return cls(
            spec=ModelSpec.from_dict(manifest["spec"]),
            config=McmcConfig.from_dict(manifest["config"]),
            hyper=Hyperparameters.from_dict(manifest["hyper"]),
            iteration=cols["iteration"].astype(np.int64),
            chain=cols["chain"].astype(np.int64),
            betas=cols["betas"].astype(float),
            mu=cols["mu"].astype(float),
            Sigma=cols["Sigma"].astype(float),
            beta_avg=cols["beta_avg"].astype(float),
            n_occupied=cols["n_occupied"].astype(np.int64),
            **{k: None if cols[k] is None else cols[k].astype(float) for k in _OPTIONAL},
            acceptance=manifest.get("acceptance"),
            wall_time=manifest.get("wall_time_s", 0.0),
            seed=manifest.get("seed"),
            extra={k: v for k, v in manifest.items() if k not in known},
        )


class _Recorder:
    def __init__(self, spec: ModelSpec, n: int):
        L = spec.truncation
        self.n = n
        self.i = 0
        self.iteration = np.zeros(n, np.int64)
        self.betas = np.zeros((n, 2, L, 2))
        self.mu = np.zeros((n, 2, 2))
        self.Sigma = np.zeros((n, 2, 2, 2))
        self.beta_avg = np.zeros((n, 2, 2))
        self.n_occupied = np.zeros(n, np.int64)
        self.gammas = np.zeros((n, L - 1, 2)) if spec.weights is Weights.DOSE_DEPENDENT else None
        common = spec.weights is Weights.COMMON
        self.sticks = np.zeros((n, L - 1)) if common else None
        self.alpha = np.zeros(n) if common else None
        self.sigma2 = np.zeros((n, 2)) if spec.kernel is Kernel.LNB else None
        self.bb_lambda = np.zeros((n, 2)) if spec.kernel is Kernel.BB else None

    def add(self, state: GibbsState, iteration: int):
        i = self.i
        self.iteration[i] = iteration
        self.betas[i] = state.betas
        self.mu[i] = state.mu
        self.Sigma[i] = state.Sigma
        self.beta_avg[i] = state.betas[:, state.labels].mean(axis=1)
        self.n_occupied[i] = len(np.unique(state.labels))
        for name in _OPTIONAL:
            store = getattr(self, name)
            if store is not None:
                store[i] = getattr(state, name)
        self.i += 1


def _run_one(spec, data: ModelData, hyper, config: McmcConfig, rng, callback):
    state = initial_state(spec, hyper, data, rng)
    rec = _Recorder(spec, config.n_retained)
    adapter = MhAdapter(float(data.dose.max())) if spec.kernel is Kernel.BB else None
    for it in range(1, config.n_iter + 1):
        try:
            if adapter is None:
                gibbs_sweep(state, data, rng)
            else:
                if it == config.burn_in + 1:
                    adapter.reset_counts()
                _, acc = step_mh_crbb(state, data, rng, adapter.scale, adapter.shape)
                block = [[*state.betas[j, 0], np.log(state.bb_lambda[j])] for j in range(2)]
                adapter.record(acc, block, adapting=it <= config.burn_in)
        except NumericalFailure as err:
            raise NumericalFailure(err.reason, err.component, it) from err
        if config.keep(it):
            rec.add(state, it)
        if callback is not None:
            callback(it, state)
    acceptance = None
    if adapter is not None:
        acceptance = {"stage1": float(adapter.acceptance_rate[0]),
                      "stage2": float(adapter.acceptance_rate[1]),
                      "proposal_scale": adapter.scale.tolist()}
    return rec, acceptance


def fit(spec: ModelSpec, data, hyper: Hyperparameters, config: McmcConfig, rng=None,
        callback: Callable[[int, GibbsState], None] | None = None) -> Chain:
    """Run the sampler appropriate to ``spec`` and return the retained draws.

    Without ``rng`` the stream is ``default_rng(config.seed)``.  With several
    chains, each gets a child stream from ``rng.spawn`` and the chains run
    one after another; their draws are stacked in chain order.
    """
    if spec.weights is not Weights.SINGLE and spec.truncation != config.truncation:
        raise ValueError(f"spec truncation {spec.truncation} differs from config {config.truncation}")
    if isinstance(data, Dataset):
        data = ModelData.from_dataset(data)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    streams = [rng] if config.n_chains == 1 else rng.spawn(config.n_chains)
    start = time.perf_counter()
    parts, acceptance = [], []
    for stream in streams:
        rec, acc = _run_one(spec, data, hyper, config, stream, callback)
        parts.append(rec)
        acceptance.append(acc)

    def stack(name):
        vals = [getattr(p, name) for p in parts]
        return None if vals[0] is None else np.concatenate(vals)

    chain_id = np.concatenate([np.full(p.n, c, np.int64) for c, p in enumerate(parts)])
    return Chain(
        spec=spec, config=config, hyper=hyper,
        iteration=stack("iteration"), chain=chain_id, betas=stack("betas"),
        mu=stack("mu"), Sigma=stack("Sigma"), beta_avg=stack("beta_avg"),
        n_occupied=stack("n_occupied"),
        **{k: stack(k) for k in _OPTIONAL},
        acceptance=None if acceptance[0] is None else
        (acceptance[0] if len(acceptance) == 1 else {"chains": acceptance}),
        wall_time=time.perf_counter() - start,
        seed=config.seed,
    )
