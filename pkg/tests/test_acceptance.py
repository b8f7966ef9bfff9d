"""Acceptance criteria; each check prints one PASS/FAIL line.

The simulation studies run once per session through module-scoped fixtures
(roughly 15 minutes in total on one core).  Criterion 9 needs a
user-supplied transcription of the ethylene glycol data; point
``DEVTOX_EG_DATA`` at it to run that check.
"""

import math
import os
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from _oracles import brute_force_mixture_table
from devtox.assess import compare, cv_split
from devtox.data import Sim1Config, Sim2Config, read_dataset, simulate_sim1, simulate_sim2
from devtox.distributions import (
    bb_pmf,
    gauss_hermite,
    lnb_pmf,
    logit_normal_integral,
    logit_normal_square_integral,
    polya_gamma_array,
    taylor_lnb_moments,
)
from devtox.experiments import coverage, has_interior_minimum, is_monotone, run_sim1, run_sim2
from devtox.inference import (
    ENDPOINTS,
    ImplantModel,
    dose_response_draws,
    endpoint_curve,
    fit_implant_model,
    intracluster_corr_draw,
    posterior_predictive,
    risk_summary,
)
from devtox.mcmc import McmcConfig, fit
from devtox.model import Hyperparameters, MixtureParams, ModelSpec, elicit_sigma2_prior, mixture_pmf
from devtox.validation import getting_it_right

# BMDs (g/kg) reported for the ethylene glycol data: model -> endpoint -> (5%, 10%)
EG_BMD = {
    "CW-Bin": {"D": (2.05, 2.97), "M": (1.02, 1.48), "r": (0.92, 1.38)},
    "CW-LNB": {"D": (1.62, 2.79), "M": (1.08, 1.56), "r": (0.68, 1.32)},
    "Gen-Bin": {"D": (2.00, 3.03), "M": (1.06, 1.56), "r": (0.92, 1.40)},
    "Gen-LNB": {"D": (1.64, 2.77), "M": (1.14, 1.60), "r": (0.68, 1.28)},
}


@pytest.fixture(scope="module")
def sim1():
    return run_sim1()


@pytest.fixture(scope="module")
def sim2():
    return run_sim2(keep_chain=True)


def _min_coverage(run, truth, endpoints):
    return min(coverage(run.lower[e], run.upper[e], getattr(truth, e)) for e in endpoints)


# 1 -------------------------------------------------------------------------

def test_c1_prior_elicitation(criterion):
    cases = [((Fraction(3, 20), 3), (3, Fraction(6, 5))),
             ((Fraction(1, 3), 3), (3, Fraction(8, 3))),
             ((Fraction(1, 3), 2), (2, Fraction(4, 3)))]
    got = [elicit_sigma2_prior(*args) for args, _ in cases]
    ok = all(g == want and isinstance(g[1], Fraction) for g, (_, want) in zip(got, cases))
    assert criterion("1", ok, "IG(3, 6/5), IG(3, 8/3), IG(2, 4/3) " + str([str(g[1]) for g in got]))


# 2 -------------------------------------------------------------------------

def _pmf_table(params, spec, m, x):
    out = np.zeros((m + 1, m + 1))
    for R in range(m + 1):
        for y in range(m - R + 1):
            out[R, y] = mixture_pmf(R, y, m, x, params, spec)
    return out


def test_c2_enumeration_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = {"Binomial": 0.0, "LNB": 0.0}
    for kernel, suffix in (("Binomial", "Bin"), ("LNB", "LNB")):
        for L in (1, 2, 3):
            for k in range(20):
                common = k % 2 == 1
                if L == 1:
                    spec = ModelSpec.from_name("CR-logits" if kernel == "Binomial" else "CR-LNB", 1)
                else:
                    spec = ModelSpec.from_name(("CW-" if common else "Gen-") + suffix, L)
                betas = rng.normal(0, 1.2, size=(2, L, 2))
                gammas = None if common or L == 1 else rng.normal(0, 1.5, size=(L - 1, 2))
                sticks = rng.uniform(0.1, 0.9, size=L - 1) if common and L > 1 else None
                sigma2 = rng.uniform(0.05, 1.5, size=2) if kernel == "LNB" else None
                params = MixtureParams(betas, gammas=gammas, sticks=sticks, sigma2=sigma2)
                x = rng.uniform(0, 5)
                for m in (1, 2, 3, 4):
                    table = _pmf_table(params, spec, m, x)
                    oracle = brute_force_mixture_table(m, x, betas, kernel, sigma2, gammas, sticks)
                    worst[kernel] = max(worst[kernel], float(np.max(np.abs(table - oracle))))
    ok = worst["Binomial"] < 1e-12 and worst["LNB"] < 1e-8
    assert criterion("2", ok, f"max abs diff Bin {worst['Binomial']:.1e} (<1e-12), "
                              f"LNB {worst['LNB']:.1e} (<1e-8)")


# 3 -------------------------------------------------------------------------

def _exact_corr(theta, s2):
    p = logit_normal_integral(theta, s2)
    return (logit_normal_square_integral(theta, s2) - p * p) / (p * (1 - p))


def test_c3a_taylor_centre(criterion):
    s2 = np.linspace(0.0, 0.5, 51)
    ok = all(taylor_lnb_moments(0.0, v)[1] == v / 4 for v in s2)
    assert criterion("3a", ok, "approximate correlation at theta=0 equals sigma^2/4 exactly")


@pytest.mark.xfail(strict=True, reason="second-order expansion is off by up to ~27% at sigma^2=0.5, |theta|=2")
def test_c3b_taylor_accuracy(criterion):
    theta, s2 = np.meshgrid(np.linspace(-2, 2, 41), np.linspace(0.01, 0.5, 50))
    rel = np.abs(taylor_lnb_moments(theta, s2)[1] / _exact_corr(theta, s2) - 1)
    worst = float(rel.max())
    assert criterion("3b", worst < 0.10, f"max relative error {worst:.3f} over |theta|<=2, sigma^2<=0.5 (<0.10)")


# 4 -------------------------------------------------------------------------

def test_c4_getting_it_right(criterion):
    result = getting_it_right(n_transitions=200_000, n_forward=100_000, seed=0)
    worst = float(np.max(np.abs(result.z)))
    print(result.table())
    assert criterion("4", result.passed(3.0), f"max |z| {worst:.2f} (<=3) at 2e5 transitions")


# 5 -------------------------------------------------------------------------

def test_c5a_gen_lnb_coverage(sim1, criterion):
    sim, runs = sim1
    cov = _min_coverage(runs["Gen-LNB"], sim.truth, "Mr")
    assert criterion("5a", cov >= 0.9, f"Gen-LNB min coverage of M, r {cov:.3f} (>=0.90)")


@pytest.mark.xfail(strict=True, reason="Gen-Bin r band covers 23 of 26 grid points at the reference seed")
def test_c5b_gen_bin_coverage(sim1, criterion):
    sim, runs = sim1
    cov = _min_coverage(runs["Gen-Bin"], sim.truth, "Mr")
    assert criterion("5b", cov >= 0.9, f"Gen-Bin min coverage of M, r {cov:.3f} (>=0.90)")


def test_c5c_gen_mean_m_has_dip(sim1, criterion):
    _, runs = sim1
    ok = all(has_interior_minimum(runs[n].mean["M"]) for n in ("Gen-Bin", "Gen-LNB"))
    assert criterion("5c", ok, "Gen-Bin and Gen-LNB posterior-mean M have an interior minimum")


def test_c5d_cw_mean_m_monotone(sim1, criterion):
    _, runs = sim1
    ok = all(is_monotone(runs[n].mean["M"]) for n in ("CW-Bin", "CW-LNB"))
    assert criterion("5d", ok, "CW-Bin and CW-LNB posterior-mean M are monotone")


def test_c5e_active_components(sim1, criterion):
    _, runs = sim1
    lnb, bin_ = runs["Gen-LNB"].active, runs["Gen-Bin"].active
    assert criterion("5e", lnb <= bin_, f"active components Gen-LNB {lnb:.2f} <= Gen-Bin {bin_:.2f}")


# 6 -------------------------------------------------------------------------

def test_c6a_curve_coverage(sim2, criterion):
    sim, runs = sim2
    covs = {n: _min_coverage(r, sim.truth, ENDPOINTS) for n, r in runs.items()}
    ok = min(covs.values()) >= 0.9
    assert criterion("6a", ok, "min coverage " + ", ".join(f"{n} {c:.2f}" for n, c in covs.items()))


@pytest.mark.xfail(strict=True, reason="LNB and Bin widths are within about 0.02 of each other and "
                                       "the sign varies by dose and endpoint")
def test_c6b_lnb_wider_than_bin(sim2, criterion):
    sim, runs = sim2
    doses = np.asarray(sim.doses)
    short = []
    for w in ("CW", "Gen"):
        width = {}
        for k in ("Bin", "LNB"):
            run = runs[f"{w}-{k}"]
            curves = dose_response_draws(run.chain.params, run.chain.spec, doses)
            width[k] = {e: np.subtract(*curves.band(e)[2:0:-1]) for e in ENDPOINTS}
        for e in ENDPOINTS:
            diff = width["LNB"][e] - width["Bin"][e]
            short += [f"{w} {e}@{x:g}" for x, d in zip(doses, diff) if d < 0]
    assert criterion("6b", not short, "LNB narrower than Bin at: " + (", ".join(short) or "none"))


def test_c6c_correlation_coverage(sim2, criterion):
    sim, runs = sim2
    truth = sim.correlations
    counts = {}
    for n in ("Gen-LNB", "CW-LNB"):
        for j in (1, 2, 3):
            _, lo, hi = runs[n].correlations[j]
            counts[(n, j)] = int(np.sum((truth[j] >= lo) & (truth[j] <= hi)))
    ok = min(counts.values()) >= 5
    assert criterion("6c", ok, "doses covered of 6: " + ", ".join(f"{n} j={j} {c}" for (n, j), c in counts.items()))


# 7 -------------------------------------------------------------------------

def test_c7_correlation_positivity(sim2, criterion):
    sim, runs = sim2
    checked, bad = 0, 0
    for run in runs.values():
        chain = run.chain
        keep = chain.n_occupied >= 2
        sub = chain.select(np.flatnonzero(keep))
        for x in sim.doses:
            for j in (1, 2, 3):
                vals = np.asarray(intracluster_corr_draw(sub.params, sub.spec, x, j, strict=False))
                checked += vals.size
                bad += int(np.sum(~(vals > 0)))
    assert criterion("7", bad == 0 and checked > 0, f"{checked - bad} of {checked} draws positive")


# 8 -------------------------------------------------------------------------

def test_c8_ed_bmd_mechanics(sim2, criterion):
    sim, runs = sim2
    chain = runs["Gen-LNB"].chain
    sub = chain.select(np.arange(0, len(chain), 10))
    params, spec = sub.params, sub.spec
    summary = risk_summary("Gen-LNB", params, spec, sim.truth.grid)
    S = len(sub)
    resid, bmd_gap, order_bad, n_mono = 0.0, 0.0, 0, 0
    dense = np.linspace(0, summary.ed[("D", 0.05)].search_max, 301)
    for e in ENDPOINTS:
        fn = endpoint_curve(params, spec, e)
        p0 = fn(np.zeros(S))
        for a in (0.05, 0.10):
            res = summary.ed[(e, a)]
            ok = ~res.censored
            r = (fn(np.where(ok, res.samples, 0.0)) - p0) - a * (1 - p0)
            resid = max(resid, float(np.max(np.abs(r[ok]))))
        for row in summary.bmd_table():
            if row["endpoint"] == e:
                valid = summary.ed[(e, row["bmr"])].valid
                bmd_gap = max(bmd_gap, abs(row["bmd"] - np.percentile(valid, 2.5, method="linear")))
        curve = np.stack([fn(np.full(S, x)) for x in dense], axis=1)
        mono = np.all(np.diff(curve, axis=1) >= 0, axis=1)
        e05, e10 = summary.ed[(e, 0.05)], summary.ed[(e, 0.10)]
        both = mono & ~e05.censored & ~e10.censored
        n_mono += int(both.sum())
        order_bad += int(np.sum(e05.samples[both] > e10.samples[both]))
    ok = resid < 1e-6 and bmd_gap <= 1e-12 and order_bad == 0
    assert criterion("8", ok, f"max residual {resid:.1e}, BMD vs 2.5% quantile gap {bmd_gap:.1e}, "
                              f"ED ordering violations {order_bad} of {n_mono} monotone draws")


# 9 -------------------------------------------------------------------------

@pytest.mark.skipif(not os.environ.get("DEVTOX_EG_DATA"),
                    reason="set DEVTOX_EG_DATA to a transcription of the ethylene glycol data")
def test_c9_eg_data(criterion):
    data = read_dataset(Path(os.environ["DEVTOX_EG_DATA"]))
    config = McmcConfig(n_iter=30000, burn_in=20000, thin=2, truncation=50, seed=1)
    hyper = Hyperparameters.default(data.max_dose)
    grid = np.linspace(0, data.max_dose, 101)
    worst = 0.0
    for name, table in EG_BMD.items():
        chain = fit(ModelSpec.from_name(name, config.truncation), data, hyper, config)
        summary = risk_summary(name, chain.params, chain.spec, grid)
        for row in summary.bmd_table():
            want = table[row["endpoint"]][0 if row["bmr"] == 0.05 else 1]
            worst = max(worst, abs(row["bmd"] - want))
    split = cv_split(data, 0.2, np.random.default_rng(0))
    implant = fit_implant_model(split.train)
    preds = {}
    for i, name in enumerate(EG_BMD):
        chain = fit(ModelSpec.from_name(name, config.truncation), split.train,
                    Hyperparameters.default(split.train.max_dose), config)
        preds[name] = posterior_predictive(chain.params, chain.spec, split.test.dose_levels, implant,
                                           np.random.default_rng([7, i]))
    best = compare(split.test, preds).best("r", "S")
    ok = worst <= 0.2 and best == "Gen-LNB"
    assert criterion("9", ok, f"max BMD deviation {worst:.2f} g/kg (<=0.2), best S for r: {best}")


def test_c9_status(criterion):
    if os.environ.get("DEVTOX_EG_DATA"):
        pytest.skip("checked by test_c9_eg_data")
    criterion("9", None, "needs a user transcription of the ethylene glycol data (DEVTOX_EG_DATA)")
    pytest.skip("no ethylene glycol data supplied")


# 10 ------------------------------------------------------------------------

def test_c10a_polya_gamma_mean(criterion):
    x = polya_gamma_array(np.ones(1_000_000, dtype=np.int64), 0.0, np.random.default_rng(10))
    se = x.std() / math.sqrt(x.size)
    z = (x.mean() - 0.25) / se
    assert criterion("10a", abs(z) <= 3, f"PG(1,0) mean {x.mean():.5f}, z {z:.2f}")


def test_c10b_normalization(criterion):
    rng = np.random.default_rng(11)
    bb_worst, lnb_worst = 0.0, 0.0
    for _ in range(300):
        m = int(rng.integers(1, 30))
        y = np.arange(m + 1)
        theta = rng.uniform(-6, 6)
        bb_worst = max(bb_worst, abs(float(np.sum(bb_pmf(y, m, theta, rng.uniform(0.05, 200)))) - 1))
        lnb_worst = max(lnb_worst, abs(float(np.sum(lnb_pmf(y, m, theta, rng.uniform(0, 4)))) - 1))
    ok = bb_worst < 1e-12 and lnb_worst < 1e-8
    assert criterion("10b", ok, f"bb_pmf {bb_worst:.1e} (<1e-12), lnb_pmf {lnb_worst:.1e} (<1e-8)")


def test_c10c_order_doubling(criterion):
    theta = np.linspace(-6, 6, 61)[:, None]
    s2 = np.linspace(0, 4, 41)[None, :]
    lo, hi = gauss_hermite(20), gauss_hermite(40)
    worst = max(float(np.max(np.abs(f(theta, s2, lo) - f(theta, s2, hi))))
                for f in (logit_normal_integral, logit_normal_square_integral))
    assert criterion("10c", worst < 1e-7, f"logit-normal integrals, order 20 vs 40 max diff {worst:.1e} (<1e-7)")


def _lnb_doubling_gap(s2_max):
    theta = np.linspace(-6, 6, 61)[:, None]
    s2 = np.linspace(0, s2_max, 41)[None, :]
    lo, hi = gauss_hermite(20), gauss_hermite(40)
    gaps = []
    for m in (1, 5, 15, 25):
        y = np.arange(m + 1)[:, None, None]
        gaps.append(float(np.max(np.abs(lnb_pmf(y, m, theta, s2, lo) - lnb_pmf(y, m, theta, s2, hi)))))
    return max(gaps)


@pytest.mark.xfail(strict=True, reason="20-node rules are pole-limited for the Binomial integrand; "
                                       "the gap reaches ~7e-6 at sigma^2=4 (below 1e-8 for sigma^2<=1)")
def test_c10d_lnb_order_doubling(criterion):
    worst = _lnb_doubling_gap(4.0)
    assert criterion("10d", worst < 1e-7, f"lnb_pmf m<=25, order 20 vs 40 max diff {worst:.1e} (<1e-7)")


# 11 ------------------------------------------------------------------------

def _chain_arrays(chain):
    names = ("iteration", "betas", "mu", "Sigma", "beta_avg", "n_occupied", "gammas", "sticks",
             "alpha", "sigma2", "bb_lambda")
    return [getattr(chain, n) for n in names]


def test_c11_determinism(criterion):
    same = []
    same.append(simulate_sim1(Sim1Config(), np.random.default_rng(5)).data
                == simulate_sim1(Sim1Config(), np.random.default_rng(5)).data)
    data = simulate_sim2(Sim2Config(), np.random.default_rng(5)).data
    same.append(data == simulate_sim2(Sim2Config(), np.random.default_rng(5)).data)
    config = McmcConfig(n_iter=60, burn_in=20, thin=1, truncation=8, seed=9)
    hyper = Hyperparameters.default(data.max_dose)
    for name in ("Gen-LNB", "CW-Bin", "CR-BB"):
        spec = ModelSpec.from_name(name, config.truncation)
        a, b = fit(spec, data, hyper, config), fit(spec, data, hyper, config)
        same.append(all((x is None and y is None) or np.array_equal(x, y)
                        for x, y in zip(_chain_arrays(a), _chain_arrays(b))))
    splits = [cv_split(data, 0.2, np.random.default_rng(3)) for _ in range(2)]
    same.append(splits[0].test_index == splits[1].test_index)
    tables = []
    for _ in range(2):
        chain = fit(ModelSpec.from_name("Gen-Bin", 8), splits[0].train, hyper, config)
        pred = posterior_predictive(chain.params, chain.spec, splits[0].test.dose_levels,
                                    ImplantModel(12.0), np.random.default_rng(4))
        tables.append(compare(splits[0].test, {"Gen-Bin": pred}).table())
    same.append(tables[0] == tables[1])
    assert criterion("11", all(same), f"{sum(same)} of {len(same)} repeated runs bit-identical")
