"""Batch command-line interface.

Every subcommand writes long-format CSV tables plus ``run_manifest.json``
(resolved options, seed and library versions) into its output directory.
Options can come from a JSON file given with ``--config``; command-line flags
take precedence over the file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

DEFAULT_MODELS = ("CW-Bin", "CW-LNB", "Gen-Bin", "Gen-LNB")


class ConfigError(ValueError):
    pass


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _names(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _add_mcmc(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--n-iter", type=int, default=30000)
    g.add_argument("--burn-in", type=int, default=20000)
    g.add_argument("--thin", type=int, default=2)
    g.add_argument("--truncation", type=int, default=50)
    g.add_argument("--chains", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)


def _add_prior(p):
    g = p.add_argument_group("prior")
    g.add_argument("--a-sigma", type=float, default=None, help="inverse-Gamma shape for sigma^2")
    g.add_argument("--b-sigma", type=float, default=None, help="inverse-Gamma scale for sigma^2")
    g.add_argument("--sigma2-target", type=float, default=None,
                   help="elicit the sigma^2 prior from a target intracluster correlation")
    g.add_argument("--sigma2-shape", type=float, default=3.0, help="shape used with --sigma2-target")
    g.add_argument("--weight-slope-span", type=float, default=2.0,
                   help="prior sd of a stick-break logit's change across the dose range")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="devtox", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"devtox {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON file of option defaults")
        p.add_argument("--out", type=Path, required=False, help="output directory")
        return p

    p = command("simulate", "draw a synthetic dataset with its true curves")
    p.add_argument("--study", type=int, choices=(1, 2), default=1)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--study-config", type=Path, help="JSON generator coefficients")

    p = command("fit", "run the sampler and save the chain")
    p.add_argument("--data", type=Path)
    p.add_argument("--model", default="Gen-LNB")
    _add_mcmc(p)
    _add_prior(p)

    p = command("risk", "dose-response curves, effective doses and benchmark doses")
    p.add_argument("--chain", type=Path)
    p.add_argument("--bmr", type=_floats, default=[0.05, 0.10])
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--grid-max", type=float, default=None, help="defaults to the largest observed dose")
    p.add_argument("--new-dose", type=_floats, default=[], help="extra doses added to the grid")
    p.add_argument("--search-max", type=float, default=None)

    p = command("corr", "intracluster correlation draws")
    p.add_argument("--chain", type=Path)
    p.add_argument("--doses", type=_floats, default=None, help="defaults to the observed doses")

    p = command("predict", "posterior predictive samples and conditional pmfs")
    p.add_argument("--chain", type=Path)
    p.add_argument("--doses", type=_floats, default=None, help="defaults to the observed doses")
    p.add_argument("--m", type=int, default=12)
    p.add_argument("--R", type=int, default=2)
    p.add_argument("--implant-rate", type=float, default=None,
                   help="1 + Poisson(rate) implants; defaults to the rate fitted at fit time")
    p.add_argument("--seed", type=int, default=0)

    p = command("compare", "held-out comparison by predictive loss and interval score")
    p.add_argument("--data", type=Path)
    p.add_argument("--models", type=_names, default=list(DEFAULT_MODELS))
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    _add_mcmc(p)
    _add_prior(p)

    p = command("diagnose", "traces and convergence statistics")
    p.add_argument("--chain", type=Path)
    p.add_argument("--dose", type=float, default=None)
    p.add_argument("--top", type=int, default=4)
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from err
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(k for k in overrides if k.replace("-", "_") not in known)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        defaults = {}
        for key, value in overrides.items():
            action = known[key.replace("-", "_")]
            if isinstance(value, str) and action.type is not None:
                value = action.type(value)
            elif action.type is _floats:
                value = _floats(value)
            elif action.type is _names:
                value = _names(value)
            elif action.type is Path:
                value = Path(value)
            defaults[action.dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.out is None:
        raise ConfigError("--out is required")
    return args


def _need(args, name):
    value = getattr(args, name)
    if value is None:
        raise ConfigError(f"--{name.replace('_', '-')} is required for {args.command}")
    if isinstance(value, Path) and not value.exists():
        raise ConfigError(f"{value} does not exist")
    return value


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, args, **extra):
    import numba
    import scipy

    opts = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    manifest = {
        "command": args.command,
        "options": opts,
        "versions": {"devtox": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__, "python": platform.python_version()},
        **extra,
    }
    with open(out / "run_manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, default=float)
        fh.write("\n")


def _mcmc_config(args):
    from .mcmc import McmcConfig

    return McmcConfig(n_iter=args.n_iter, burn_in=args.burn_in, thin=args.thin,
                      truncation=args.truncation, seed=args.seed, n_chains=args.chains)


def _hyper(args, max_dose: float):
    from .model import Hyperparameters, elicit_sigma2_prior

    if args.sigma2_target is not None:
        if args.a_sigma is not None or args.b_sigma is not None:
            raise ConfigError("give either --a-sigma/--b-sigma or --sigma2-target, not both")
        a, b = elicit_sigma2_prior(args.sigma2_target, args.sigma2_shape)
    else:
        a = 3.0 if args.a_sigma is None else args.a_sigma
        b = 1.2 if args.b_sigma is None else args.b_sigma
    return Hyperparameters.default(max_dose, a_sigma=float(a), b_sigma=float(b),
                                   weight_slope_span=args.weight_slope_span)


def _load_chain(args):
    from .mcmc import Chain

    return Chain.load(_need(args, "chain"))


def _observed_doses(chain) -> list[float]:
    info = chain.extra.get("data", {})
    if "dose_levels" not in info:
        raise ConfigError("chain manifest has no observed doses; pass --doses")
    return [float(x) for x in info["dose_levels"]]


def _csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_simulate(args):
    from .data import Sim1Config, Sim2Config, simulate_sim1, simulate_sim2, write_dataset, write_truth

    cls, sim = (Sim1Config, simulate_sim1) if args.study == 1 else (Sim2Config, simulate_sim2)
    cfg = cls.from_json(Path(args.study_config).read_text(encoding="utf-8")) if args.study_config else cls()
    result = sim(cfg, np.random.default_rng(args.seed))
    write_dataset(result.data, args.out / "dataset.csv")
    write_truth(result, args.out)
    _write_manifest(args.out, args, study_config=cfg.to_dict())


def _fit_one(name, data, hyper, config, data_info):
    from .inference import fit_implant_model
    from .mcmc import fit
    from .model import ModelSpec

    chain = fit(ModelSpec.from_name(name, config.truncation), data, hyper, config)
    chain.extra["data"] = {**data_info, "max_dose": float(data.max_dose),
                           "dose_levels": [float(x) for x in data.dose_levels],
                           "n_dams": len(data), "implant_rate": fit_implant_model(data).rate}
    return chain


def cmd_fit(args):
    from .data import read_dataset

    data = read_dataset(_need(args, "data"))
    config = _mcmc_config(args)
    hyper = _hyper(args, data.max_dose)
    chain = _fit_one(args.model, data, hyper, config,
                     {"path": str(args.data), "sha256": _sha256(args.data)})
    chain.save(args.out)
    _write_manifest(args.out, args, n_draws=len(chain), a_sigma=hyper.a_sigma, b_sigma=hyper.b_sigma)
    print(f"{args.model}: {len(chain)} draws in {chain.wall_time:.1f}s -> {args.out}")


def cmd_risk(args):
    from .inference import risk_summary

    chain = _load_chain(args)
    if any(not 0 < a < 1 for a in args.bmr):
        raise ConfigError("benchmark responses must lie in (0, 1)")
    top = args.grid_max if args.grid_max is not None else max(_observed_doses(chain))
    grid = np.unique(np.concatenate([np.arange(0, top + 1e-9, args.grid_step), args.new_dose]))
    summary = risk_summary(chain.spec.name, chain.params, chain.spec, grid, tuple(args.bmr),
                           search_max=args.search_max)
    summary.write(args.out)
    _write_manifest(args.out, args, model=chain.spec.name)
    for row in summary.bmd_table():
        flag = "" if row["reliable"] else "  (censored draws above threshold)"
        print(f"{row['endpoint']}  bmr={row['bmr']:.2f}  bmd={row['bmd']:.4f}{flag}")


def cmd_corr(args):
    from .inference import intracluster_corr_draw

    chain = _load_chain(args)
    doses = args.doses if args.doses is not None else _observed_doses(chain)
    rows = []
    for x in doses:
        for j in (1, 2, 3):
            vals = intracluster_corr_draw(chain.params, chain.spec, x, j, strict=False)
            rows.extend((s, repr(float(x)), j, repr(float(v))) for s, v in enumerate(np.atleast_1d(vals)))
    _csv(args.out / "corr_draws.csv", ["draw", "dose", "category", "corr"], rows)
    _write_manifest(args.out, args, model=chain.spec.name)


def cmd_predict(args):
    from .inference import ImplantModel, conditional_pmfs, posterior_predictive

    chain = _load_chain(args)
    doses = args.doses if args.doses is not None else _observed_doses(chain)
    rate = args.implant_rate if args.implant_rate is not None else chain.extra.get("data", {}).get("implant_rate")
    if rate is None:
        raise ConfigError("no implant rate in the chain manifest; pass --implant-rate")
    pred = posterior_predictive(chain.params, chain.spec, doses, ImplantModel(rate),
                                np.random.default_rng(args.seed))
    rows = [(s, repr(float(x)), int(pred.m[s, d]), int(pred.R[s, d]), int(pred.y[s, d]))
            for s in range(pred.m.shape[0]) for d, x in enumerate(doses)]
    _csv(args.out / "predictive_samples.csv", ["draw", "dose", "m", "R", "y"], rows)
    rows = []
    for x in doses:
        pr, py = conditional_pmfs(chain.params, chain.spec, x, args.m, args.R, strict=False)
        for label, table in (("R|m", pr), ("y|m,R", py)):
            lo, hi = np.nanquantile(table, [0.025, 0.975], axis=0)
            mean = np.nanmean(table, axis=0)
            rows.extend((repr(float(x)), label, k, repr(float(mean[k])), repr(float(lo[k])), repr(float(hi[k])))
                        for k in range(table.shape[-1]))
    _csv(args.out / "pmf.csv", ["dose", "pmf", "value", "mean", "lower", "upper"], rows)
    _write_manifest(args.out, args, model=chain.spec.name, implant_rate=rate)


def cmd_compare(args):
    from .assess import compare, cv_split
    from .data import read_dataset, write_dataset
    from .inference import fit_implant_model, posterior_predictive

    data = read_dataset(_need(args, "data"))
    split = cv_split(data, args.fraction, np.random.default_rng(args.split_seed))
    write_dataset(split.train, args.out / "train.csv")
    write_dataset(split.test, args.out / "test.csv")
    config = _mcmc_config(args)
    hyper = _hyper(args, split.train.max_dose)
    implant = fit_implant_model(split.train)
    doses = split.test.dose_levels
    predictives = {}
    for i, name in enumerate(args.models):
        chain = _fit_one(name, split.train, hyper, config, {"path": str(args.data), "split": "train"})
        predictives[name] = posterior_predictive(chain.params, chain.spec, doses, implant,
                                                 np.random.default_rng([args.seed, i]))
        print(f"{name}: fitted in {chain.wall_time:.1f}s")
    report = compare(split.test, predictives)
    report.write_csv(args.out / "comparison.csv")
    (args.out / "comparison.txt").write_text(report.table() + "\n", encoding="utf-8")
    _write_manifest(args.out, args, test_index=list(split.test_index), data_sha256=_sha256(args.data))
    print(report.table())


def cmd_diagnose(args):
    from .mcmc import diagnostics

    chain = _load_chain(args)
    levels = chain.extra.get("data", {}).get("dose_levels")
    bundle = diagnostics(chain, dose=args.dose, top=args.top, levels=levels)
    names = list(bundle.traces)
    _csv(args.out / "traces.csv", ["draw", "chain", "iteration", *names],
         [(s, int(chain.chain[s]), int(chain.iteration[s]), *(repr(float(bundle.traces[n][s])) for n in names))
          for s in range(len(chain))])
    _csv(args.out / "convergence.csv", ["quantity", "ess", "rhat", "degenerate"],
         [(r["name"], repr(r["ess"]), repr(r["rhat"]), int(r["degenerate"])) for r in bundle.table()])
    _write_manifest(args.out, args, model=chain.spec.name)
    worst = max(bundle.rhat.values())
    print(f"{len(names)} traces; max split R-hat {worst:.3f}; min ESS {min(bundle.ess.values()):.0f}")


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "risk": cmd_risk, "corr": cmd_corr,
            "predict": cmd_predict, "compare": cmd_compare, "diagnose": cmd_diagnose}


def run(argv=None) -> int:
    """Execute one subcommand; returns the process exit status."""
    from .data import DatasetParseError
    from .mcmc import NumericalFailure

    try:
        args = parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    except ConfigError as err:
        print(f"devtox: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
    except NumericalFailure as err:
        print(f"devtox: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DatasetParseError, ValueError, OSError, KeyError) as err:
        print(f"devtox: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
