"""Command-line entry points wiring the model into reproducible runs.

Every command takes a seed, writes CSV reports plus a manifest into the
output directory, and exits 0 on success, 2 on validation errors, 3 on
numerical failures.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import datasets, io
from .calibration import CalibConfig, run_algorithm1
from .core import REAL_WORLD, RISK_NEUTRAL, MarketState, PaymentSchedule
from .em import run_em
from .errors import NumericalError, ValidationError
from .pricing import SovereignCdsPricer, implied_initial_hazards, price_tranches
from .riskengine import (loss_probability, match_crisis_parameters,
                         relative_loss_sample, standard_scenarios, var_es)
from .worstcase import build_worst_case, worst_case_tranche_values


def _config_dict(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k == "func":
            continue
        if isinstance(v, np.ndarray):
            v = [float(x) for x in v]
        out[k] = v
    return out


def _kappa_grid(arg: str) -> np.ndarray:
    vals = np.array([float(x) for x in arg.split(",")])
    if np.any((vals <= 0) | (vals >= 1)):
        raise ValidationError("kappa grid must lie in (0,1)")
    return vals


def _representative_state(portfolio, X0: int = 1) -> MarketState:
    """Hazards at their state-X0 mean-reversion levels; no initial losses."""
    gamma0 = np.array([p.mu[X0 - 1] for p in portfolio.sovereigns])
    return MarketState(date=0.0, X=X0, gamma=gamma0)


def _portfolio_from(args, measure=RISK_NEUTRAL):
    return datasets.base_portfolio(measure=measure, generator=args.params,
                                   concentration=args.lgd_concentration)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", default="base", choices=["base", "crisis1", "crisis2"],
                   help="generator parameter set")
    p.add_argument("--kappa", type=_kappa_grid, default=np.array([0.3]),
                   help="comma-separated attachment points in (0,1)")
    p.add_argument("--maturity", type=float, default=5.0)
    p.add_argument("--n-paths", type=int, default=10000)
    p.add_argument("--lgd-concentration", type=float, default=1.5)


def cmd_price(args) -> int:
    portfolio = _portfolio_from(args)
    state = _representative_state(portfolio)
    schedule = PaymentSchedule.quarterly(args.maturity)
    rng = np.random.default_rng(args.seed)
    prices = price_tranches(state, portfolio, args.kappa, schedule, args.n_paths, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table_csv(
        out / "tranche_prices.csv",
        ["kappa", "esb", "ejb", "expected_tranche_loss", "spread", "stderr", "n_paths"],
        [[p.kappa, p.esb, p.ejb, p.expected_tranche_loss, p.spread, p.esb_stderr, p.n_paths]
         for p in prices],
    )
    io.write_manifest(out, "price", _config_dict(args), [])
    return 0


def cmd_worst_case(args) -> int:
    portfolio = _portfolio_from(args)
    state = _representative_state(portfolio)
    schedule = PaymentSchedule.quarterly(args.maturity)
    if args.ellbar is not None:
        ellbar = np.array([float(x) for x in args.ellbar.split(",")])
        weights = np.full(ellbar.size, 1.0 / ellbar.size)
    else:
        # single-name expected losses implied by the selected parameter set
        ellbar = np.empty(portfolio.J)
        for j, p in enumerate(portfolio.sovereigns):
            pr = SovereignCdsPricer(p, portfolio.lgd[j], portfolio.chain, schedule)
            ellbar[j] = pr.expected_loss(float(state.gamma[j]), state.X)
        weights = portfolio.weights
    dist = build_worst_case(ellbar)
    rows = []
    for k in args.kappa:
        esb, ejb, ell = worst_case_tranche_values(dist, weights, float(k))
        rows.append([k, esb, ejb, ell])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table_csv(out / "worst_case_bounds.csv",
                       ["kappa", "esb_lower_bound", "ejb_upper_bound", "tranche_loss"], rows)
    io.write_manifest(out, "worst-case", _config_dict(args), [])
    return 0


def cmd_scenario(args) -> int:
    base = datasets.base_portfolio(generator="base", concentration=args.lgd_concentration)
    # representative market day: hazards implied from the stressed-Italy quotes
    gamma0 = implied_initial_hazards(base, datasets.load_stress_spreads(), step=1.0 / 52)
    state = MarketState(date=0.0, X=1, gamma=gamma0)
    schedule = PaymentSchedule.quarterly(args.maturity)
    scenarios = standard_scenarios()
    if args.spec != "all":
        scenarios = [s for s in scenarios if s.name == args.spec]
        if not scenarios:
            raise ValidationError(f"unknown scenario {args.spec!r}")
    # crisis parameterizations keep each name's analytic expected loss fixed
    portfolios = {"base": base}
    for ps in {s.parameter_set for s in scenarios} - {"base"}:
        portfolios[ps] = match_crisis_parameters(
            state, base, datasets.load_generator(ps), schedule)
    rows = []
    for sc in scenarios:
        rng = np.random.default_rng(args.seed)
        p, se = loss_probability(sc, portfolios, state, args.kappa, schedule, args.n_paths, rng)
        for k, pi, si in zip(args.kappa, p, se):
            rows.append([sc.name, k, pi, si])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table_csv(out / "scenario_loss_probabilities.csv",
                       ["scenario", "kappa", "loss_probability", "stderr"], rows)
    io.write_manifest(out, "scenario", _config_dict(args), [])
    return 0


def cmd_risk(args) -> int:
    rn = _portfolio_from(args, measure=RISK_NEUTRAL)
    rw = datasets.base_portfolio(measure=REAL_WORLD, concentration=args.lgd_concentration)
    state = _representative_state(rn)
    schedule = PaymentSchedule.quarterly(args.maturity)
    rng = np.random.default_rng(args.seed)
    R = relative_loss_sample(state, rn, rw, args.kappa, schedule, args.n_paths, rng,
                             horizon=args.horizon)
    rows = []
    for i, k in enumerate(args.kappa):
        for alpha in args.alpha:
            rep = var_es(R[:, i], alpha, horizon=args.horizon, kappa=float(k))
            rows.append([k, alpha, rep.var, rep.es, rep.n_paths])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table_csv(out / "risk_report.csv",
                       ["kappa", "alpha", "var", "es", "n_paths"], rows)
    io.write_manifest(out, "risk", _config_dict(args), [])
    return 0


def cmd_synth(args) -> int:
    portfolio = datasets.base_portfolio(
        generator=args.params, concentration=args.lgd_concentration,
        sovereigns=args.sovereigns.split(",") if args.sovereigns else None,
    )
    rng = np.random.default_rng(args.seed)
    panel, truth = io.generate_synthetic_panel(portfolio, args.dates, rng, noise_bp=args.noise_bp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_panel(panel, out / "panel.csv")
    io.write_states_csv(panel.dates, truth["X"], truth["gamma"], panel.sovereigns,
                        out / "truth_states.csv")
    io.write_manifest(out, "synth", _config_dict(args), [])
    return 0


def cmd_calibrate(args) -> int:
    panel = io.ingest_panel(args.panel)
    lgd = datasets.load_lgd_means(concentration=args.lgd_concentration)
    missing = [s for s in panel.sovereigns if s not in lgd]
    if missing:
        raise ValidationError(f"no packaged LGD means for {missing}")
    config = CalibConfig(seed=args.seed, max_iter=args.max_iter)
    result = run_algorithm1(panel, lgd, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_params_csv(result.params, out / "params.csv")
    io.write_states_csv(panel.dates, result.X, result.gamma, panel.sovereigns,
                        out / "states.csv")
    io.write_table_csv(out / "generator.csv",
                       ["state"] + [f"q{k + 1}" for k in range(config.K)],
                       [[k + 1] + list(result.Q[k]) for k in range(config.K)])
    io.write_table_csv(out / "fit_report.csv",
                       ["sovereign", "rmse_bp", "mape"],
                       [[s, result.rmse_bp[s], result.mape[s]] for s in panel.sovereigns])
    io.write_manifest(out, "calibrate", _config_dict(args), [args.panel])
    if not result.converged:
        print(f"calibration did not converge: {result.flags}", file=sys.stderr)
    return 0


def cmd_em(args) -> int:
    dates, X, gamma, sovs = io.read_states_csv(args.states)
    rn = datasets.load_hazard_params(measure=RISK_NEUTRAL, omega_zero=True)
    unknown = [s for s in sovs if s not in rn]
    if unknown:
        raise ValidationError(f"no packaged parameters for {unknown}")
    init = [rn[s] for s in sovs]
    chain0 = datasets.load_generator("base")
    dt = float(np.median(np.diff(dates)))
    result = run_em(gamma, init, chain0, dt=dt, max_iter=args.max_iter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_params_csv({p.id: p for p in result.params}, out / "params_rw.csv")
    K = result.chain.K
    io.write_table_csv(out / "generator_rw.csv",
                       ["state"] + [f"q{k + 1}" for k in range(K)],
                       [[k + 1] + list(result.chain.Q[k]) for k in range(K)])
    fo = result.filter_output
    io.write_table_csv(
        out / "state_probabilities.csv",
        ["date"] + [f"filtered_{k + 1}" for k in range(K)] + [f"smoothed_{k + 1}" for k in range(K)],
        [[dates[m]] + list(fo.filtered[m]) + list(fo.smoothed[m]) for m in range(dates.size)],
    )
    io.write_manifest(out, "em", _config_dict(args), [args.states])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="esbrisk",
                                 description="Regime-switching sovereign credit risk toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price", help="Monte Carlo tranche prices")
    _add_common(p)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("worst-case", help="model-independent tranche price bounds")
    _add_common(p)
    p.add_argument("--ellbar", default=None,
                   help="comma-separated expected losses; default: implied by --params")
    p.set_defaults(func=cmd_worst_case)

    p = sub.add_parser("scenario", help="loss probabilities under stress scenarios")
    _add_common(p)
    p.add_argument("--spec", default="all",
                   help="scenario name (default: the full standard set)")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("risk", help="VaR/ES of relative tranche losses")
    _add_common(p)
    p.add_argument("--alpha", type=lambda s: [float(x) for x in s.split(",")],
                   default=[0.95, 0.99])
    p.add_argument("--horizon", type=float, default=0.25)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("synth", help="generate a synthetic CDS panel with known truth")
    _add_common(p)
    p.add_argument("--dates", type=int, default=200)
    p.add_argument("--noise-bp", type=float, default=0.0)
    p.add_argument("--sovereigns", default=None, help="comma-separated subset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="run the full calibration loop on a panel")
    _add_common(p)
    p.add_argument("--panel", required=True)
    p.add_argument("--max-iter", type=int, default=20)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("em", help="estimate real-world dynamics from hazard trajectories")
    _add_common(p)
    p.add_argument("--states", required=True, help="trajectory CSV from calibrate/synth")
    p.add_argument("--max-iter", type=int, default=200)
    p.set_defaults(func=cmd_em)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
