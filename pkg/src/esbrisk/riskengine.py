"""Scenario analysis, crisis-parameter matching, spread histories and VaR/ES.

Loss probabilities under stress scenarios come from the full Monte Carlo
engine.  Repricing the senior tranche at a risk horizon (and along a history
of calibrated states) uses a conditional pricer: given a simulated regime
trajectory, per-name survival probabilities are available in closed form, so
only the regime paths and the default/LGD pattern are sampled.  The pattern
noise is shared across evaluation states (common random numbers), which keeps
the empirical quantiles of relative losses stable.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import (REAL_WORLD, RISK_NEUTRAL, LgdSpec, MarketState,
                   PaymentSchedule, Portfolio, RegimeChain, SovereignParams)
from .errors import NumericalError, ValidationError
from .paths import (ChainPath, simulate_chain, simulate_chain_grid,
                    simulate_hazards, sample_defaults, simulate_portfolio_losses)
from .pricing import SovereignCdsPricer
from .transform import riccati_beta, riccati_beta_integral

__all__ = [
    "ScenarioSpec", "RiskReport", "ConditionalTranchePricer",
    "loss_probability", "match_crisis_parameters", "historical_spread_trajectory",
    "relative_loss_sample", "var_es", "standard_scenarios",
    "simulate_chain", "simulate_chain_grid", "simulate_hazards", "sample_defaults",
    "ChainPath",
]


@dataclass(frozen=True)
class ScenarioSpec:
    """Stress overrides applied to a market state before simulation.

    ``defaulted`` names are treated as defaulted at time zero with a fresh
    beta LGD draw (mean 0.5) per Monte Carlo path; ``loss0`` instead fixes the
    initial loss vector.  ``parameter_set`` selects among the base and crisis
    parameterizations when a mapping of portfolios is supplied.
    """

    name: str = "base"
    X0: int | None = None
    hazard_multiplier: float = 1.0
    defaulted: tuple[str, ...] = ()
    loss0: np.ndarray | None = None
    parameter_set: str = "base"

    def __post_init__(self):
        if np.any(np.asarray(self.hazard_multiplier) <= 0):
            raise ValidationError("hazard multipliers must be > 0")
        if self.loss0 is not None:
            l0 = np.asarray(self.loss0, dtype=float)
            if np.any((l0 < 0) | (l0 > 1)):
                raise ValidationError("initial losses must lie in [0,1]")
            object.__setattr__(self, "loss0", l0)


def standard_scenarios() -> list[ScenarioSpec]:
    """The stress set reported in the scenario figures.

    Hazard jump, recession moves, a major-sovereign default and the contagion
    variant where that default also moves the economy to the severe recession
    state under the second crisis parameterization.
    """
    return [
        ScenarioSpec(name="base"),
        ScenarioSpec(name="hazard+10%", hazard_multiplier=1.1),
        ScenarioSpec(name="state-2", X0=2),
        ScenarioSpec(name="state-3", X0=3),
        ScenarioSpec(name="italy-default", defaulted=("ITA",)),
        ScenarioSpec(name="contagion-3", defaulted=("ITA",), X0=3, parameter_set="crisis2"),
    ]


def _apply_scenario(scenario: ScenarioSpec, state: MarketState, portfolio: Portfolio) -> MarketState:
    loss = state.loss.copy() if scenario.loss0 is None else scenario.loss0.copy()
    ids = portfolio.ids()
    for name in scenario.defaulted:
        if name not in ids:
            raise ValidationError(f"scenario defaults unknown sovereign {name!r}")
        loss[ids.index(name)] = 1.0
    return MarketState(
        date=state.date,
        X=scenario.X0 if scenario.X0 is not None else state.X,
        gamma=state.gamma * scenario.hazard_multiplier,
        loss=loss,
    )


def loss_probability(
    scenario: ScenarioSpec,
    portfolios,
    state: MarketState,
    kappas,
    schedule: PaymentSchedule,
    n_paths: int,
    rng: np.random.Generator,
    dt: float = 1.0 / 500.0,
) -> tuple[np.ndarray, np.ndarray]:
    """P(L_T > kappa) under the scenario, with binomial standard errors.

    ``portfolios`` is either a single portfolio or a mapping keyed by
    parameter-set name.  Pre-seeded defaults enter L_T; names listed in
    ``scenario.defaulted`` get a per-path beta LGD draw with mean one half.
    """
    portfolio = portfolios[scenario.parameter_set] if isinstance(portfolios, dict) else portfolios
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    sc_state = _apply_scenario(scenario, state, portfolio)
    sample = simulate_portfolio_losses(sc_state, portfolio, schedule, n_paths, rng, dt=dt)
    L = sample.portfolio.copy()
    ids = portfolio.ids()
    for name in scenario.defaulted:
        j = ids.index(name)
        spec = LgdSpec(mean=np.full(portfolio.chain.K, 0.5),
                       concentration=portfolio.lgd[j].concentration)
        delta = spec.sample(np.ones(n_paths, dtype=np.int64), rng)
        # replace the unit placeholder loss by the random severity
        L += portfolio.weights[j] * (delta - 1.0)
    p = np.array([(L > k).mean() for k in kappas])
    se = np.sqrt(p * (1.0 - p) / n_paths)
    return p, se


def match_crisis_parameters(
    state: MarketState,
    portfolio: Portfolio,
    crisis_chain: RegimeChain,
    schedule: PaymentSchedule,
    tol: float = 1e-8,
    step: float = 1.0 / 365.0,
) -> Portfolio:
    """Adjust each name's recession-state mean reversion level under a new generator.

    The severe-recession level mu(K) is root-found so the analytic expected
    loss over the schedule matches the base parameterization to ``tol``.
    Since crisis generators make the recession state rarer, the matched levels
    exceed the base ones.
    """
    K = portfolio.chain.K
    new_params = []
    for j, p in enumerate(portfolio.sovereigns):
        base = SovereignCdsPricer(p, portfolio.lgd[j], portfolio.chain, schedule, step=step)
        target = float(base.expected_loss(float(state.gamma[j]), state.X))

        def mismatch(mu3):
            mu = p.mu.copy()
            mu[K - 1] = mu3
            cand = SovereignParams(id=p.id, kappa=p.kappa, mu=mu, sigma=p.sigma,
                                   omega=p.omega, measure=p.measure)
            pr = SovereignCdsPricer(cand, portfolio.lgd[j], crisis_chain, schedule, step=step)
            return float(pr.expected_loss(float(state.gamma[j]), state.X)) - target

        lo = p.mu[K - 1]
        f_lo = mismatch(lo)
        if abs(f_lo) <= tol:
            mu3 = lo
        else:
            if f_lo > 0:
                lo, hi = 1e-8, lo
                if mismatch(lo) > 0:
                    raise NumericalError(f"cannot bracket matched level for {p.id}")
            else:
                hi = lo * 2.0
                for _ in range(60):
                    if mismatch(hi) > 0:
                        break
                    hi *= 2.0
                else:
                    raise NumericalError(f"cannot bracket matched level for {p.id}")
            mu3 = brentq(mismatch, lo, hi, xtol=1e-14, rtol=8.9e-16)
            if abs(mismatch(mu3)) > tol:
                raise NumericalError(f"expected-loss match beyond tolerance for {p.id}")
        mu = p.mu.copy()
        mu[K - 1] = mu3
        new_params.append(SovereignParams(id=p.id, kappa=p.kappa, mu=mu, sigma=p.sigma,
                                          omega=p.omega, measure=p.measure))
    return Portfolio(sovereigns=tuple(new_params), weights=portfolio.weights,
                     lgd=portfolio.lgd, chain=crisis_chain)


class ConditionalTranchePricer:
    """Senior tranche values as a vectorized function of (gamma, X).

    Works at r = 0 from the identity senior value = 1 - kappa - E[(L_T -
    kappa)^+].  Regime trajectories are simulated exactly once per start
    state; conditional on a trajectory, each name's default-period
    probabilities are closed-form in its current hazard level, so only the
    default pattern and the LGD draws are sampled.  Pattern uniforms and LGD
    draws are shared across all evaluation states.

    ``dates`` must be increasing with dates[0] the pricing time and dates[-1]
    the maturity; defaults book at the first date after the default using the
    regime at that date.  Requires omega = 0 for every name.
    """

    def __init__(
        self,
        portfolio: Portfolio,
        dates,
        rng: np.random.Generator,
        n_chain: int = 100,
        n_patterns: int = 4,
    ):
        dates = np.asarray(dates, dtype=float)
        if dates.ndim != 1 or dates.size < 2 or np.any(np.diff(dates) <= 0):
            raise ValidationError("dates must be strictly increasing with at least two entries")
        if any(p.omega != 0.0 for p in portfolio.sovereigns):
            raise ValidationError("conditional pricer requires omega = 0")
        if n_chain < 1 or n_patterns < 1:
            raise ValidationError("need at least one regime path and one pattern")
        self.portfolio = portfolio
        self.dates = dates
        self.rel = dates - dates[0]
        self.horizon = float(self.rel[-1])
        self.n_chain = n_chain
        self.n_patterns = n_patterns
        self._rng = rng
        J = portfolio.J
        self.betamat = np.stack([
            riccati_beta(self.rel, 0.0, 1.0, p.kappa, p.sigma) for p in portfolio.sovereigns
        ])  # (J, N+1)
        self._by_state: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        # pattern noise shared across start states and evaluation points
        self.U = rng.random((n_chain, J, n_patterns))
        self._delta: dict[int, np.ndarray] = {}

    def _tables(self, x0: int):
        """(c, delta) for start state x0: conditional-survival exponents and LGD draws."""
        if x0 in self._by_state:
            return self._by_state[x0]
        pf = self.portfolio
        J, N1 = pf.J, self.rel.size
        c = np.zeros((self.n_chain, J, N1))
        book = np.empty((self.n_chain, N1), dtype=np.int64)
        for i in range(self.n_chain):
            path = simulate_chain(pf.chain, x0, self.horizon, self._rng)
            book[i] = path.state_at(self.rel)
            bounds = np.append(path.times, self.horizon)
            for seg in range(path.states.size):
                a, b, k = bounds[seg], bounds[seg + 1], path.states[seg]
                if b <= a:
                    continue
                for j, p in enumerate(pf.sovereigns):
                    hi = riccati_beta_integral(np.maximum(self.rel - a, 0.0), 1.0, p.kappa, p.sigma)
                    lo = riccati_beta_integral(np.maximum(self.rel - b, 0.0), 1.0, p.kappa, p.sigma)
                    c[i, j] += p.kappa * p.mu[k - 1] * (hi - lo)
        delta = np.empty((self.n_chain, J, self.n_patterns, N1))
        for j in range(J):
            states = np.broadcast_to(book[:, None, :], (self.n_chain, self.n_patterns, N1))
            delta[:, j] = pf.lgd[j].sample(states, self._rng)
        self._by_state[x0] = (c, delta)
        return c, delta

    def loss_sample(self, gamma: np.ndarray, X: np.ndarray, chunk: int | None = None) -> np.ndarray:
        """Portfolio losses L_T, shape (B, n_chain, n_patterns), for B evaluation states."""
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
        X = np.atleast_1d(np.asarray(X, dtype=np.int64))
        B, J = gamma.shape
        if X.size != B or J != self.portfolio.J:
            raise ValidationError("gamma and X shapes do not match the portfolio")
        if np.any(gamma < 0):
            raise ValidationError("hazard levels must be >= 0")
        N = self.rel.size - 1
        P, D = self.n_chain, self.n_patterns
        w = self.portfolio.weights
        out = np.empty((B, P, D))
        if chunk is None:
            chunk = max(1, int(4.0e6 / (P * J * (N + 1))))
        pidx = np.arange(P)[None, :, None]
        jidx = np.arange(J)[None, None, :]
        for x0 in np.unique(X):
            c, delta = self._tables(int(x0))
            sel = np.flatnonzero(X == x0)
            for lo in range(0, sel.size, chunk):
                rows = sel[lo:lo + chunk]
                S = np.exp(gamma[rows][:, None, :, None] * self.betamat[None, None] + c[None])
                for d in range(D):
                    cnt = (S[..., 1:] >= self.U[None, :, :, d, None]).sum(axis=-1)
                    defaulted = cnt < N
                    period = np.minimum(cnt + 1, N)
                    dd = delta[:, :, d, :][pidx, jidx, period]  # (b, P, J)
                    out[rows, :, d] = ((dd * defaulted) * w).sum(axis=-1)
        return out

    def tranche_losses(self, gamma, X, kappas, base_loss=0.0) -> np.ndarray:
        """Normalized expected tranche losses E[(L-kappa)^+]/(1-kappa), shape (B, n_kappa)."""
        kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
        L = self.loss_sample(gamma, X) + np.atleast_1d(base_loss)[:, None, None]
        out = np.empty((L.shape[0], kappas.size))
        for i, k in enumerate(kappas):
            out[:, i] = np.maximum(L - k, 0.0).mean(axis=(1, 2)) / (1.0 - k)
        return out

    def senior_values(self, gamma, X, kappas, base_loss=0.0) -> np.ndarray:
        """Senior tranche values (r = 0), shape (B, n_kappa)."""
        kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
        ell = self.tranche_losses(gamma, X, kappas, base_loss)
        return (1.0 - kappas)[None, :] * (1.0 - ell)

    def spreads(self, gamma, X, kappas, maturity: float | None = None) -> np.ndarray:
        """Annualized log credit spreads of the normalized senior tranche."""
        T = self.horizon if maturity is None else maturity
        ell = self.tranche_losses(gamma, X, kappas)
        with np.errstate(divide="ignore"):
            return -np.log1p(-ell) / T


def historical_spread_trajectory(
    states,
    portfolio: Portfolio,
    kappas,
    schedule: PaymentSchedule,
    rng: np.random.Generator,
    n_chain: int = 200,
    n_patterns: int = 10,
):
    """Re-price the senior tranche at each historical state with fixed time to maturity.

    Returns (dates, spreads, vols): per-date annualized spreads for each
    attachment point and their sample standard deviations across dates.
    States with non-finite entries are skipped with a warning.
    """
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    good = []
    for st in states:
        if np.all(np.isfinite(st.gamma)) and np.all(st.gamma >= 0):
            good.append(st)
        else:
            warnings.warn(f"skipping state dated {st.date}: invalid hazard vector")
    if not good:
        raise ValidationError("no valid states to re-price")
    pricer = ConditionalTranchePricer(portfolio, schedule.t, rng, n_chain=n_chain, n_patterns=n_patterns)
    gam = np.stack([st.gamma for st in good])
    X = np.array([st.X for st in good], dtype=np.int64)
    spreads = pricer.spreads(gam, X, kappas, maturity=schedule.T)
    dates = np.array([st.date for st in good])
    vols = spreads.std(axis=0, ddof=1) if len(good) > 1 else np.zeros(kappas.size)
    return dates, spreads, vols


@dataclass(frozen=True)
class RiskReport:
    """Empirical VaR/ES of relative senior-tranche losses over a horizon."""

    alpha: float
    var: float
    es: float
    horizon: float
    n_paths: int
    kappa: float = float("nan")

    def __post_init__(self):
        if not np.isfinite(self.var) or not np.isfinite(self.es):
            raise ValidationError("risk measures must be finite")
        if self.es < self.var - 1e-12:
            raise ValidationError("expected shortfall below value-at-risk")


def var_es(sample, alpha: float, horizon: float = 0.25, kappa: float = float("nan")) -> RiskReport:
    """Empirical VaR (order statistic) and ES (tail mean) of a loss sample.

    VaR is the ceil(N alpha)-th order statistic; ES averages the ceil(N(1 -
    alpha)) largest losses.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    N = x.size
    if N < 100:
        raise ValidationError("need at least 100 observations")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0,1)")
    # round before ceiling so e.g. 100*(1-0.95)=5.000000000000004 stays 5
    var = float(x[int(np.ceil(np.round(N * alpha, 9))) - 1])
    n_tail = int(np.ceil(np.round(N * (1.0 - alpha), 9)))
    es = float(x[-n_tail:].mean())
    return RiskReport(alpha=alpha, var=var, es=es, horizon=horizon, n_paths=N, kappa=kappa)


def relative_loss_sample(
    state: MarketState,
    portfolio_rn: Portfolio,
    portfolio_rw: Portfolio,
    kappas,
    schedule: PaymentSchedule,
    n_outer: int,
    rng: np.random.Generator,
    horizon: float = 0.25,
    dt: float = 1.0 / 1000.0,
    n_chain: int = 100,
    n_patterns: int = 4,
) -> np.ndarray:
    """Relative senior-tranche losses 1 - h(horizon)/h(0), shape (n_outer, n_kappa).

    Horizon states (X, gamma) are simulated under the real-world dynamics;
    both the horizon price and the time-zero price are evaluated with the same
    conditional pricer under the risk-neutral parameters, with shared pattern
    noise.
    """
    if any(p.measure != RISK_NEUTRAL for p in portfolio_rn.sovereigns):
        raise ValidationError("repricing portfolio must carry risk-neutral parameters")
    if any(p.measure != REAL_WORLD for p in portfolio_rw.sovereigns):
        raise ValidationError("horizon-simulation portfolio must carry real-world parameters")
    if not 0.0 < horizon < schedule.T:
        raise ValidationError("horizon must lie inside the schedule")
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    n_steps = max(1, int(round(horizon / dt)))
    grid = np.linspace(0.0, horizon, n_steps + 1)
    Xg = simulate_chain_grid(portfolio_rw.chain, state.X, grid, rng, n_outer)
    gam_h = np.empty((n_outer, portfolio_rw.J))
    for j, p in enumerate(portfolio_rw.sovereigns):
        gam_h[:, j] = simulate_hazards(p, Xg, grid, float(state.gamma[j]), rng)[:, -1]
    X_h = Xg[:, -1]

    later = schedule.t[schedule.t > horizon + 1e-12]
    dates_h = np.concatenate([[horizon], later])
    pricer = ConditionalTranchePricer(portfolio_rn, dates_h, rng,
                                      n_chain=n_chain, n_patterns=n_patterns)
    h_t = pricer.senior_values(gam_h, X_h, kappas)
    pricer0 = ConditionalTranchePricer(portfolio_rn, schedule.t, rng,
                                       n_chain=n_chain, n_patterns=n_patterns)
    h_0 = pricer0.senior_values(state.gamma, state.X, kappas)[0]
    if np.any(h_0 <= 0):
        raise NumericalError("nonpositive time-zero senior value")
    return 1.0 - h_t / h_0[None, :]
