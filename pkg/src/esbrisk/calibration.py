"""Iterative calibration of the regime-switching hazard model to CDS panels.

Block-coordinate descent over hazard trajectories, volatilities, the regime
path, the generator and the per-sovereign CIR parameters.  Each block keeps
the others fixed and never worsens the global squared-spread objective; model
spreads are evaluated through precomputed transform tables so a parameter
candidate prices the whole panel in a few milliseconds.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.optimize import differential_evolution, minimize

from .core import RISK_NEUTRAL, DiscountCurve, LgdSpec, PaymentSchedule, RegimeChain, SovereignParams
from .errors import ValidationError
from .pricing import SovereignCdsPricer

BP = 1e-4


@dataclass(frozen=True)
class CdsPanel:
    """Observed CDS spreads: dates x sovereigns x maturities, NaN = missing.

    Dates are year fractions from the first observation; spreads are decimals
    per year.
    """

    dates: np.ndarray
    sovereigns: tuple[str, ...]
    maturities: np.ndarray
    spreads: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype=float)
        mats = np.asarray(self.maturities, dtype=float)
        spreads = np.asarray(self.spreads, dtype=float)
        if dates.ndim != 1 or np.any(np.diff(dates) <= 0):
            raise ValidationError("dates must be strictly increasing")
        if spreads.shape != (dates.size, len(self.sovereigns), mats.size):
            raise ValidationError("spread array shape must be (dates, sovereigns, maturities)")
        with np.errstate(invalid="ignore"):
            if np.any(spreads < 0):
                raise ValidationError("spreads must be >= 0")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "spreads", spreads)

    @property
    def M(self) -> int:
        return self.dates.size

    @property
    def J(self) -> int:
        return len(self.sovereigns)

    @property
    def n_cells(self) -> int:
        return int(np.isfinite(self.spreads).sum())


@dataclass(frozen=True)
class CalibConfig:
    """Budgets, bounds and tolerances of the calibration loop."""

    K: int = 3
    step: float = 1.0 / 52.0  # pricing ODE step
    gamma_max: float = 2.0
    kappa_min: float = 0.1
    kappa_max: float = 20.0
    mu_max: float = 2.0
    omega_max: float = 1.0
    fit_omega: bool = False
    eps: float | None = None  # default (1 bp)^2 per observed cell
    max_iter: int = 20
    global_popsize: int = 20
    global_maxiter: int = 40
    local_evals: int = 500
    refine_q: bool = True
    q_evals: int = 150
    seed: int = 0

    def epsilon(self, n_cells: int) -> float:
        return self.eps if self.eps is not None else BP**2 * n_cells


@dataclass
class CalibrationResult:
    """Output of the calibration loop, including the iteration log."""

    params: dict[str, SovereignParams]
    sigma: dict[str, float]
    Q: np.ndarray
    gamma: np.ndarray  # (M, J)
    X: np.ndarray  # (M,)
    objective: float
    objective_log: list = field(default_factory=list)
    rmse_bp: dict = field(default_factory=dict)
    mape: dict = field(default_factory=dict)
    converged: bool = False
    flags: list = field(default_factory=list)


def _pricers(params: SovereignParams, lgd: LgdSpec, chain: RegimeChain,
             maturities, step: float) -> list[SovereignCdsPricer]:
    return [
        SovereignCdsPricer(params, lgd, chain, PaymentSchedule.quarterly(float(u)),
                           DiscountCurve(0.0), step=step)
        for u in maturities
    ]


def _model_spreads(pricers, gamma, X) -> np.ndarray:
    """Model spreads for arrays of states; shape gamma.shape + (n_maturities,)."""
    return np.stack([p.fair_spread(gamma, X) for p in pricers], axis=-1)


def _cell_errors(obs, pricers, gamma, X) -> np.ndarray:
    """Squared spread errors summed over maturities, NaN cells dropped."""
    model = _model_spreads(pricers, gamma, X)
    diff = np.where(np.isfinite(obs), obs - model, 0.0)
    return (diff**2).sum(axis=-1)


def kmeans_init(panel: CdsPanel, lgd: dict[str, LgdSpec], K: int = 3,
                seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Initial regime path and hazard levels from spread clustering.

    Dates are clustered on the cross-section of shortest-maturity spreads;
    clusters are relabelled in increasing order of mean spread level.  Initial
    hazards use the short-maturity approximation spread = LGD x hazard.
    """
    short = panel.spreads[:, :, 0].copy()
    col_mean = np.nanmean(short, axis=0)
    inds = np.where(np.isfinite(short), short, col_mean[None, :])
    spread_range = inds.max(axis=0) - inds.min(axis=0)
    if np.all(spread_range < 1e-12) or K == 1:
        labels = np.zeros(panel.M, dtype=int)
        K_eff = 1
    else:
        _, labels = kmeans2(inds, K, minit="++", seed=seed)
        K_eff = K
    # relabel clusters by ascending mean level; empty clusters keep their slot
    levels = np.array([
        inds[labels == k].mean() if np.any(labels == k) else np.inf for k in range(K_eff)
    ])
    order = np.argsort(levels)
    rank = np.empty_like(order)
    rank[order] = np.arange(K_eff)
    X0 = rank[labels] + 1
    gamma0 = np.empty((panel.M, panel.J))
    for j, name in enumerate(panel.sovereigns):
        delta = lgd[name].mean[np.clip(X0 - 1, 0, lgd[name].mean.size - 1)]
        gamma0[:, j] = np.where(np.isfinite(short[:, j]), short[:, j], col_mean[j]) / delta
    return X0.astype(np.int64), np.clip(gamma0, 0.0, None)


def _profile_gamma(obs_j: np.ndarray, pricers, X: np.ndarray, gamma_max: float,
                   iters: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Best hazard level and attained error per date, all dates at once.

    Vectorized ternary search on [0, gamma_max]: model spreads are increasing
    in the hazard level, which makes the per-date squared error unimodal.
    Returns (gamma, errors); dates with no finite observation get error 0.
    """
    M = obs_j.shape[0]
    lo = np.zeros(M)
    hi = np.full(M, float(gamma_max))

    def f(g):
        return _cell_errors(obs_j, pricers, g, X)

    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        left = f(m1) <= f(m2)
        hi = np.where(left, m2, hi)
        lo = np.where(left, lo, m1)
    g = 0.5 * (lo + hi)
    return g, f(g)


def fit_gamma_per_date(obs_j: np.ndarray, pricers, X: np.ndarray,
                       gamma_prev: np.ndarray, gamma_max: float) -> np.ndarray:
    """Per-date bounded fit of the hazard level, one sovereign.

    ``obs_j`` has shape (M, n_maturities).  Keeps the previous level whenever
    the refit fails to improve on it or the date has no observation.
    """
    g, err = _profile_gamma(obs_j, pricers, X, gamma_max)
    err_prev = _cell_errors(obs_j, pricers, gamma_prev, X)
    has_obs = np.any(np.isfinite(obs_j), axis=1)
    return np.where(has_obs & (err <= err_prev), g, gamma_prev)


def estimate_sigma(gamma: np.ndarray, dates: np.ndarray, floor: float = 1e-4) -> float:
    """Quadratic-variation volatility estimate sigma^2 = sum(dgamma^2)/sum(gamma dt)."""
    gamma = np.asarray(gamma, dtype=float)
    dates = np.asarray(dates, dtype=float)
    if gamma.size < 2:
        raise ValidationError("need at least two observations")
    denom = float((gamma[:-1] * np.diff(dates)).sum())
    if denom <= 0:
        raise ValidationError("hazard trajectory is identically zero")
    qv = float((np.diff(gamma) ** 2).sum())
    return max(float(np.sqrt(qv / denom)), floor)


def fit_chain_per_date(errors_by_state: np.ndarray, X_prev: np.ndarray) -> np.ndarray:
    """Exhaustive per-date state choice; ties keep the previous date's state.

    ``errors_by_state`` has shape (M, K): total squared error per candidate
    state.
    """
    M, K = errors_by_state.shape
    X = np.empty(M, dtype=np.int64)
    for m in range(M):
        row = errors_by_state[m]
        best = row.min()
        cand = np.flatnonzero(row <= best + 1e-15)
        prev = X[m - 1] if m > 0 else int(X_prev[0])
        X[m] = prev if (prev - 1) in cand else cand[0] + 1
    return X


def mle_generator(X: np.ndarray, dates: np.ndarray, K: int) -> np.ndarray:
    """Continuous-time Markov chain MLE: jump counts over occupation times."""
    X = np.asarray(X, dtype=np.int64)
    dates = np.asarray(dates, dtype=float)
    if X.size < 2:
        raise ValidationError("need at least two dates")
    dt = np.diff(dates)
    occ = np.zeros(K)
    jumps = np.zeros((K, K))
    for m in range(X.size - 1):
        occ[X[m] - 1] += dt[m]
        if X[m + 1] != X[m]:
            jumps[X[m] - 1, X[m + 1] - 1] += 1.0
    Q = np.zeros((K, K))
    for k in range(K):
        if occ[k] > 0:
            Q[k] = jumps[k] / occ[k]
        elif np.any(jumps[k]):
            warnings.warn(f"state {k + 1} never occupied; its generator row is zeroed")
    np.fill_diagonal(Q, 0.0)
    Q[np.arange(K), np.arange(K)] = -Q.sum(axis=1)
    unvisited = np.flatnonzero(occ == 0)
    if unvisited.size:
        warnings.warn(f"states never visited: {[int(k) + 1 for k in unvisited]}; zero generator rows")
    return Q


def _theta_vector(p: SovereignParams, fit_omega: bool) -> np.ndarray:
    v = np.concatenate([p.mu, [p.kappa]])
    return np.append(v, p.omega) if fit_omega else v


def _theta_params(v, template: SovereignParams, K: int, fit_omega: bool) -> SovereignParams:
    return replace(template, mu=np.asarray(v[:K], dtype=float), kappa=float(v[K]),
                   omega=float(v[K + 1]) if fit_omega else template.omega)


def fit_theta(
    obs_j: np.ndarray,
    template: SovereignParams,
    lgd: LgdSpec,
    chain: RegimeChain,
    maturities,
    X: np.ndarray,
    config: CalibConfig,
    stage: str,
    rng_seed: int,
) -> tuple[SovereignParams, float]:
    """CIR-parameter fit for one sovereign with the regime path fixed.

    The objective profiles out the hazard trajectory: each candidate is scored
    by the error left after refitting the per-date hazard level, so parameter
    and trajectory estimates cannot lock each other into a bad basin.
    ``stage`` selects the evolutionary global search (first pass) or the
    derivative-free linear-approximation local method (later passes).  Returns
    the parameters achieving the lowest objective seen, which never exceeds
    the template's objective.
    """
    K = config.K

    def objective(v):
        v = np.asarray(v, dtype=float)
        if np.any(v < 0) or v[K] < config.kappa_min:
            return 1e6
        cand = _theta_params(v, template, K, config.fit_omega)
        try:
            pricers = _pricers(cand, lgd, chain, maturities, config.step)
            return float(_profile_gamma(obs_j, pricers, X, config.gamma_max)[1].sum())
        except (ValidationError, FloatingPointError, OverflowError):
            return 1e6

    x0 = _theta_vector(template, config.fit_omega)
    f0 = objective(x0)
    bounds = [(1e-6, config.mu_max)] * K + [(config.kappa_min, config.kappa_max)]
    if config.fit_omega:
        bounds.append((0.0, config.omega_max))
    if stage == "global":
        res = differential_evolution(
            objective, bounds, seed=rng_seed, popsize=config.global_popsize,
            maxiter=config.global_maxiter, tol=1e-10, polish=True, init="sobol",
            x0=x0,
        )
        best_x, best_f = res.x, float(res.fun)
    else:
        cons = []
        for i, (lo, hi) in enumerate(bounds):
            cons.append({"type": "ineq", "fun": (lambda v, i=i, lo=lo: v[i] - lo)})
            cons.append({"type": "ineq", "fun": (lambda v, i=i, hi=hi: hi - v[i])})
        res = minimize(objective, x0, method="COBYLA", constraints=cons,
                       options={"maxiter": config.local_evals, "rhobeg": 0.05, "tol": 1e-14})
        best_x, best_f = res.x, float(res.fun)
    if best_f >= f0:
        return template, f0
    best_x = np.clip(best_x, [b[0] for b in bounds], [b[1] for b in bounds])
    return _theta_params(best_x, template, K, config.fit_omega), objective(best_x)


def _refine_generator(panel, params, lgd, Q, gamma, X, config: CalibConfig) -> np.ndarray:
    """Local improvement of the off-diagonal generator entries on the global objective."""
    K = config.K
    off = [(k, l) for k in range(K) for l in range(K) if k != l]

    def build(v):
        Q2 = np.zeros((K, K))
        for (k, l), x in zip(off, v):
            Q2[k, l] = max(x, 0.0)
        Q2[np.arange(K), np.arange(K)] = -Q2.sum(axis=1)
        return Q2

    def objective(v):
        Q2 = build(v)
        try:
            chain = RegimeChain(Q=Q2)
            total = 0.0
            for j, name in enumerate(panel.sovereigns):
                pricers = _pricers(params[name], lgd[name], chain, panel.maturities, config.step)
                total += float(_cell_errors(panel.spreads[:, j], pricers, gamma[:, j], X).sum())
            return total
        except (ValidationError, FloatingPointError, OverflowError):
            return 1e6

    x0 = np.array([Q[k, l] for k, l in off])
    f0 = objective(x0)
    res = minimize(objective, x0, method="Powell",
                   bounds=[(0.0, 50.0)] * len(off),
                   options={"maxfev": config.q_evals, "xtol": 1e-10, "ftol": 1e-14})
    if float(res.fun) < f0:
        return build(res.x)
    return Q


def _total_objective(panel, params, lgd, chain, gamma, X, config) -> float:
    total = 0.0
    for j, name in enumerate(panel.sovereigns):
        pricers = _pricers(params[name], lgd[name], chain, panel.maturities, config.step)
        total += float(_cell_errors(panel.spreads[:, j], pricers, gamma[:, j], X).sum())
    return total


def _error_metrics(panel, params, lgd, chain, gamma, X, config):
    rmse, mape = {}, {}
    for j, name in enumerate(panel.sovereigns):
        pricers = _pricers(params[name], lgd[name], chain, panel.maturities, config.step)
        model = _model_spreads(pricers, gamma[:, j], X)
        obs = panel.spreads[:, j]
        mask = np.isfinite(obs)
        diff = (obs - model)[mask]
        rmse[name] = float(np.sqrt((diff**2).mean())) / BP
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs((obs - model) / obs)[mask]
        mape[name] = float(np.nanmean(np.where(np.isfinite(rel), rel, np.nan)))
    return rmse, mape


def run_algorithm1(panel: CdsPanel, lgd: dict[str, LgdSpec], config: CalibConfig = CalibConfig()) -> CalibrationResult:
    """Full calibration loop: trajectories, volatilities, regime path, generator, parameters.

    Initialization clusters dates into regimes and backs hazards out of short
    spreads; each outer pass re-fits hazards per date, re-estimates
    volatilities, re-assigns regimes, re-estimates the generator (optionally
    refining it on the pricing objective) and re-fits the CIR parameters.
    Stops when the objective falls below epsilon, stalls, or the iteration cap
    is reached; a final parameter-only refinement follows.
    """
    for name in panel.sovereigns:
        if name not in lgd:
            raise ValidationError(f"missing LGD specification for {name!r}")
    K = config.K
    eps = config.epsilon(panel.n_cells)
    X, gamma = kmeans_init(panel, lgd, K=K, seed=config.seed)
    sigma = {}
    params = {}
    for j, name in enumerate(panel.sovereigns):
        sigma[name] = estimate_sigma(gamma[:, j], panel.dates)
        # start each state's level at its cluster's mean backed-out hazard
        mu0 = np.empty(K)
        for k in range(K):
            sel = X == k + 1
            mu0[k] = float(gamma[sel, j].mean()) if np.any(sel) else float(gamma[:, j].mean())
        params[name] = SovereignParams(
            id=name, kappa=1.0, mu=np.maximum(mu0, 1e-4),
            sigma=sigma[name], omega=0.0, measure=RISK_NEUTRAL,
        )
    Q = mle_generator(X, panel.dates, K)
    chain = RegimeChain(Q=Q)
    # initial parameter fit: global search once per sovereign
    for j, name in enumerate(panel.sovereigns):
        params[name], _ = fit_theta(panel.spreads[:, j], params[name], lgd[name], chain,
                                    panel.maturities, X, config,
                                    stage="global", rng_seed=config.seed + j)
        pricers = _pricers(params[name], lgd[name], chain, panel.maturities, config.step)
        gamma[:, j] = fit_gamma_per_date(panel.spreads[:, j], pricers, X,
                                         gamma[:, j], config.gamma_max)
    log = [_total_objective(panel, params, lgd, chain, gamma, X, config)]
    flags = []
    converged = log[-1] < eps

    for it in range(config.max_iter):
        if converged:
            break
        # hazard trajectories and volatilities
        for j, name in enumerate(panel.sovereigns):
            pricers = _pricers(params[name], lgd[name], chain, panel.maturities, config.step)
            gamma[:, j] = fit_gamma_per_date(panel.spreads[:, j], pricers, X,
                                             gamma[:, j], config.gamma_max)
            new_sig = estimate_sigma(gamma[:, j], panel.dates)
            cand = replace(params[name], sigma=new_sig)
            old_obj = float(_cell_errors(panel.spreads[:, j], pricers, gamma[:, j], X).sum())
            cand_pricers = _pricers(cand, lgd[name], chain, panel.maturities, config.step)
            if float(_cell_errors(panel.spreads[:, j], cand_pricers, gamma[:, j], X).sum()) <= old_obj:
                sigma[name] = new_sig
                params[name] = cand
        # regime path: score each candidate state by the best hazard level it
        # can achieve per date, so the incumbent state has no head start
        errs = np.zeros((panel.M, K))
        gamma_cand = np.empty((panel.M, panel.J, K))
        for x in range(1, K + 1):
            Xc = np.full(panel.M, x, dtype=np.int64)
            for j, name in enumerate(panel.sovereigns):
                pricers = _pricers(params[name], lgd[name], chain, panel.maturities, config.step)
                g_x = fit_gamma_per_date(panel.spreads[:, j], pricers, Xc,
                                         gamma[:, j], config.gamma_max)
                gamma_cand[:, j, x - 1] = g_x
                errs[:, x - 1] += _cell_errors(panel.spreads[:, j], pricers, g_x, Xc)
        X_new = fit_chain_per_date(errs, X)
        gamma = gamma_cand[np.arange(panel.M), :, X_new - 1]
        # generator
        Q_new = mle_generator(X_new, panel.dates, K)
        if _total_objective(panel, params, lgd, RegimeChain(Q=Q_new), gamma, X_new, config) \
                <= _total_objective(panel, params, lgd, chain, gamma, X_new, config):
            Q = Q_new
        if config.refine_q:
            Q = _refine_generator(panel, params, lgd, Q, gamma, X_new, config)
        X = X_new
        chain = RegimeChain(Q=Q)
        # parameters: local refinement, then re-sync the trajectories
        for j, name in enumerate(panel.sovereigns):
            params[name], _ = fit_theta(panel.spreads[:, j], params[name], lgd[name], chain,
                                        panel.maturities, X, config,
                                        stage="local", rng_seed=config.seed + 100 + j)
            pricers = _pricers(params[name], lgd[name], chain, panel.maturities, config.step)
            gamma[:, j] = fit_gamma_per_date(panel.spreads[:, j], pricers, X,
                                             gamma[:, j], config.gamma_max)
        log.append(_total_objective(panel, params, lgd, chain, gamma, X, config))
        if log[-1] < eps:
            converged = True
        if len(log) >= 2 and log[-2] - log[-1] < 1e-16:
            flags.append(f"stalled at iteration {it + 1}")
            break
    else:
        if not converged:
            flags.append("iteration cap reached")

    # final refinement: parameters with the regime path frozen
    big = replace(config, local_evals=2 * config.local_evals)
    for j, name in enumerate(panel.sovereigns):
        params[name], _ = fit_theta(panel.spreads[:, j], params[name], lgd[name], chain,
                                    panel.maturities, X, big,
                                    stage="local", rng_seed=config.seed + 200 + j)
        pricers = _pricers(params[name], lgd[name], chain, panel.maturities, config.step)
        gamma[:, j] = fit_gamma_per_date(panel.spreads[:, j], pricers, X,
                                         gamma[:, j], config.gamma_max)
    log.append(_total_objective(panel, params, lgd, chain, gamma, X, config))
    converged = log[-1] < eps
    rmse, mape = _error_metrics(panel, params, lgd, chain, gamma, X, config)
    return CalibrationResult(
        params=params, sigma=sigma, Q=Q, gamma=gamma, X=X,
        objective=log[-1], objective_log=log, rmse_bp=rmse, mape=mape,
        converged=converged, flags=flags,
    )
