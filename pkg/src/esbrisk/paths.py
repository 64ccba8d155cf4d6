"""Path simulation: regime chain, CIR hazards, doubly stochastic defaults.

Two chain samplers are provided: an exact jump-time simulation for single
paths and a grid skeleton sampler (transition matrix expm(Q dt) per step,
exact in distribution at the grid dates) used by the vectorized Monte Carlo
engines.  Hazards use a full-truncation Euler scheme: the positive part of
gamma enters both drift and diffusion, so trajectories may not satisfy the
Feller condition and still remain well defined.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .core import MarketState, PaymentSchedule, Portfolio, RegimeChain, SovereignParams
from .errors import NumericalError, ValidationError

#: default Euler step (years) for hazard-rate discretization
DEFAULT_EULER_STEP = 1.0 / 1000.0


@dataclass(frozen=True)
class ChainPath:
    """Exact chain trajectory: jump times (starting at 0) and visited states."""

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.states[np.clip(idx, 0, self.states.size - 1)]


def simulate_chain(chain: RegimeChain, X0: int, T: float, rng: np.random.Generator) -> ChainPath:
    """Exact simulation via exponential holding times and embedded jump chain."""
    if not 1 <= X0 <= chain.K:
        raise ValidationError("initial state outside chain state space")
    Q = chain.Q
    times = [0.0]
    states = [X0]
    t, x = 0.0, X0
    while True:
        rate = -Q[x - 1, x - 1]
        if rate <= 0.0:  # absorbing state
            break
        t = t + rng.exponential(1.0 / rate)
        if t >= T:
            break
        probs = Q[x - 1].copy()
        probs[x - 1] = 0.0
        probs /= rate
        x = int(rng.choice(chain.K, p=probs)) + 1
        times.append(t)
        states.append(x)
    return ChainPath(times=np.array(times), states=np.array(states), horizon=T)


@lru_cache(maxsize=256)
def _cum_transition(q_key, dt: float) -> np.ndarray:
    Q = np.array(q_key)
    P = expm(Q * dt)
    P = np.clip(P, 0.0, None)
    P /= P.sum(axis=1, keepdims=True)
    return np.cumsum(P, axis=1)


def transition_matrix(chain: RegimeChain, dt: float) -> np.ndarray:
    """expm(Q dt), clipped and renormalized against round-off."""
    cum = _cum_transition(tuple(map(tuple, chain.Q)), float(dt))
    P = np.diff(np.concatenate([np.zeros((chain.K, 1)), cum], axis=1), axis=1)
    return P


def simulate_chain_grid(
    chain: RegimeChain, X0: int, grid: np.ndarray, rng: np.random.Generator, n_paths: int
) -> np.ndarray:
    """Chain states at the grid dates for many paths, shape (n_paths, len(grid)).

    Sampling the discrete skeleton from expm(Q dt) is exact in distribution at
    the grid dates.
    """
    if not 1 <= X0 <= chain.K:
        raise ValidationError("initial state outside chain state space")
    grid = np.asarray(grid, dtype=float)
    X = np.empty((n_paths, grid.size), dtype=np.int64)
    X[:, 0] = X0
    q_key = tuple(map(tuple, chain.Q))
    for m in range(grid.size - 1):
        dt = round(grid[m + 1] - grid[m], 12)
        cum = _cum_transition(q_key, dt)
        U = rng.random(n_paths)
        rows = cum[X[:, m] - 1]
        X[:, m + 1] = (U[:, None] > rows).sum(axis=1) + 1
    return X


def refine_schedule_grid(schedule: PaymentSchedule, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly refine each payment period so payment dates lie on the grid.

    Returns (grid, payment_index) where payment_index[n] locates schedule.t[n].
    """
    pieces = [np.array([0.0])]
    idx = [0]
    for n in range(schedule.N):
        t0, t1 = schedule.t[n], schedule.t[n + 1]
        sub = max(1, int(np.ceil((t1 - t0) / dt - 1e-12)))
        pieces.append(np.linspace(t0, t1, sub + 1)[1:])
        idx.append(idx[-1] + sub)
    return np.concatenate(pieces), np.array(idx)


def simulate_hazards(
    params: SovereignParams,
    chain_states: np.ndarray,
    grid: np.ndarray,
    gamma0: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Full-truncation Euler trajectories of one sovereign's hazard rate.

    ``chain_states`` holds the regime at each grid date, shape (n_paths,
    len(grid)); the returned trajectories have the same shape.
    """
    grid = np.asarray(grid, dtype=float)
    if gamma0 < 0:
        raise ValidationError("gamma0 must be >= 0")
    chain_states = np.atleast_2d(chain_states)
    n_paths, n = chain_states.shape
    if n != grid.size:
        raise ValidationError("chain states and grid lengths differ")
    g = np.full(n_paths, float(gamma0))
    out = np.empty((n_paths, n))
    out[:, 0] = g
    for m in range(n - 1):
        dt = grid[m + 1] - grid[m]
        gp = np.maximum(g, 0.0)
        level = params.mu[chain_states[:, m] - 1] * np.exp(params.omega * grid[m])
        g = g + params.kappa * (level - gp) * dt + params.sigma * np.sqrt(gp * dt) * rng.standard_normal(n_paths)
        out[:, m + 1] = g
    if not np.all(np.isfinite(out)):
        raise NumericalError("hazard simulation produced non-finite values")
    return np.maximum(out, 0.0)


def sample_defaults(
    hazard_paths: np.ndarray,
    grid: np.ndarray,
    schedule: PaymentSchedule,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Doubly stochastic default times from hazard trajectories.

    ``hazard_paths`` has shape (n_paths, len(grid)).  Returns (default_time,
    period): default_time is inf where the integrated hazard never crosses the
    unit-exponential threshold before T, and period is the 1-based payment
    bucket (t_{n-1}, t_n] containing the default (0 for no default).
    """
    grid = np.asarray(grid, dtype=float)
    H = np.atleast_2d(hazard_paths)
    cum = np.concatenate(
        [np.zeros((H.shape[0], 1)), np.cumsum(0.5 * (H[:, 1:] + H[:, :-1]) * np.diff(grid), axis=1)],
        axis=1,
    )
    E = rng.exponential(size=H.shape[0])
    crossed = cum >= E[:, None]
    any_cross = crossed.any(axis=1)
    first = np.argmax(crossed, axis=1)
    tau = np.where(any_cross, grid[first], np.inf)
    period = np.searchsorted(schedule.t, np.minimum(tau, schedule.T), side="left")
    period = np.where(any_cross & (tau <= schedule.T), np.clip(period, 1, schedule.N), 0)
    return tau, period


@dataclass(frozen=True)
class LossSample:
    """Monte Carlo sample of terminal per-name and portfolio losses."""

    losses: np.ndarray  # (n_paths, J) realized per-name losses at T
    portfolio: np.ndarray  # (n_paths,) weighted portfolio loss L_T
    default_period: np.ndarray  # (n_paths, J), 0 = survived


def simulate_portfolio_losses(
    state: MarketState,
    portfolio: Portfolio,
    schedule: PaymentSchedule,
    n_paths: int,
    rng: np.random.Generator,
    dt: float = 1.0 / 500.0,
    independent_chains: bool = False,
) -> LossSample:
    """Simulate (X, gamma, defaults, LGDs) and book losses per payment period.

    A default in (t_{n-1}, t_n] books its LGD draw at t_n using the regime
    X_{t_n}.  Sovereigns with a pre-seeded loss in ``state.loss`` are treated
    as already defaulted and keep that loss.  ``independent_chains`` replaces
    the common chain by i.i.d. per-sovereign copies with the same marginal law
    (used for dependence diagnostics).

    Memory stays O(n_paths * J): only running integrated hazards and the
    per-period bookkeeping are kept.
    """
    if n_paths < 1000:
        raise ValidationError("need at least 10^3 Monte Carlo paths")
    J = portfolio.J
    if state.J != J:
        raise ValidationError("market state dimension does not match portfolio")
    grid, pay_idx = refine_schedule_grid(schedule, dt)
    alive = state.loss == 0.0
    chains = []
    if independent_chains:
        for _ in range(J):
            chains.append(simulate_chain_grid(portfolio.chain, state.X, grid, rng, n_paths))
        X_common = chains[0]
    else:
        X_common = simulate_chain_grid(portfolio.chain, state.X, grid, rng, n_paths)

    kappa = np.array([p.kappa for p in portfolio.sovereigns])
    sigma = np.array([p.sigma for p in portfolio.sovereigns])
    omega = np.array([p.omega for p in portfolio.sovereigns])
    mu = np.stack([p.mu for p in portfolio.sovereigns])  # (J, K)

    g = np.tile(state.gamma, (n_paths, 1))
    lam = np.zeros((n_paths, J))
    lam_at_pay = np.empty((n_paths, J, schedule.N + 1))
    lam_at_pay[:, :, 0] = 0.0
    X_at_pay = np.empty((n_paths, J, schedule.N + 1), dtype=np.int64)
    X_at_pay[:, :, 0] = state.X
    next_pay = 1
    for m in range(grid.size - 1):
        h = grid[m + 1] - grid[m]
        # mean-reversion level per (path, name)
        if independent_chains:
            states_m = np.stack([c[:, m] for c in chains], axis=1)
            lev = mu[np.arange(J)[None, :], states_m - 1]
        else:
            lev = mu[:, X_common[:, m] - 1].T
        lev = lev * np.exp(omega[None, :] * grid[m])
        gp = np.maximum(g, 0.0)
        g_new = g + kappa * (lev - gp) * h + sigma * np.sqrt(gp * h) * rng.standard_normal((n_paths, J))
        lam += 0.5 * (gp + np.maximum(g_new, 0.0)) * h
        g = g_new
        if next_pay <= schedule.N and m + 1 == pay_idx[next_pay]:
            lam_at_pay[:, :, next_pay] = lam
            if independent_chains:
                X_at_pay[:, :, next_pay] = np.stack([c[:, m + 1] for c in chains], axis=1)
            else:
                X_at_pay[:, :, next_pay] = X_common[:, m + 1][:, None]
            next_pay += 1
    if not np.all(np.isfinite(lam)):
        raise NumericalError("hazard simulation produced non-finite values")

    E = rng.exponential(size=(n_paths, J))
    crossed = lam_at_pay >= E[:, :, None]
    defaulted = crossed[:, :, -1]
    period = np.argmax(crossed, axis=2)  # first payment index with crossing
    period = np.where(defaulted, period, 0)

    losses = np.zeros((n_paths, J))
    for j in range(J):
        if not alive[j]:
            losses[:, j] = state.loss[j]
            continue
        dflt = defaulted[:, j]
        if np.any(dflt):
            book_states = X_at_pay[dflt, j, period[dflt, j]]
            losses[dflt, j] = portfolio.lgd[j].sample(book_states, rng)
    period = np.where(alive[None, :], period, 0)
    return LossSample(losses=losses, portfolio=losses @ portfolio.weights, default_period=period)
