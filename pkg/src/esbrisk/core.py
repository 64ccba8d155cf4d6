"""Domain types and deterministic payoff functions.

All value objects are immutable after construction and safe to share across
threads.  Randomness is always drawn from a caller-supplied
``numpy.random.Generator``; there is no hidden global RNG state.

Conventions: rates and intensities are annualized, dates are year fractions
from the run epoch (ACT/365 fixed).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

RISK_NEUTRAL = "risk-neutral"
REAL_WORLD = "real-world"

#: tolerance for simplex / generator-row sums
_SUM_TOL = 1e-12


@dataclass(frozen=True)
class RegimeChain:
    """Finite-state Markov chain with generator matrix Q (intensities in 1/years)."""

    Q: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
            raise ValidationError(f"generator must be a square K x K matrix, got {Q.shape}")
        off = Q[~np.eye(Q.shape[0], dtype=bool)]
        if np.any(off < 0):
            raise ValidationError("off-diagonal generator entries must be >= 0")
        if np.any(np.abs(Q.sum(axis=1)) > 1e-12 * max(1.0, np.abs(Q).max())):
            raise ValidationError("generator rows must sum to zero")
        object.__setattr__(self, "Q", Q)
        if self.labels and len(self.labels) != Q.shape[0]:
            raise ValidationError("label count must match number of states")

    @property
    def K(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class SovereignParams:
    """Per-sovereign CIR hazard-rate parameters under a given measure.

    ``mu`` maps the regime state (1-based) to the mean-reversion level; it is
    stored as an array of length K.
    """

    id: str
    kappa: float
    mu: np.ndarray
    sigma: float
    omega: float = 0.0
    measure: str = RISK_NEUTRAL

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if self.kappa <= 0:
            raise ValidationError(f"{self.id}: kappa must be > 0")
        if self.sigma <= 0:
            raise ValidationError(f"{self.id}: sigma must be > 0")
        if np.any(mu <= 0):
            raise ValidationError(f"{self.id}: mu(k) must be > 0 for all states")
        if self.omega < 0:
            raise ValidationError(f"{self.id}: omega must be >= 0")
        if self.measure not in (RISK_NEUTRAL, REAL_WORLD):
            raise ValidationError(f"{self.id}: unknown measure tag {self.measure!r}")
        object.__setattr__(self, "mu", mu)

    def mu_of(self, state: int) -> float:
        """Mean-reversion level in regime ``state`` (1-based)."""
        return float(self.mu[state - 1])


@dataclass(frozen=True)
class LgdSpec:
    """Beta LGD law parameterized by per-state mean and concentration nu.

    Shape parameters are a = mean * nu and b = (1 - mean) * nu.  A state mean
    of exactly one degenerates the beta to a point mass at 1.
    """

    mean: np.ndarray
    concentration: float = 1.5

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if self.concentration <= 0:
            raise ValidationError("LGD concentration must be > 0")
        if np.any(mean <= 0) or np.any(mean > 1):
            raise ValidationError("LGD state means must lie in (0, 1]")
        object.__setattr__(self, "mean", mean)

    def mean_of(self, state: int) -> float:
        return float(self.mean[state - 1])

    def sample(self, state: int | np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw LGD given regime state(s); vectorized over an array of states."""
        state = np.asarray(state)
        if np.any(state < 1) or np.any(state > len(self.mean)):
            raise ValidationError("invalid regime state for LGD draw")
        m = self.mean[state - 1]
        out = np.empty(m.shape)
        degenerate = m >= 1.0
        out[degenerate] = 1.0
        nd = ~degenerate
        if np.any(nd):
            a = m[nd] * self.concentration
            b = (1.0 - m[nd]) * self.concentration
            out[nd] = rng.beta(a, b)
        return out if out.shape else float(out)


def lgd_sample(spec: LgdSpec, state: int, rng: np.random.Generator) -> float:
    """Single LGD draw for one regime state."""
    return float(np.asarray(spec.sample(state, rng)))


@dataclass(frozen=True)
class Portfolio:
    """Ordered sovereign pool with simplex weights and per-name LGD laws.

    All sovereigns share the single ``chain``.
    """

    sovereigns: tuple[SovereignParams, ...]
    weights: np.ndarray
    lgd: tuple[LgdSpec, ...]
    chain: RegimeChain

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.sovereigns) != w.size or len(self.lgd) != w.size:
            raise ValidationError("sovereigns, weights and lgd specs must align")
        if np.any(w <= 0):
            raise ValidationError("portfolio weights must be > 0")
        if abs(w.sum() - 1.0) > _SUM_TOL * w.size:
            raise ValidationError(f"weights must sum to 1, got {w.sum()!r}")
        K = self.chain.K
        for p in self.sovereigns:
            if p.mu.size != K:
                raise ValidationError(f"{p.id}: mu ladder has {p.mu.size} levels, chain has {K} states")
        for g in self.lgd:
            if g.mean.size != K:
                raise ValidationError("LGD mean vector must have one entry per state")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sovereigns", tuple(self.sovereigns))
        object.__setattr__(self, "lgd", tuple(self.lgd))

    @property
    def J(self) -> int:
        return len(self.sovereigns)

    def ids(self) -> list[str]:
        return [p.id for p in self.sovereigns]


@dataclass(frozen=True)
class PaymentSchedule:
    """Strictly increasing payment grid 0 = t_0 < ... < t_N = T (years)."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.size < 2 or t[0] != 0.0:
            raise ValidationError("schedule needs t_0 = 0 and at least one payment date")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("payment dates must be strictly increasing")
        object.__setattr__(self, "t", t)

    @classmethod
    def quarterly(cls, maturity: float = 5.0) -> "PaymentSchedule":
        n = int(round(maturity * 4))
        if abs(n / 4.0 - maturity) > 1e-12 or n < 1:
            raise ValidationError("quarterly schedule needs a maturity in whole quarters")
        return cls(np.linspace(0.0, maturity, n + 1))

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def N(self) -> int:
        return self.t.size - 1

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.t)


@dataclass(frozen=True)
class MarketState:
    """Snapshot of the market: regime, hazard vector, accumulated losses."""

    date: float
    X: int
    gamma: np.ndarray
    loss: np.ndarray = None

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        loss = np.zeros_like(gamma) if self.loss is None else np.atleast_1d(np.asarray(self.loss, dtype=float))
        if self.X < 1:
            raise ValidationError("regime state must be >= 1")
        if np.any(gamma < 0):
            raise ValidationError("hazard rates must be >= 0")
        if loss.shape != gamma.shape or np.any(loss < 0) or np.any(loss > 1):
            raise ValidationError("loss vector must lie in [0,1]^J and match gamma")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "loss", loss)

    @property
    def J(self) -> int:
        return self.gamma.size


@dataclass(frozen=True)
class TrancheSpec:
    """Senior/junior split at attachment point kappa."""

    attachment: float
    maturity: float = 5.0
    normalized: bool = True

    def __post_init__(self):
        if not 0.0 < self.attachment < 1.0:
            raise ValidationError("attachment point must lie in (0,1)")
        if self.maturity <= 0:
            raise ValidationError("maturity must be > 0")


@dataclass(frozen=True)
class DiscountCurve:
    """Flat risk-free short rate."""

    rate: float = 0.0

    def __post_init__(self):
        if self.rate < 0:
            raise ValidationError("short rate must be >= 0")

    def df(self, t: float, s) -> np.ndarray | float:
        """Discount factor at t for a payoff due at s >= t."""
        return np.exp(-self.rate * (np.asarray(s, dtype=float) - t))


def portfolio_loss(loss_vector, weights) -> float:
    """Weighted portfolio loss sum_j w_j L_j."""
    L = np.asarray(loss_vector, dtype=float)
    w = np.asarray(weights, dtype=float)
    if L.shape[-1] != w.shape[-1]:
        raise ValidationError("loss vector and weights dimensions differ")
    return L @ w


def esb_payoff(loss: float, tranche: TrancheSpec):
    """Senior tranche payoff (1 - L) - (kappa - L)^+ at maturity."""
    L = np.asarray(loss, dtype=float)
    k = tranche.attachment
    return (1.0 - L) - np.maximum(k - L, 0.0)


def ejb_payoff(loss: float, tranche: TrancheSpec):
    """Junior tranche payoff (kappa - L)^+ at maturity."""
    L = np.asarray(loss, dtype=float)
    return np.maximum(tranche.attachment - L, 0.0)
