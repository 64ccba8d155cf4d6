"""Extended Laplace transform for Markov modulated CIR hazard rates.

The transform E[xi(X_s) exp(-int_t^s a'gamma) exp(-u'gamma_s) | F_t] factors
into per-sovereign Riccati coefficients beta_j (closed form) and a K-dimensional
backward linear ODE over regime states, solved here with a fixed-step 4th-order
Runge-Kutta scheme.

All time arguments are anchored at the valuation date: tau = s - t is the time
to horizon and the exponential trend factor exp(omega * t) counts calendar time
from the valuation date.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import MarketState, RegimeChain, SovereignParams
from .errors import NumericalError, ValidationError

#: default ODE step (years); <= one calendar day
DEFAULT_STEP = 1.0 / 365.0

#: exponent magnitude beyond which the transform refuses to exponentiate
EXP_CAP = 700.0


@dataclass(frozen=True)
class TransformRequest:
    """Inputs of the transform: horizon, hazard loadings and terminal weights.

    ``a`` weights the integrated hazards, ``u`` the terminal hazards; ``xi``
    gives the terminal payoff per regime state.
    """

    t: float
    s: float
    a: np.ndarray
    u: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if not 0.0 <= self.t < self.s:
            raise ValidationError("need 0 <= t < s")
        if a.shape != u.shape:
            raise ValidationError("a and u must have the same length J")
        if np.any(a < 0) or np.any(u < 0):
            raise ValidationError("a and u must be componentwise >= 0")
        if not np.all(np.isfinite(xi)):
            raise ValidationError("terminal weights xi must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "xi", xi)


def riccati_beta(tau, u: float, a: float, kappa: float, sigma: float):
    """Closed-form solution of the CIR Riccati equation.

    Solves d beta/d tau = -kappa beta + (sigma^2/2) beta^2 - a with
    beta(0) = -u.  Vectorized over ``tau``; the result is <= 0 for a, u >= 0.
    """
    if kappa <= 0 or sigma <= 0:
        raise ValidationError("kappa and sigma must be > 0")
    if u < 0 or a < 0:
        raise ValidationError("u and a must be >= 0")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValidationError("tau must be >= 0")
    if u == 0.0 and a == 0.0:
        return np.zeros_like(tau)
    c = 0.5 * sigma**2
    rho = np.sqrt(kappa**2 + 2.0 * sigma**2 * a)
    lam_p = 0.5 * (-kappa + rho)
    lam_m = 0.5 * (-kappa - rho)
    A = c * u - lam_m
    B = lam_p - c * u
    decay = np.exp(-rho * tau)
    return -(A * lam_p + B * lam_m * decay) / (c * (A + B * decay))


def riccati_beta_integral(tau, a: float, kappa: float, sigma: float):
    """int_0^tau beta(s; u=0, a) ds in closed form; vectorized over ``tau``.

    Conditional on a regime trajectory, survival probabilities factor into
    exp(beta(tau) gamma_t) times exp of kappa mu(X) integrated against this
    primitive, which is why it is exposed separately.
    """
    if kappa <= 0 or sigma < 0 or a < 0:
        raise ValidationError("need kappa > 0, sigma >= 0, a >= 0")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValidationError("tau must be >= 0")
    if a == 0.0:
        return np.zeros_like(tau)
    if sigma == 0.0:
        # beta = -a (1 - e^{-kappa tau}) / kappa
        return -(a / kappa) * (tau - (1.0 - np.exp(-kappa * tau)) / kappa)
    rho = np.sqrt(kappa**2 + 2.0 * sigma**2 * a)
    num = 2.0 * rho
    den = (rho + kappa) * np.expm1(rho * tau) + 2.0 * rho
    return (2.0 / sigma**2) * (np.log(num) - np.log(den) + 0.5 * (kappa + rho) * tau)


def _beta_matrix(tau_nodes: np.ndarray, params: Sequence[SovereignParams], a, u) -> np.ndarray:
    """beta_j evaluated at every node; shape (J,) + tau_nodes.shape."""
    return np.stack(
        [riccati_beta(tau_nodes, float(u[j]), float(a[j]), p.kappa, p.sigma) for j, p in enumerate(params)]
    )


def _mu_bar(tau_nodes, betas, params: Sequence[SovereignParams], horizons):
    """Drift loadings mu_bar_k(s - tau) = sum_j e^{omega_j (s-tau)} kappa_j mu_j(k) beta_j(tau).

    ``tau_nodes`` has shape (H, M) of per-horizon node times, ``betas`` shape
    (J, H, M); returns (H, M, K).
    """
    H, M = tau_nodes.shape
    K = params[0].mu.size
    out = np.zeros((H, M, K))
    s_col = np.asarray(horizons, dtype=float)[:, None]
    for j, p in enumerate(params):
        trend = np.exp(p.omega * (s_col - tau_nodes)) if p.omega != 0.0 else 1.0
        out += (p.kappa * trend * betas[j])[:, :, None] * p.mu[None, None, :]
    return out


def chain_propagators(
    chain: RegimeChain,
    params: Sequence[SovereignParams],
    horizons,
    a,
    u,
    step: float = DEFAULT_STEP,
    n_steps: int | None = None,
) -> np.ndarray:
    """K x K propagators Phi(s) of the regime-state ODE, batched over horizons.

    For each horizon s, ``Phi[h] @ xi`` gives the state vector v(0, .) of the
    transform with terminal weights xi at horizon s.  Each horizon is
    integrated on its own uniform grid (shared step count, per-horizon step
    <= ``step``) with classical RK4.
    """
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    if np.any(horizons < 0):
        raise ValidationError("horizons must be >= 0")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    K = chain.K
    Q = chain.Q
    smax = horizons.max()
    if smax == 0.0:
        return np.broadcast_to(np.eye(K), (horizons.size, K, K)).copy()
    if n_steps is None:
        n_steps = max(1, int(np.ceil(smax / step)))
    H = horizons.size
    # per-horizon node times at full and half steps: shape (H, 2n+1)
    frac = np.linspace(0.0, 1.0, 2 * n_steps + 1)
    tau_nodes = horizons[:, None] * frac[None, :]
    betas = _beta_matrix(tau_nodes, params, a, u)
    D = _mu_bar(tau_nodes, betas, params, horizons)  # (H, 2n+1, K)

    W = np.broadcast_to(np.eye(K), (H, K, K)).copy()
    h_eff = horizons / n_steps  # per-horizon step, (H,)
    h_col = h_eff[:, None, None]
    for i in range(n_steps):
        D0 = D[:, 2 * i, :, None]
        Dh = D[:, 2 * i + 1, :, None]
        D1 = D[:, 2 * i + 2, :, None]
        k1 = D0 * W + Q @ W
        W2 = W + 0.5 * h_col * k1
        k2 = Dh * W2 + Q @ W2
        W3 = W + 0.5 * h_col * k2
        k3 = Dh * W3 + Q @ W3
        W4 = W + h_col * k3
        k4 = D1 * W4 + Q @ W4
        W = W + (h_col / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(W)):
        raise NumericalError("regime-state ODE produced non-finite values; reduce the step size")
    return W


@dataclass(frozen=True)
class TransformSolution:
    """Backward solution v(t, k) on a uniform calendar grid, v(s, .) = xi."""

    times: np.ndarray
    v: np.ndarray  # (n+1, K)
    betas: np.ndarray  # (J,) beta_j(s - t)
    value: float


def solve_v(
    request: TransformRequest,
    chain: RegimeChain,
    params: Sequence[SovereignParams],
    step: float = DEFAULT_STEP,
) -> TransformSolution:
    """Solve the backward regime-state ODE on [t, s], recording the trajectory.

    The terminal condition v(s) = xi is imposed exactly; the value field is
    v(t, .) summarized later by :func:`laplace_transform`.
    """
    tau_star = request.s - request.t
    n_steps = max(1, int(np.ceil(tau_star / step)))
    frac = np.linspace(0.0, 1.0, 2 * n_steps + 1)
    tau_nodes = (tau_star * frac)[None, :]
    betas = _beta_matrix(tau_nodes, params, request.a, request.u)
    D = _mu_bar(tau_nodes, betas, params, np.array([tau_star]))[0]  # (2n+1, K)
    Q = chain.Q
    h = tau_star / n_steps
    w = request.xi.astype(float).copy()
    traj = np.empty((n_steps + 1, chain.K))
    traj[0] = w
    for i in range(n_steps):
        D0 = D[2 * i]
        Dh = D[2 * i + 1]
        D1 = D[2 * i + 2]
        k1 = D0 * w + Q @ w
        k2 = Dh * (w + 0.5 * h * k1) + Q @ (w + 0.5 * h * k1)
        k3 = Dh * (w + 0.5 * h * k2) + Q @ (w + 0.5 * h * k2)
        k4 = D1 * (w + h * k3) + Q @ (w + h * k3)
        w = w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj[i + 1] = w
    if not np.all(np.isfinite(traj)):
        raise NumericalError("regime-state ODE produced non-finite values; reduce the step size")
    # traj is indexed by tau (time to horizon); calendar order reverses it
    times = request.s - tau_star * np.linspace(0.0, 1.0, n_steps + 1)[::-1]
    beta_at_t = np.array([riccati_beta(tau_star, float(request.u[j]), float(request.a[j]), p.kappa, p.sigma)
                          for j, p in enumerate(params)])
    return TransformSolution(times=times, v=traj[::-1].copy(), betas=beta_at_t, value=float("nan"))


def laplace_transform(
    state: MarketState,
    request: TransformRequest,
    chain: RegimeChain,
    params: Sequence[SovereignParams],
    step: float = DEFAULT_STEP,
) -> float:
    """Transform value v(t, X_t) * exp(beta(s-t, u)' gamma_t)."""
    if state.gamma.size != request.a.size or len(params) != request.a.size:
        raise ValidationError("state, request and parameter dimensions differ")
    if not (1 <= state.X <= chain.K):
        raise ValidationError("market state regime outside chain state space")
    tau_star = request.s - request.t
    phi = chain_propagators(chain, params, [tau_star], request.a, request.u, step=step)[0]
    v0 = phi @ request.xi
    beta_at = np.array([riccati_beta(tau_star, float(request.u[j]), float(request.a[j]), p.kappa, p.sigma)
                        for j, p in enumerate(params)])
    exponent = float(beta_at @ state.gamma)
    if abs(exponent) > EXP_CAP:
        raise NumericalError(f"transform exponent {exponent:.3g} exceeds the overflow cap")
    return float(v0[state.X - 1] * np.exp(exponent))
