"""EM estimation of real-world hazard dynamics from calibrated trajectories.

The regime chain is hidden; observations are the increments of the calibrated
hazard levels on a uniform (weekly) grid.  Increment densities use the
Gaussian (Euler-moment) approximation of the square-root diffusion transition
and the chain is discretized with its exact one-step transition matrix.  The
E-step is a normalized forward-backward pass; the M-step solves a weighted
least-squares problem for the drift parameters and improves the generator on
the expected transition counts directly, so the observed-data log-likelihood
never decreases.  Volatilities are held fixed at their quadratic-variation
estimates throughout.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from .core import REAL_WORLD, RegimeChain, SovereignParams
from .errors import NumericalError, ValidationError
from .calibration import estimate_sigma

#: floor on the hazard level entering transition variances
GAMMA_FLOOR = 1e-8


@dataclass(frozen=True)
class FilterOutput:
    """Forward-backward output: per-date state probabilities and the log-likelihood.

    ``xi`` accumulates expected one-step transition counts summed over dates,
    which is all the generator update needs.
    """

    filtered: np.ndarray  # (M, K)
    smoothed: np.ndarray  # (M, K)
    loglik: float
    xi: np.ndarray  # (K, K)


def estimate_sigma_qv(gamma: np.ndarray, dates: np.ndarray, factors=None,
                      sovereigns=None) -> np.ndarray:
    """Quadratic-variation volatilities per sovereign with optional upscaling.

    ``factors`` maps sovereign code to a robustification multiplier (default
    1.0); trajectories are the columns of ``gamma``.
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    J = gamma.shape[1]
    out = np.empty(J)
    for j in range(J):
        f = 1.0
        if factors and sovereigns is not None:
            f = float(factors.get(sovereigns[j], 1.0))
        out[j] = f * estimate_sigma(gamma[:, j], dates)
    return out


def _log_emissions(gamma, dt, params) -> np.ndarray:
    """log b_m(k): joint Gaussian log-density of all hazard increments, (M, K).

    The emission at date m belongs to the state at m (it drives the increment
    to m+1); the final date has no emission (log b = 0).
    """
    M, J = gamma.shape
    K = params[0].mu.size
    logb = np.zeros((M, K))
    for j, p in enumerate(params):
        g = gamma[:-1, j]
        dg = np.diff(gamma[:, j])
        var = p.sigma**2 * np.maximum(g, GAMMA_FLOOR) * dt
        for k in range(K):
            mean = p.kappa * (p.mu[k] - g) * dt
            logb[:-1, k] += -0.5 * np.log(2.0 * np.pi * var) - 0.5 * (dg - mean) ** 2 / var
    return logb


def filter_smooth(gamma: np.ndarray, params, chain: RegimeChain, dt: float) -> FilterOutput:
    """Normalized forward-backward pass over the hidden regime chain.

    ``gamma`` has shape (M, J) on a uniform grid with spacing ``dt``; the
    chain is discretized by its exact one-step transition matrix.  All
    probability vectors are exact simplex vectors; scaling keeps the recursion
    in safe floating-point range (densities enter through per-date log
    normalization).
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    M = gamma.shape[0]
    if M < 2:
        raise ValidationError("need at least two observation dates")
    if len(params) != gamma.shape[1]:
        raise ValidationError("one parameter set per hazard column required")
    K = chain.K
    P = expm(chain.Q * dt)
    P = np.clip(P, 1e-300, None)
    logb = _log_emissions(gamma, dt, params)
    b = np.empty_like(logb)
    shift = logb.max(axis=1)
    if not np.all(np.isfinite(shift)):
        bad = int(np.argmax(~np.isfinite(shift)))
        raise NumericalError(f"all emission densities underflow at date index {bad}")
    b[:] = np.exp(logb - shift[:, None])

    filtered = np.empty((M, K))
    c = np.empty(M)
    alpha = np.full(K, 1.0 / K) * b[0]
    c[0] = alpha.sum()
    filtered[0] = alpha / c[0]
    for m in range(1, M):
        alpha = (filtered[m - 1] @ P) * b[m]
        c[m] = alpha.sum()
        if c[m] <= 0 or not np.isfinite(c[m]):
            raise NumericalError(f"zero filtering likelihood at date index {m}")
        filtered[m] = alpha / c[m]
    loglik = float(np.log(c).sum() + shift.sum())

    smoothed = np.empty((M, K))
    xi = np.zeros((K, K))
    beta = np.ones(K)
    smoothed[M - 1] = filtered[M - 1]
    for m in range(M - 2, -1, -1):
        w = b[m + 1] * beta / c[m + 1]
        pair = filtered[m][:, None] * P * w[None, :]
        xi += pair
        beta = P @ w
        sm = filtered[m] * beta
        smoothed[m] = sm / sm.sum()
    return FilterOutput(filtered=filtered, smoothed=smoothed, loglik=loglik, xi=xi)


def _update_drift(gamma, dt, params, smoothed):
    """Exact M-step for (kappa, mu ladder) per sovereign: weighted least squares.

    Model: dgamma/dt = b_k - c gamma with b_k = kappa mu(k), c = kappa; the
    weights are smoothed state probabilities over Gaussian increment
    precisions.  States with negligible smoothed mass keep their previous
    level.
    """
    K = params[0].mu.size
    W = smoothed[:-1]  # (M-1, K)
    occupied = W.sum(axis=0) > 1e-10
    new_params = []
    for j, p in enumerate(params):
        g = gamma[:-1, j]
        y = np.diff(gamma[:, j]) / dt
        prec = W / (p.sigma**2 * np.maximum(g, GAMMA_FLOOR) / dt)[:, None]  # (M-1, K)
        idx = np.flatnonzero(occupied)
        n = idx.size
        A = np.zeros((n + 1, n + 1))
        rhs = np.zeros(n + 1)
        for a, k in enumerate(idx):
            w = prec[:, k]
            A[a, a] = w.sum()
            A[a, n] = -(w * g).sum()
            A[n, a] = A[a, n]
            rhs[a] = (w * y).sum()
        wall = prec[:, idx].sum(axis=1)
        A[n, n] = (wall * g * g).sum()
        rhs[n] = -(wall * g * y).sum()
        try:
            sol = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            warnings.warn(f"singular drift regression for {p.id}; parameters frozen")
            new_params.append(p)
            continue
        c = sol[n]
        if c <= 0:
            warnings.warn(f"nonpositive mean-reversion speed for {p.id}; parameters frozen")
            new_params.append(p)
            continue
        mu = p.mu.copy()
        mu[idx] = np.maximum(sol[:n] / c, 1e-10)
        if not occupied.all():
            warnings.warn(f"states {list(np.flatnonzero(~occupied) + 1)} unoccupied; levels frozen for {p.id}")
        new_params.append(replace(p, kappa=float(c), mu=mu))
    return new_params


def _update_generator(xi: np.ndarray, Q: np.ndarray, dt: float, smoothed: np.ndarray) -> np.ndarray:
    """Generator update maximizing the expected transition-count likelihood.

    Starts from the jump-count/occupation-time estimate and improves the
    discrete criterion sum_kl xi_kl ln [expm(Q dt)]_kl; the incumbent is kept
    whenever the search does not beat it, which preserves EM monotonicity.
    """
    K = Q.shape[0]
    occ = smoothed[:-1].sum(axis=0) * dt
    Q0 = np.zeros((K, K))
    for k in range(K):
        if occ[k] > 0:
            Q0[k] = xi[k] / occ[k]
    np.fill_diagonal(Q0, 0.0)
    Q0[np.arange(K), np.arange(K)] = -Q0.sum(axis=1)
    off = [(k, l) for k in range(K) for l in range(K) if k != l]

    def build(v):
        M = np.zeros((K, K))
        for (k, l), x in zip(off, v):
            M[k, l] = max(x, 0.0)
        M[np.arange(K), np.arange(K)] = -M.sum(axis=1)
        return M

    def crit(Qc):
        P = np.clip(expm(Qc * dt), 1e-300, None)
        return float((xi * np.log(P)).sum())

    def neg(v):
        return -crit(build(v))

    starts = [Q, Q0]
    best_Q, best_val = None, -np.inf
    for Qs in starts:
        v0 = np.array([max(Qs[k, l], 0.0) for k, l in off])
        res = minimize(neg, v0, method="L-BFGS-B",
                       bounds=[(0.0, 200.0)] * len(off), options={"maxiter": 200})
        cand = build(res.x)
        if -res.fun > best_val:
            best_Q, best_val = cand, -res.fun
    if crit(Q) >= best_val:
        return Q
    return best_Q


@dataclass
class EMResult:
    """Fitted real-world parameters with the fit diagnostics."""

    params: list[SovereignParams]
    chain: RegimeChain
    logliks: list = field(default_factory=list)
    filter_output: FilterOutput | None = None
    converged: bool = False


def em_step(gamma, params, chain: RegimeChain, dt: float):
    """One EM iteration: E-step filtering, M-step drift and generator updates."""
    fo = filter_smooth(gamma, params, chain, dt)
    new_params = _update_drift(np.atleast_2d(np.asarray(gamma, dtype=float)), dt, params, fo.smoothed)
    Q_new = _update_generator(fo.xi, chain.Q, dt, fo.smoothed)
    return new_params, RegimeChain(Q=Q_new, labels=chain.labels), fo


def run_em(
    gamma: np.ndarray,
    init_params,
    init_chain: RegimeChain,
    dt: float = 7.0 / 365.0,
    max_iter: int = 200,
    tol: float = 1e-8,
) -> EMResult:
    """Iterate EM to convergence of the observed-data log-likelihood.

    Parameters are tagged as real-world estimates on output.  Stops when the
    relative log-likelihood improvement drops below ``tol``.
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    params = [replace(p, omega=0.0, measure=REAL_WORLD) for p in init_params]
    chain = init_chain
    logliks = []
    fo = None
    converged = False
    for _ in range(max_iter):
        params_new, chain_new, fo = em_step(gamma, params, chain, dt)
        logliks.append(fo.loglik)
        if len(logliks) >= 2:
            prev = logliks[-2]
            if logliks[-1] - prev < tol * max(1.0, abs(prev)):
                params, chain = params_new, chain_new
                converged = True
                break
        params, chain = params_new, chain_new
    final = filter_smooth(gamma, params, chain, dt)
    logliks.append(final.loglik)
    return EMResult(params=params, chain=chain, logliks=logliks,
                    filter_output=final, converged=converged)
