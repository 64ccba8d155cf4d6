"""Model-independent worst-case default scenario and price bounds.

Given only the per-sovereign expected losses, the comonotonic scenario where
sovereigns default in strict order of credit quality (all LGDs equal to one)
minimizes the senior tranche value over every joint law consistent with those
marginals.  The scenario's distribution is discrete with J+1 atoms: the
"clusters" where the worst j names have defaulted.  This module builds that
distribution, evaluates exact tranche values on it, and constructs an
absorbing-regime dynamic model whose terminal default pattern approximates it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RegimeChain, SovereignParams
from .errors import ValidationError


@dataclass(frozen=True)
class WorstCaseDistribution:
    """Discrete comonotone law of the worst-case loss vector.

    ``ellbar`` holds the expected-loss constraints sorted nondecreasing (best
    credit quality first); ``order`` is the permutation applied to the input.
    ``atoms`` has shape (J+1, J): row i is the loss vector where the worst i
    names default; ``probs`` are the corresponding probabilities.
    """

    ellbar: np.ndarray
    atoms: np.ndarray
    probs: np.ndarray
    order: np.ndarray

    @property
    def J(self) -> int:
        return self.ellbar.size

    def marginal_means(self) -> np.ndarray:
        """E[L*_j] in sorted order; equals ellbar by construction."""
        return self.probs @ self.atoms


def build_worst_case(ellbar) -> WorstCaseDistribution:
    """Worst-case distribution from expected-loss constraints.

    The atom where all J names default carries the probability of the best
    name's expected loss; each successive cluster where one fewer name
    defaults carries the increment between adjacent sorted constraints.
    """
    ellbar = np.asarray(ellbar, dtype=float)
    if ellbar.ndim != 1 or ellbar.size == 0:
        raise ValidationError("ellbar must be a nonempty vector")
    if np.any((ellbar < 0) | (ellbar > 1)):
        raise ValidationError("expected-loss constraints must lie in [0,1]")
    order = np.argsort(ellbar, kind="stable")
    ell = ellbar[order]
    J = ell.size
    # atom i (i = 0..J): the worst i names (sorted indices J-i..J-1) default
    atoms = np.zeros((J + 1, J))
    for i in range(1, J + 1):
        atoms[i, J - i:] = 1.0
    probs = np.empty(J + 1)
    probs[J] = ell[0]
    probs[1:J] = np.diff(ell)[::-1]
    probs[0] = 1.0 - ell[-1]
    return WorstCaseDistribution(ellbar=ell, atoms=atoms, probs=probs, order=order)


def worst_case_tranche_values(dist: WorstCaseDistribution, weights, kappa: float) -> tuple[float, float, float]:
    """(senior value, junior value, normalized tranche loss) at r = 0.

    Exact finite sums over the J+1 atoms; ``weights`` are given in the
    original (unsorted) sovereign order.
    """
    if not 0.0 <= kappa < 1.0:
        raise ValidationError("attachment point must lie in [0,1)")
    w = np.asarray(weights, dtype=float)[dist.order]
    L = dist.atoms @ w
    esb = float(dist.probs @ ((1.0 - L) - np.maximum(kappa - L, 0.0)))
    ejb = float(dist.probs @ np.maximum(kappa - L, 0.0))
    ell = 1.0 - esb / (1.0 - kappa)
    return esb, ejb, ell


def es_of_worst_case_marginal(ellbar_j: float, alpha: float) -> float:
    """Expected shortfall of the two-point worst-case marginal at level alpha.

    This is the sharp upper bound min(1-alpha, ellbar)/(1-alpha) on ES over
    all [0,1]-valued losses with the given mean.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValidationError("alpha must lie in [0,1)")
    if not 0.0 <= ellbar_j <= 1.0:
        raise ValidationError("expected loss must lie in [0,1]")
    return min(1.0 - alpha, ellbar_j) / (1.0 - alpha)


def approximate_worst_case_model(
    ellbar,
    T: float,
    n: float = 50.0,
    kappa_speed: float = 50.0,
    sigma_small: float = 1e-3,
) -> tuple[RegimeChain, list[SovereignParams]]:
    """Absorbing-regime dynamic model whose default pattern at T approximates pi*.

    States 2..J+1 are absorbing and correspond to the default clusters; the
    first-row intensities are chosen so the chain's terminal law reproduces
    the cluster probabilities.  The mean-reversion ladder takes only the
    levels 1/n (safe) and n (near-certain default); fast mean reversion and a
    tiny volatility tie defaults to the regime.

    Expected losses under this model converge to the bound at rate O(1/n)
    (the safe level still leaks roughly T/n of default probability).  When
    pricing, the regime-state ODE step must resolve the stiff rate
    ``kappa_speed * n * |beta|`` (about ``n`` here), so pass a step no larger
    than roughly ``1 / (2 n)`` to the pricer for large ``n``.
    """
    dist = build_worst_case(ellbar)
    ell = dist.ellbar
    J = dist.J
    if n < 1:
        raise ValidationError("severity level n must be >= 1")
    if T <= 0:
        raise ValidationError("horizon must be positive")
    # state k at T corresponds to the cluster where names J+2-k .. J default
    p1 = 1.0 - ell[-1]
    if p1 <= 0.0:
        raise ValidationError("all-names expected loss of 1 makes state 1 unreachable")
    K = J + 1
    Q = np.zeros((K, K))
    q11 = np.log(p1) / T
    Q[0, 0] = q11
    for k in range(2, K + 1):
        if k == K:
            pk = ell[0]
        else:
            pk = ell[J + 1 - k] - ell[J - k]
        Q[0, k - 1] = -pk * q11 / (1.0 - p1)
    Q[0, 0] = -Q[0, 1:].sum()
    chain = RegimeChain(Q=Q)
    params = []
    for j in range(1, J + 1):
        mu = np.full(K, 1.0 / n)
        for k in range(2, K + 1):
            if j >= J + 2 - k:
                mu[k - 1] = float(n)
        params.append(SovereignParams(
            id=f"wc{j}", kappa=kappa_speed, mu=mu, sigma=sigma_small, omega=0.0,
        ))
    return chain, params
