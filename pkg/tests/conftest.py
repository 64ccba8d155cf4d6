"""Shared fixtures: small reference portfolios and deterministic generators."""
import numpy as np
import pytest

from esbrisk import (LgdSpec, MarketState, PaymentSchedule, Portfolio,
                     RegimeChain, SovereignParams, datasets)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def base_portfolio():
    return datasets.base_portfolio()


@pytest.fixture(scope="session")
def base_state(base_portfolio):
    gamma = np.array([p.mu[0] for p in base_portfolio.sovereigns])
    return MarketState(date=0.0, X=1, gamma=gamma)


@pytest.fixture(scope="session")
def schedule():
    return PaymentSchedule.quarterly(5.0)


def make_two_name_portfolio(fast_chain=False):
    """Two-sovereign portfolio with packaged parameters; optionally a faster chain."""
    pf = datasets.base_portfolio(sovereigns=["DEU", "ITA"])
    if fast_chain:
        chain = RegimeChain(Q=np.array([[-1.5, 1.2, 0.3],
                                        [1.0, -2.0, 1.0],
                                        [0.5, 2.0, -2.5]]))
        pf = Portfolio(sovereigns=pf.sovereigns, weights=pf.weights,
                       lgd=pf.lgd, chain=chain)
    return pf


@pytest.fixture
def two_name_portfolio():
    return make_two_name_portfolio()


def random_sovereign(rng, K=3, ident="rnd", measure="risk-neutral"):
    """Random but well-behaved CIR parameter set for property tests."""
    kappa = rng.uniform(0.2, 4.0)
    mu = np.sort(rng.uniform(0.002, 0.15, size=K))
    sigma = rng.uniform(0.05, 0.4)
    return SovereignParams(id=ident, kappa=kappa, mu=mu, sigma=sigma,
                           omega=0.0, measure=measure)


def random_chain(rng, K=3, scale=1.0):
    """Random valid generator with off-diagonal rates of order ``scale``."""
    Q = rng.uniform(0.1, 1.0, size=(K, K)) * scale
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return RegimeChain(Q=Q)


def random_portfolio(rng, J=2, K=3):
    """Small random portfolio for parity / bound property tests."""
    chain = random_chain(rng, K=K)
    sovs = tuple(random_sovereign(rng, K=K, ident=f"S{j}") for j in range(J))
    w = rng.uniform(0.5, 2.0, size=J)
    lgd = tuple(LgdSpec(mean=rng.uniform(0.3, 0.9, size=K),
                        concentration=rng.uniform(1.0, 4.0)) for _ in range(J))
    return Portfolio(sovereigns=sovs, weights=w / w.sum(), lgd=lgd, chain=chain)
