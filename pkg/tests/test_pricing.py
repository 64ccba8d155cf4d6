"""CDS pricer against closed forms and Monte Carlo; tranche estimator identities."""
import numpy as np
import pytest

from esbrisk import (DiscountCurve, LgdSpec, MarketState, NumericalError,
                     PaymentSchedule, Portfolio, RegimeChain, SovereignParams,
                     TrancheSpec, ValidationError, cds_legs, datasets,
                     expected_discounted_portfolio_loss, fair_cds_spread,
                     implied_hazard, implied_initial_hazards, price_tranche,
                     price_tranches, psnt_spread, psnt_table,
                     simulate_portfolio_losses, survival_claim_price)
from esbrisk.pricing import SovereignCdsPricer, expected_portfolio_loss

from test_transform import cir_bond_price


def one_name_portfolio(lgd_mean=1.0, K=1):
    chain = RegimeChain(Q=np.zeros((1, 1))) if K == 1 else RegimeChain(
        Q=np.array([[-0.5, 0.5, 0.0], [0.3, -0.6, 0.3], [0.0, 0.8, -0.8]]))
    p = SovereignParams(id="solo", kappa=1.2, mu=[0.03] * K, sigma=0.25)
    lgd = LgdSpec(mean=np.full(K, lgd_mean))
    return Portfolio(sovereigns=(p,), weights=np.array([1.0]), lgd=(lgd,), chain=chain)


def test_survival_matches_cir_closed_form():
    pf = one_name_portfolio()
    p = pf.sovereigns[0]
    sch = PaymentSchedule.quarterly(5.0)
    pricer = SovereignCdsPricer(p, pf.lgd[0], pf.chain, sch, step=1e-3)
    gamma0 = 0.04
    surv = pricer.survival(gamma0, 1)
    want = np.array([cir_bond_price(gamma0, t, 1.0, p.kappa, p.mu[0], p.sigma) for t in sch.t])
    assert np.allclose(surv, want, rtol=1e-8)
    assert np.all(np.diff(surv) < 0)  # strictly decreasing in horizon


def test_default_leg_telescopes_with_constant_lgd():
    """Undiscounted default leg with state-independent LGD is delta*(1 - S(T))."""
    pf = one_name_portfolio(lgd_mean=0.6, K=3)
    sch = PaymentSchedule.quarterly(5.0)
    pricer = SovereignCdsPricer(pf.sovereigns[0], pf.lgd[0], pf.chain, sch, step=1e-3)
    for gamma0, X in [(0.01, 1), (0.08, 2), (0.2, 3)]:
        el = float(pricer.expected_loss(gamma0, X))
        surv_T = float(pricer.survival(gamma0, X)[-1])
        assert np.isclose(el, 0.6 * (1.0 - surv_T), rtol=1e-9)


def test_fair_spread_increases_in_hazard(base_portfolio, schedule):
    pricer = SovereignCdsPricer(base_portfolio.sovereigns[0], base_portfolio.lgd[0],
                                base_portfolio.chain, schedule, step=1 / 52)
    g = np.array([0.001, 0.005, 0.02, 0.08, 0.3])
    s = pricer.fair_spread(g, np.ones(g.size, dtype=int))
    assert np.all(np.diff(s) > 0)


def test_fair_spread_constant_intensity_benchmark():
    """Nearly deterministic hazard at level lam: spread approx delta * lam."""
    lam, delta = 0.02, 0.55
    chain = RegimeChain(Q=np.zeros((1, 1)))
    p = SovereignParams(id="flat", kappa=8.0, mu=[lam], sigma=0.01)
    lgd = LgdSpec(mean=np.array([delta]))
    sch = PaymentSchedule.quarterly(5.0)
    pricer = SovereignCdsPricer(p, lgd, chain, sch, step=1e-3)
    s = float(pricer.fair_spread(lam, 1))
    assert abs(s - delta * lam) / (delta * lam) < 0.02


def test_cds_legs_balance_at_fair_spread(base_portfolio, schedule, base_state):
    s = fair_cds_spread(base_state, base_portfolio, 2, schedule)
    prem, dfl = cds_legs(base_state, base_portfolio, 2, schedule, s)
    assert np.isclose(prem, dfl, rtol=1e-10)


def test_survival_claim_price_defaulted_name_is_zero(base_portfolio, base_state):
    st_ = MarketState(date=0.0, X=1, gamma=base_state.gamma,
                      loss=np.eye(base_portfolio.J)[3] * 0.5)
    assert survival_claim_price(st_, base_portfolio, 3, 2.0, np.ones(3)) == 0.0
    alive = survival_claim_price(base_state, base_portfolio, 3, 2.0, np.ones(3))
    assert 0.0 < alive <= 1.0


def test_implied_hazard_round_trip(base_portfolio):
    p, lgd = base_portfolio.sovereigns[7], base_portfolio.lgd[7]
    target = 0.0123
    g = implied_hazard(p, lgd, base_portfolio.chain, target, maturity=1.0, step=1 / 52)
    pricer = SovereignCdsPricer(p, lgd, base_portfolio.chain,
                                PaymentSchedule.quarterly(1.0), step=1 / 52)
    assert np.isclose(float(pricer.fair_spread(g, 1)), target, rtol=1e-8)


def test_implied_initial_hazards_reference_levels(base_portfolio):
    spreads = datasets.load_reference_spreads()
    g0 = implied_initial_hazards(base_portfolio, spreads, step=1 / 52)
    assert g0.shape == (base_portfolio.J,) and np.all(g0 > 0)


def test_implied_hazard_rejects_unattainable_spread(base_portfolio):
    p, lgd = base_portfolio.sovereigns[0], base_portfolio.lgd[0]
    with pytest.raises(NumericalError):
        implied_hazard(p, lgd, base_portfolio.chain, 50.0, step=1 / 52)


def test_single_name_mc_survival_consistency(rng):
    """Default indicator frequency from the path engine vs analytic survival."""
    pf = one_name_portfolio(lgd_mean=1.0, K=3)
    sch = PaymentSchedule.quarterly(2.0)
    st_ = MarketState(date=0.0, X=2, gamma=np.array([0.05]))
    sample = simulate_portfolio_losses(st_, pf, sch, 20000, rng, dt=1 / 250)
    p_def_mc = float((sample.portfolio > 0).mean())
    pricer = SovereignCdsPricer(pf.sovereigns[0], pf.lgd[0], pf.chain, sch, step=1e-3)
    p_def = 1.0 - float(pricer.survival(0.05, 2)[-1])
    se = np.sqrt(p_def * (1 - p_def) / 20000)
    assert abs(p_def_mc - p_def) < 3.5 * se


def test_expected_loss_matches_mc(base_portfolio, base_state, schedule, rng):
    sample = simulate_portfolio_losses(base_state, base_portfolio, schedule, 20000,
                                       rng, dt=1 / 250)
    el = expected_portfolio_loss(base_state, base_portfolio, schedule, discounted=False)
    se = sample.portfolio.std(ddof=1) / np.sqrt(sample.portfolio.size)
    assert abs(sample.portfolio.mean() - el) < 3.5 * se


def test_price_tranches_parity_and_monotonicity(base_portfolio, base_state, schedule, rng):
    kappas = [0.1, 0.2, 0.3, 0.4]
    res = price_tranches(base_state, base_portfolio, kappas, schedule, 5000, rng, dt=1 / 250)
    ells = [tp.expected_tranche_loss for tp in res]
    for tp in res:
        assert np.isclose(tp.esb + tp.ejb, tp.pool, atol=1e-12)  # parity exact
        assert tp.esb_stderr >= 0 and tp.n_paths == 5000
        assert 0.0 <= tp.expected_tranche_loss < 1.0
        # annualized log spread vs linear spread agree to first order for small losses
        assert np.isclose(tp.spread, tp.spread_linear, rtol=0.15, atol=1e-6)
    assert all(a >= b for a, b in zip(ells, ells[1:]))  # thicker cushion, smaller loss


def test_price_tranches_sample_reuse(base_portfolio, base_state, schedule, rng):
    sample = simulate_portfolio_losses(base_state, base_portfolio, schedule, 3000,
                                       rng, dt=1 / 250)
    a = price_tranches(base_state, base_portfolio, [0.3], schedule, 0, rng, sample=sample)
    b = price_tranches(base_state, base_portfolio, [0.3], schedule, 0, rng, sample=sample)
    assert a[0].esb == b[0].esb and a[0].ejb == b[0].ejb


def test_price_tranche_wrapper(base_portfolio, base_state, schedule, rng):
    tp = price_tranche(base_state, base_portfolio, TrancheSpec(attachment=0.2),
                       schedule, 2000, rng, dt=1 / 250)
    assert tp.kappa == 0.2


def test_price_tranches_rejects_bad_attachment(base_portfolio, base_state, schedule, rng):
    with pytest.raises(ValidationError):
        price_tranches(base_state, base_portfolio, [0.0], schedule, 2000, rng)
    with pytest.raises(ValidationError):
        price_tranches(base_state, base_portfolio, [1.0], schedule, 2000, rng)


def test_discounting_reduces_tranche_values(base_portfolio, base_state, schedule, rng):
    sample = simulate_portfolio_losses(base_state, base_portfolio, schedule, 3000,
                                       np.random.default_rng(0), dt=1 / 250)
    flat = price_tranches(base_state, base_portfolio, [0.3], schedule, 0, rng,
                          sample=sample)[0]
    disc = price_tranches(base_state, base_portfolio, [0.3], schedule, 0, rng,
                          discount=DiscountCurve(0.02), sample=sample)[0]
    assert disc.esb < flat.esb and disc.pool < flat.pool


def test_psnt_dominates_pooled_tranche_loss_pathwise(base_portfolio, base_state, schedule):
    """Tranching-then-pooling loses at least as much as pooling-then-tranching."""
    rng = np.random.default_rng(21)
    sample = simulate_portfolio_losses(base_state, base_portfolio, schedule, 4000,
                                       rng, dt=1 / 250)
    kappas = np.array([0.1, 0.3])
    psnt, _ = psnt_table(base_state, base_portfolio, kappas, schedule, 0, rng, sample=sample)
    pooled = price_tranches(base_state, base_portfolio, kappas, schedule, 0, rng, sample=sample)
    w = base_portfolio.weights
    for i, k in enumerate(kappas):
        direct = (np.maximum(sample.losses - k, 0.0) @ w).mean() / (1.0 - k)
        assert np.isclose(psnt[i], direct, rtol=1e-12)
        mc_tranche = np.maximum(sample.portfolio - k, 0.0).mean() / (1.0 - k)
        assert psnt[i] >= mc_tranche - 1e-12


def test_expected_discounted_portfolio_loss_with_preseeded_default(base_portfolio, schedule):
    gamma = np.array([p.mu[0] for p in base_portfolio.sovereigns])
    loss = np.zeros(base_portfolio.J)
    loss[0] = 0.4
    st_ = MarketState(date=0.0, X=1, gamma=gamma, loss=loss)
    base = expected_discounted_portfolio_loss(
        MarketState(date=0.0, X=1, gamma=gamma), base_portfolio, schedule)
    seeded = expected_discounted_portfolio_loss(st_, base_portfolio, schedule)
    assert seeded > base  # locked-in loss raises the total
