"""Worst-case distribution: hand enumerations, sharp bounds, dynamic approximation."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from esbrisk import (LgdSpec, PaymentSchedule, ValidationError,
                     approximate_worst_case_model, build_worst_case,
                     es_of_worst_case_marginal, worst_case_tranche_values)
from esbrisk.pricing import SovereignCdsPricer


def test_two_name_hand_enumeration():
    """ellbar=(0.1,0.2), w=(1/2,1/2), kappa=0.4 worked out by hand."""
    dist = build_worst_case(np.array([0.1, 0.2]))
    assert np.allclose(dist.probs, [0.8, 0.1, 0.1])
    assert np.allclose(dist.atoms, [[0, 0], [0, 1], [1, 1]])
    # pooled loss atoms 0, 0.5, 1.0: E[(0.4-L)^+] = 0.8*0.4, E[(L-0.4)^+] = 0.1*0.1 + 0.1*0.6
    esb, ejb, ell = worst_case_tranche_values(dist, np.array([0.5, 0.5]), 0.4)
    assert esb == pytest.approx(0.53)
    assert ejb == pytest.approx(0.32)
    assert ell == pytest.approx(0.07 / 0.6)


def test_unsorted_input_is_permuted():
    """Weights follow the original ordering; sorting must not mix them up."""
    d1 = build_worst_case(np.array([0.2, 0.1]))
    d2 = build_worst_case(np.array([0.1, 0.2]))
    w = np.array([0.3, 0.7])
    v1 = worst_case_tranche_values(d1, w, 0.25)
    v2 = worst_case_tranche_values(d2, w[::-1], 0.25)
    assert np.allclose(v1, v2)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6))
def test_marginal_means_reproduce_constraints(ells):
    dist = build_worst_case(np.array(ells))
    assert np.all(dist.probs >= -1e-12)
    assert np.isclose(dist.probs.sum(), 1.0)
    assert np.allclose(dist.marginal_means(), np.sort(ells), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.001, 0.4), min_size=2, max_size=5), st.floats(0.05, 0.9),
       st.integers(0, 10_000))
def test_tranche_values_match_direct_enumeration(ells, kappa, wseed):
    """Independent oracle: enumerate atoms and average payoffs directly."""
    ells = np.array(ells)
    rng = np.random.default_rng(wseed)
    w = rng.uniform(0.1, 1.0, size=ells.size)
    w = w / w.sum()
    dist = build_worst_case(ells)
    esb, ejb, ell = worst_case_tranche_values(dist, w, kappa)
    # oracle: sort names by ellbar, let the worst i default
    order = np.argsort(ells, kind="stable")
    ws = w[order]
    esb_o = ejb_o = 0.0
    for i in range(ells.size + 1):
        L = ws[ells.size - i:].sum()
        p = dist.probs[i]
        esb_o += p * ((1.0 - L) - max(kappa - L, 0.0))
        ejb_o += p * max(kappa - L, 0.0)
    assert np.isclose(esb, esb_o, atol=1e-12)
    assert np.isclose(ejb, ejb_o, atol=1e-12)
    assert np.isclose(ell, 1.0 - esb / (1.0 - kappa), atol=1e-12)


def test_es_bound_formula_and_empirical_check(rng):
    # two-point law: loss 1 w.p. ellbar
    ellbar, alpha = 0.03, 0.95
    bound = es_of_worst_case_marginal(ellbar, alpha)
    assert bound == pytest.approx(min(1 - alpha, ellbar) / (1 - alpha))
    draws = (rng.uniform(size=400_000) < ellbar).astype(float)
    x = np.sort(draws)
    n_tail = int(np.ceil(round(x.size * (1 - alpha), 6)))
    es_emp = x[-n_tail:].mean()
    assert abs(es_emp - bound) < 0.01
    # saturated regime: mean above the tail size
    assert es_of_worst_case_marginal(0.2, 0.95) == 1.0


def test_validation_errors():
    with pytest.raises(ValidationError):
        build_worst_case(np.array([1.2]))
    with pytest.raises(ValidationError):
        build_worst_case(np.array([[0.1]]))
    dist = build_worst_case(np.array([0.1]))
    with pytest.raises(ValidationError):
        worst_case_tranche_values(dist, np.array([1.0]), 1.0)
    with pytest.raises(ValidationError):
        es_of_worst_case_marginal(0.1, 1.0)


def test_approximating_chain_terminal_law_is_exact():
    """The generator is built so the chain's law at T matches the atom probabilities."""
    ellbar = np.array([0.02, 0.05, 0.011])
    T = 5.0
    chain, params = approximate_worst_case_model(ellbar, T)
    dist = build_worst_case(ellbar)
    law = expm(chain.Q * T)[0]
    # state k hosts the cluster where the worst k-1 names default, i.e. atom k-1
    assert np.allclose(law, dist.probs, atol=1e-12)
    assert np.allclose(chain.Q[1:], 0.0)  # absorbing states
    # ladder structure: name j has the high level exactly in states where it defaults
    J = ellbar.size
    for j, p in enumerate(params, start=1):
        for k in range(2, J + 2):
            expect_high = j >= J + 2 - k
            assert (p.mu[k - 1] > 1.0) == expect_high


def test_approximating_model_expected_losses_converge():
    """At n=2000 the per-name expected loss is within ~O(1/n) of the constraint."""
    ellbar = np.array([0.05, 0.12])
    T = 5.0
    n = 2000.0
    chain, params = approximate_worst_case_model(ellbar, T, n=n)
    sch = PaymentSchedule.quarterly(T)
    lgd = LgdSpec(mean=np.ones(chain.K))
    for target, p in zip(np.sort(ellbar), params):
        pricer = SovereignCdsPricer(p, lgd, chain, sch, step=1.0 / (2.5 * n))
        el = float(pricer.expected_loss(p.mu[0], 1))
        assert abs(el - target) < 6.0 / n
