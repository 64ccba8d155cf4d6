"""Calibration blocks against hand-built panels and known-truth synthetic data."""
import warnings

import numpy as np
import pytest

from esbrisk import (CalibConfig, CdsPanel, LgdSpec, PaymentSchedule,
                     RegimeChain, SovereignParams, ValidationError, datasets,
                     run_algorithm1)
from esbrisk.calibration import (_cell_errors, _pricers, estimate_sigma,
                                 fit_chain_per_date, fit_gamma_per_date,
                                 fit_theta, kmeans_init, mle_generator)
from esbrisk.io import generate_synthetic_panel

from conftest import make_two_name_portfolio


def test_panel_validation():
    with pytest.raises(ValidationError):
        CdsPanel(dates=np.array([0.0, 0.0]), sovereigns=("A",),
                 maturities=np.array([1.0]), spreads=np.zeros((2, 1, 1)))
    with pytest.raises(ValidationError):
        CdsPanel(dates=np.array([0.0, 0.1]), sovereigns=("A",),
                 maturities=np.array([1.0]), spreads=np.zeros((2, 2, 1)))
    with pytest.raises(ValidationError):
        CdsPanel(dates=np.array([0.0, 0.1]), sovereigns=("A",),
                 maturities=np.array([1.0]), spreads=-np.ones((2, 1, 1)))
    panel = CdsPanel(dates=np.array([0.0, 0.1]), sovereigns=("A",),
                     maturities=np.array([1.0]),
                     spreads=np.array([[[0.01]], [[np.nan]]]))
    assert panel.n_cells == 1 and panel.M == 2 and panel.J == 1


def test_kmeans_init_orders_clusters_by_level():
    """Three separated spread levels must map to states 1 < 2 < 3."""
    rng = np.random.default_rng(0)
    levels = np.array([0.001, 0.01, 0.05])
    X_true = np.repeat([2, 1, 3], 30)
    spreads = levels[X_true - 1][:, None, None] * (1 + 0.01 * rng.standard_normal((90, 1, 1)))
    panel = CdsPanel(dates=np.arange(90) / 52, sovereigns=("A",),
                     maturities=np.array([1.0]), spreads=spreads)
    lgd = {"A": LgdSpec(mean=np.full(3, 0.5))}
    X0, gamma0 = kmeans_init(panel, lgd, K=3, seed=1)
    assert np.array_equal(X0, X_true)
    # short-maturity back-out: hazard = spread / LGD
    assert np.allclose(gamma0[:, 0], spreads[:, 0, 0] / 0.5, rtol=1e-12)


def test_estimate_sigma_hand_value_and_validation():
    gamma = np.array([0.04, 0.05, 0.03])
    dates = np.array([0.0, 0.1, 0.2])
    qv = 0.01**2 + 0.02**2
    denom = 0.04 * 0.1 + 0.05 * 0.1
    assert np.isclose(estimate_sigma(gamma, dates), np.sqrt(qv / denom))
    with pytest.raises(ValidationError):
        estimate_sigma(np.array([0.04]), np.array([0.0]))
    with pytest.raises(ValidationError):
        estimate_sigma(np.zeros(5), np.arange(5.0))


def test_fit_gamma_recovers_truth_given_true_parameters():
    pf = make_two_name_portfolio(fast_chain=True)
    rng = np.random.default_rng(4)
    panel, truth = generate_synthetic_panel(pf, 25, rng, noise_bp=0.0)
    lgd = {p.id: l for p, l in zip(pf.sovereigns, pf.lgd)}
    cfg = CalibConfig()
    for j, name in enumerate(panel.sovereigns):
        pricers = _pricers(pf.sovereigns[j], lgd[name], pf.chain,
                           panel.maturities, cfg.step)
        g = fit_gamma_per_date(panel.spreads[:, j], pricers, truth["X"],
                               np.full(panel.M, 0.02), cfg.gamma_max)
        assert np.allclose(g, truth["gamma"][:, j], atol=1e-7)
        assert float(_cell_errors(panel.spreads[:, j], pricers, g, truth["X"]).sum()) < 1e-16


def test_fit_chain_per_date_hysteresis_on_ties():
    errs = np.array([[1.0, 1.0, 2.0],
                     [5.0, 1.0, 1.0],
                     [1.0, 1.0, 1.0]])
    X = fit_chain_per_date(errs, np.full(3, 2, dtype=np.int64))
    # date 0: tie between 1 and 2, previous (2) wins; date 1: tie 2/3 keeps 2;
    # date 2: three-way tie keeps the running state 2
    assert np.array_equal(X, [2, 2, 2])
    X = fit_chain_per_date(errs, np.full(3, 3, dtype=np.int64))
    assert X[0] == 1  # previous state 3 not among the minimizers


def test_mle_generator_hand_counts_and_warnings():
    X = np.array([1, 1, 2, 1, 2, 2, 1], dtype=np.int64)
    dates = np.arange(7) * 0.5
    Q = mle_generator(X, dates, 2)
    # occupation: state 1 holds dates 0,1,3,6->stop = 3 intervals of 0.5 (last date open)
    # jumps 1->2 twice over 1.5y; 2->1 twice over 1.5y
    assert np.isclose(Q[0, 1], 2.0 / 1.5)
    assert np.isclose(Q[1, 0], 2.0 / 1.5)
    assert np.allclose(Q.sum(axis=1), 0.0, atol=1e-14)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        Q = mle_generator(np.array([1, 1, 1], dtype=np.int64), np.arange(3.0), 3)
    assert any("never visited" in str(x.message) for x in w)
    assert np.allclose(Q[1], 0.0) and np.allclose(Q[2], 0.0)


def test_fit_theta_never_worsens_the_objective():
    pf = make_two_name_portfolio(fast_chain=True)
    rng = np.random.default_rng(8)
    panel, truth = generate_synthetic_panel(pf, 20, rng, noise_bp=5.0)
    lgd = {p.id: l for p, l in zip(pf.sovereigns, pf.lgd)}
    cfg = CalibConfig(local_evals=60)
    j = 0
    template = SovereignParams(id=pf.sovereigns[j].id, kappa=1.0,
                               mu=np.full(3, 0.02), sigma=0.2)
    pricers = _pricers(template, lgd[template.id], pf.chain, panel.maturities, cfg.step)
    f0 = float(_cell_errors(panel.spreads[:, j], pricers, truth["gamma"][:, j],
                            truth["X"]).sum())
    fit, f1 = fit_theta(panel.spreads[:, j], template, lgd[template.id], pf.chain,
                        panel.maturities, truth["X"], cfg,
                        stage="local", rng_seed=0)
    assert f1 <= f0 + 1e-15  # profiling the trajectory can only lower the error
    assert np.all(fit.mu >= 0) and fit.kappa >= cfg.kappa_min


def test_run_algorithm1_smoke_descends_and_reports():
    pf = make_two_name_portfolio(fast_chain=True)
    rng = np.random.default_rng(11)
    panel, truth = generate_synthetic_panel(pf, 40, rng, noise_bp=2.0)
    lgd = {p.id: l for p, l in zip(pf.sovereigns, pf.lgd)}
    cfg = CalibConfig(max_iter=2, global_maxiter=8, global_popsize=8,
                      local_evals=60, q_evals=20, seed=0)
    res = run_algorithm1(panel, lgd, cfg)
    log = np.array(res.objective_log)
    assert np.all(np.diff(log) <= 1e-12)  # block descent never worsens the fit
    assert set(res.rmse_bp) == set(panel.sovereigns)
    assert res.gamma.shape == (panel.M, panel.J)
    assert res.X.shape == (panel.M,)
    assert np.allclose(res.Q.sum(axis=1), 0.0, atol=1e-10)
    assert all(np.all(np.asarray(p.mu) >= 0) for p in res.params.values())


def test_run_algorithm1_requires_lgd_for_every_name():
    pf = make_two_name_portfolio()
    panel, _ = generate_synthetic_panel(pf, 5, np.random.default_rng(0), noise_bp=0.0)
    with pytest.raises(ValidationError):
        run_algorithm1(panel, {"DEU": pf.lgd[0]}, CalibConfig(max_iter=1))
