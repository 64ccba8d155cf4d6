"""Regime-switching affine credit risk toolkit for sovereign debt portfolios.

Hazard rates follow square-root diffusions whose mean-reversion levels are
modulated by a common finite-state regime chain; defaults are doubly
stochastic and conditionally independent.  The package prices sovereign CDS
and pooled-bond tranches, computes model-independent worst-case bounds,
calibrates to CDS panels, estimates real-world dynamics and runs scenario and
VaR/ES analyses.
"""
from .core import (REAL_WORLD, RISK_NEUTRAL, DiscountCurve, LgdSpec,
                   MarketState, PaymentSchedule, Portfolio, RegimeChain,
                   SovereignParams, TrancheSpec, ejb_payoff, esb_payoff,
                   portfolio_loss)
from .errors import EsbriskError, NumericalError, ValidationError
from .transform import TransformRequest, chain_propagators, laplace_transform, riccati_beta, solve_v
from .pricing import (CdsQuote, SovereignCdsPricer, TranchePrice, cds_legs,
                      expected_discounted_portfolio_loss, fair_cds_spread,
                      implied_hazard, implied_initial_hazards, price_tranche,
                      price_tranches, psnt_spread, psnt_table,
                      survival_claim_price)
from .worstcase import (WorstCaseDistribution, approximate_worst_case_model,
                        build_worst_case, es_of_worst_case_marginal,
                        worst_case_tranche_values)
from .paths import (ChainPath, LossSample, sample_defaults, simulate_chain,
                    simulate_chain_grid, simulate_hazards, simulate_portfolio_losses)
from .riskengine import (ConditionalTranchePricer, RiskReport, ScenarioSpec,
                         historical_spread_trajectory, loss_probability,
                         match_crisis_parameters, relative_loss_sample,
                         standard_scenarios, var_es)
from .calibration import (CalibConfig, CalibrationResult, CdsPanel,
                          estimate_sigma, fit_chain_per_date, fit_gamma_per_date,
                          fit_theta, kmeans_init, mle_generator, run_algorithm1)
from .em import (EMResult, FilterOutput, em_step, estimate_sigma_qv,
                 filter_smooth, run_em)
from . import datasets, io

__version__ = "0.1.0"
