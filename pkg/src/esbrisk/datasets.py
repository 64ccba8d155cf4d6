"""Packaged reference parameter sets.

Plain-text tables shipped with the package: per-sovereign hazard parameters
under both measures, the base and crisis regime generators, per-state LGD
means and GDP portfolio weights.
"""
from __future__ import annotations

import csv
from importlib import resources

import numpy as np

from .core import REAL_WORLD, RISK_NEUTRAL, LgdSpec, Portfolio, RegimeChain, SovereignParams
from .errors import ValidationError

STATE_LABELS = ("expansion", "mild recession", "strong recession")

GENERATOR_FILES = {
    "base": "generator_base.csv",
    "crisis1": "generator_crisis1.csv",
    "crisis2": "generator_crisis2.csv",
    "real-world": "generator_rw.csv",
}


def _read_rows(name: str) -> list[dict]:
    ref = resources.files("esbrisk.data").joinpath(name)
    with ref.open("r", newline="") as fh:
        return list(csv.DictReader(fh))


def load_generator(name: str = "base") -> RegimeChain:
    """Regime chain with one of the packaged generators: base, crisis1, crisis2, real-world."""
    if name not in GENERATOR_FILES:
        raise ValidationError(f"unknown generator {name!r}; choose from {sorted(GENERATOR_FILES)}")
    rows = _read_rows(GENERATOR_FILES[name])
    Q = np.array([[float(r[f"q{k}"]) for k in (1, 2, 3)] for r in rows])
    return RegimeChain(Q=Q, labels=STATE_LABELS)


def load_hazard_params(measure: str = RISK_NEUTRAL, omega_zero: bool = False) -> dict[str, SovereignParams]:
    """Per-sovereign CIR parameters, keyed by sovereign code.

    ``omega_zero`` drops the exponential trend, the convention used in the
    packaged risk-analysis parameter set.
    """
    fname = {RISK_NEUTRAL: "hazard_params_rn.csv", REAL_WORLD: "hazard_params_rw.csv"}.get(measure)
    if fname is None:
        raise ValidationError(f"unknown measure {measure!r}")
    out = {}
    for r in _read_rows(fname):
        out[r["sovereign"]] = SovereignParams(
            id=r["sovereign"],
            kappa=float(r["kappa"]),
            mu=np.array([float(r["mu1"]), float(r["mu2"]), float(r["mu3"])]),
            sigma=float(r["sigma"]),
            omega=0.0 if omega_zero else float(r["omega"]),
            measure=measure,
        )
    return out


def load_lgd_means(concentration: float = 1.5) -> dict[str, LgdSpec]:
    return {
        r["sovereign"]: LgdSpec(
            mean=np.array([float(r["state1"]), float(r["state2"]), float(r["state3"])]),
            concentration=concentration,
        )
        for r in _read_rows("lgd_means.csv")
    }


def load_reference_spreads() -> dict[str, float]:
    """Long-run average one-year CDS spreads (decimal), a representative market level."""
    return {r["sovereign"]: float(r["spread_bp"]) * 1e-4 for r in _read_rows("spreads_1y_avg.csv")}


def load_stress_spreads() -> dict[str, float]:
    """One-year quotes (decimal) for a stressed-Italy, calm-core market day.

    Core names sit near their historical lows (floored at the lowest spread
    the packaged parameters can attain); the distressed name trades wide.
    Used as the representative initial condition of the scenario analysis.
    """
    return {r["sovereign"]: float(r["spread_bp"]) * 1e-4 for r in _read_rows("spreads_1y_stress.csv")}


def load_weights() -> dict[str, float]:
    return {r["sovereign"]: float(r["weight"]) for r in _read_rows("weights_gdp.csv")}


def base_portfolio(
    measure: str = RISK_NEUTRAL,
    generator: str = "base",
    concentration: float = 1.5,
    omega_zero: bool = True,
    sovereigns: list[str] | None = None,
) -> Portfolio:
    """Euro-area reference portfolio: packaged parameters, GDP weights.

    ``omega_zero=True`` matches the convention of the packaged risk-analysis
    setup.  Restricting ``sovereigns`` renormalizes the weights.
    """
    params = load_hazard_params(measure=measure, omega_zero=omega_zero)
    lgd = load_lgd_means(concentration=concentration)
    weights = load_weights()
    ids = sovereigns if sovereigns is not None else list(params)
    w = np.array([weights[i] for i in ids])
    return Portfolio(
        sovereigns=tuple(params[i] for i in ids),
        weights=w / w.sum(),
        lgd=tuple(lgd[i] for i in ids),
        chain=load_generator("real-world" if measure == REAL_WORLD else generator),
    )
