"""CSV ingestion/emission, synthetic panel generation and run manifests.

Basis-point/decimal conversion happens exactly once, here: panels are stored
in basis points on disk and in decimals in memory.  Every CLI run writes a
manifest (config echo + SHA-256 of each input) so results can be reproduced
from the manifest alone.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .calibration import BP, CdsPanel
from .core import MarketState, PaymentSchedule, Portfolio
from .errors import ValidationError
from .paths import simulate_chain
from .pricing import SovereignCdsPricer

FLOAT_FMT = "{:.12g}"


def ingest_panel(path) -> CdsPanel:
    """Read a CDS panel CSV with header date,sovereign,maturity_years,spread_bp.

    Dates are year fractions.  Malformed rows, negative spreads and duplicate
    (date, sovereign, maturity) cells are rejected with line numbers.
    """
    cells = {}
    first_line = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "sovereign", "maturity_years", "spread_bp"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"{path}: header must contain {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                date = float(row["date"])
                mat = float(row["maturity_years"])
                spread = float(row["spread_bp"])
            except (TypeError, ValueError):
                raise ValidationError(f"{path}:{lineno}: malformed row {row!r}")
            sov = (row["sovereign"] or "").strip()
            if not sov:
                raise ValidationError(f"{path}:{lineno}: empty sovereign code")
            if spread < 0:
                raise ValidationError(f"{path}:{lineno}: negative spread {spread}")
            key = (date, sov, mat)
            if key in cells:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate cell {key}, first seen at line {first_line[key]}"
                )
            cells[key] = spread
            first_line[key] = lineno
    if not cells:
        raise ValidationError(f"{path}: empty panel")
    dates = sorted({k[0] for k in cells})
    sovs = tuple(sorted({k[1] for k in cells}))
    mats = sorted({k[2] for k in cells})
    spreads = np.full((len(dates), len(sovs), len(mats)), np.nan)
    di = {d: i for i, d in enumerate(dates)}
    si = {s: i for i, s in enumerate(sovs)}
    mi = {m: i for i, m in enumerate(mats)}
    for (d, s, m), v in cells.items():
        spreads[di[d], si[s], mi[m]] = v * BP
    return CdsPanel(dates=np.array(dates), sovereigns=sovs,
                    maturities=np.array(mats), spreads=spreads)


def write_panel(panel: CdsPanel, path) -> None:
    """Emit a panel as CSV in basis points, skipping missing cells."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "sovereign", "maturity_years", "spread_bp"])
        for i, d in enumerate(panel.dates):
            for j, s in enumerate(panel.sovereigns):
                for k, m in enumerate(panel.maturities):
                    v = panel.spreads[i, j, k]
                    if np.isfinite(v):
                        w.writerow([FLOAT_FMT.format(d), s, FLOAT_FMT.format(m),
                                    FLOAT_FMT.format(v / BP)])


def generate_synthetic_panel(
    portfolio: Portfolio,
    n_dates: int,
    rng: np.random.Generator,
    noise_bp: float = 0.0,
    maturities=(1.0, 5.0),
    dt_obs: float = 7.0 / 365.0,
    euler_substeps: int = 20,
    gamma0=None,
    X0: int = 1,
    pricing_step: float = 1.0 / 52.0,
):
    """Simulate trajectories and price a synthetic CDS panel from them.

    Returns (panel, truth) where truth holds the exact (gamma, X) paths and
    the generating parameters.  With zero noise the panel is reproduced
    exactly by pricing at the true states, which is what calibration-recovery
    tests rely on.
    """
    J = portfolio.J
    dates = np.arange(n_dates) * dt_obs
    chain_path = simulate_chain(portfolio.chain, X0, dates[-1] + dt_obs, rng)
    X = chain_path.state_at(dates).astype(np.int64)
    if gamma0 is None:
        gamma0 = np.array([p.mu[X0 - 1] for p in portfolio.sovereigns])
    gamma = np.empty((n_dates, J))
    gamma[0] = gamma0
    h = dt_obs / euler_substeps
    g = np.asarray(gamma0, dtype=float).copy()
    for m in range(n_dates - 1):
        for s in range(euler_substeps):
            t = dates[m] + s * h
            x = int(chain_path.state_at(t))
            for j, p in enumerate(portfolio.sovereigns):
                gp = max(g[j], 0.0)
                g[j] += p.kappa * (p.mu[x - 1] - gp) * h \
                    + p.sigma * np.sqrt(gp * h) * rng.standard_normal()
        g = np.maximum(g, 0.0)
        gamma[m + 1] = g
    spreads = np.empty((n_dates, J, len(maturities)))
    for j, p in enumerate(portfolio.sovereigns):
        for k, u in enumerate(maturities):
            pricer = SovereignCdsPricer(p, portfolio.lgd[j], portfolio.chain,
                                        PaymentSchedule.quarterly(float(u)), step=pricing_step)
            spreads[:, j, k] = pricer.fair_spread(gamma[:, j], X)
    if noise_bp > 0:
        spreads = np.clip(spreads + noise_bp * BP * rng.standard_normal(spreads.shape), 0.0, None)
    panel = CdsPanel(dates=dates, sovereigns=tuple(portfolio.ids()),
                     maturities=np.array(maturities, dtype=float), spreads=spreads)
    truth = {"gamma": gamma, "X": X, "portfolio": portfolio}
    return panel, truth


def write_states_csv(dates, X, gamma, sovereigns, path) -> None:
    """Trajectory CSV: date, regime, one hazard column per sovereign."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "state"] + [f"gamma_{s}" for s in sovereigns])
        for m in range(len(dates)):
            w.writerow([FLOAT_FMT.format(dates[m]), int(X[m])]
                       + [FLOAT_FMT.format(g) for g in np.atleast_2d(gamma)[m]])


def read_states_csv(path):
    """Inverse of :func:`write_states_csv`; returns (dates, X, gamma, sovereigns)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["date", "state"]:
            raise ValidationError(f"{path}: unexpected header {header!r}")
        sovs = [c[len("gamma_"):] for c in header[2:]]
        dates, X, gam = [], [], []
        for row in reader:
            dates.append(float(row[0]))
            X.append(int(row[1]))
            gam.append([float(v) for v in row[2:]])
    return np.array(dates), np.array(X, dtype=np.int64), np.array(gam), tuple(sovs)


def write_params_csv(params: dict, path) -> None:
    """Parameter table in the packaged hazard-parameter schema."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sovereign", "mu1", "mu2", "mu3", "kappa", "omega", "sigma", "measure"])
        for name in sorted(params):
            p = params[name]
            mu = list(p.mu) + [np.nan] * (3 - p.mu.size)
            w.writerow([name] + [FLOAT_FMT.format(v) for v in mu[:3]]
                       + [FLOAT_FMT.format(p.kappa), FLOAT_FMT.format(p.omega),
                          FLOAT_FMT.format(p.sigma), p.measure])


def write_table_csv(path, header, rows) -> None:
    """Generic numeric report writer at 12 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([FLOAT_FMT.format(v) if isinstance(v, (int, float, np.floating)) else v
                        for v in row])


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, inputs: list) -> Path:
    """Record the run configuration and input hashes beside the outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": 1,
        "command": command,
        "config": config,
        "inputs": {str(p): sha256_of(p) for p in inputs},
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
