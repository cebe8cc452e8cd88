"""Synthetic return panels with planted market states.

Used by the test-suite and to build the sample dataset shipped in
``marketstates/data``. Returns follow a factor model

    r_i(t) = vol_i * (m_n f(t) + w * sum_g B[i, g] h_g(t) + e_i(t))

where the market loading ``m_n`` changes from epoch to epoch and the group
membership ``B`` encodes the planted regime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import SECTOR_ORDER, PriceTable, ReturnMatrix


@dataclass
class PlantedPanel:
    returns: ReturnMatrix
    regimes: np.ndarray  # per epoch, 1-based
    market: np.ndarray  # market loading per epoch
    T: int


def business_days(n: int, start: str = "2010-01-04") -> list[str]:
    first = np.busday_offset(np.datetime64(start), 0, roll="forward")
    return [str(d) for d in np.busday_offset(first, np.arange(n))]


def default_structures(n_groups: int = 3) -> list[list[int]]:
    """Three regimes, each merging a different pair of the first three sectors.

    Every pair of regimes differs in two inter-sector blocks, so the planted
    states are equidistant and no regime sits between the other two.
    """
    if n_groups < 3:
        raise ValueError("need at least 3 sectors")
    rest = list(range(2, n_groups - 1))
    return [[0, 0, 1] + rest, [0, 1, 1] + rest, [0, 1, 0] + rest]


def planted_panel(
    per_sector: int = 10,
    n_sectors: int = 3,
    regime_sequence=(1, 2, 3),
    epochs_per_regime: int = 10,
    T: int = 42,
    structures=None,
    market_range=(0.8, 2.5),
    group_weight: float = 1.0,
    sector_codes=None,
    seed: int = 0,
) -> PlantedPanel:
    rng = np.random.default_rng(seed)
    structures = structures or default_structures(n_sectors)
    K = per_sector * n_sectors
    sector_of = np.repeat(np.arange(n_sectors), per_sector)
    vol = rng.uniform(0.5, 2.0, size=K)
    regimes = np.repeat(np.asarray(regime_sequence), epochs_per_regime)
    n_ep = len(regimes)
    market = rng.uniform(*market_range, size=n_ep)
    blocks = []
    for n in range(n_ep):
        groups = np.asarray(structures[regimes[n] - 1])[sector_of]
        f = rng.standard_normal(T)
        h = rng.standard_normal((groups.max() + 1, T))
        e = rng.standard_normal((K, T))
        blocks.append(vol[:, None] * (market[n] * f + group_weight * h[groups] + e))
    values = 0.01 * np.concatenate(blocks, axis=1)
    sector_codes = sector_codes or SECTOR_ORDER
    codes = [sector_codes[s] for s in sector_of]
    tickers = [f"{c}{i:03d}" for i, c in enumerate(codes)]
    r = ReturnMatrix(values=values, tickers=tickers, dates=business_days(values.shape[1], "2010-01-05"),
                     sectors=codes, subsectors=[""] * K)
    return PlantedPanel(r, regimes, market, T)


def exact_correlation_block(target: np.ndarray, T: int, rng) -> np.ndarray:
    """K x T standardised block whose sample correlation equals ``target``.

    Needs K <= T - 1. Rows of the result have mean 0 and population
    variance 1, and ``X X^T / T == target`` up to rounding.
    """
    K = target.shape[0]
    if K > T - 1:
        raise ValueError("exact construction needs K <= T - 1")
    g = rng.standard_normal((K, T))
    g -= g.mean(axis=1, keepdims=True)
    q, _ = np.linalg.qr(g.T)  # T x K, orthonormal columns orthogonal to ones
    z = np.sqrt(T) * q.T
    return np.linalg.cholesky(target) @ z


def mean_shift_panel(K: int = 8, T: int = 20, levels=(0.2, 0.6), epochs_per_level: int = 4,
                     seed: int = 0) -> PlantedPanel:
    """Regimes that differ only in the level of an equicorrelated matrix."""
    rng = np.random.default_rng(seed)
    blocks, regimes = [], []
    for g, rho in enumerate(levels, start=1):
        target = np.full((K, K), rho)
        np.fill_diagonal(target, 1.0)
        for _ in range(epochs_per_level):
            blocks.append(0.01 * exact_correlation_block(target, T, rng) + 0.001)
            regimes.append(g)
    values = np.concatenate(blocks, axis=1)
    r = ReturnMatrix(values=values, tickers=[f"S{i:02d}" for i in range(K)],
                     dates=business_days(values.shape[1], "2010-01-05"))
    return PlantedPanel(r, np.array(regimes), np.array(levels), T)


def prices_from_returns(r: ReturnMatrix, start_price: float = 100.0, start_date: str | None = None) -> PriceTable:
    logp = np.concatenate([np.zeros((r.K, 1)), np.cumsum(r.values, axis=1)], axis=1)
    first = start_date or str(np.busday_offset(np.datetime64(r.dates[0]), -1, roll="backward"))
    dates = [first, *r.dates]
    return PriceTable(tickers=list(r.tickers), dates=dates, prices=start_price * np.exp(logp),
                      sectors=r.sectors)


def write_fixture(prices_path, sectors_path, seed: int = 7) -> None:
    """Write the sample 20-ticker dataset (prices long format + sector map)."""
    panel = planted_panel(per_sector=5, n_sectors=4, regime_sequence=(1, 2, 3, 1),
                          epochs_per_regime=4, T=42, sector_codes=("E", "F", "IT", "U"), seed=seed)
    r = panel.returns
    codes = r.sectors
    names = {"E": "ENRG", "F": "FINC", "IT": "TECH", "U": "UTIL"}
    tickers = [f"{names[c]}{i % 5 + 1}" for i, c in enumerate(codes)]
    table = prices_from_returns(r)
    # Write in reverse sector order so ingestion has to sort.
    order = list(range(r.K))[::-1]
    with open(prices_path, "w") as fh:
        fh.write("ticker,date,adj_close\n")
        for i in order:
            for d, p in zip(table.dates, table.prices[i]):
                fh.write(f"{tickers[i]},{d},{p:.6f}\n")
    with open(sectors_path, "w") as fh:
        fh.write("ticker,sector,subsector\n")
        for i in order:
            fh.write(f"{tickers[i]},{codes[i]},\n")
