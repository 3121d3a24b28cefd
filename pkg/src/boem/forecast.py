"""Forecasting past the training window, posterior predictive counts, and
excess-mortality summaries.

Excess is observed minus predicted: ``chi = y - y_ppd`` so that positive
values mean more deaths than the pre-crisis trend implies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AdjacencyGraph, icar_sampling_basis
from .model import Offsets, ParameterState

PER_100K = 100_000.0
MIN_DRAWS = 100
LEVELS = (0.025, 0.5, 0.975)
# cap on Poisson means; exp() of a far-horizon random walk can overflow numpy's sampler
MAX_POISSON_MEAN = 1e9


def forecast_state(
    state: ParameterState,
    horizon,
    graph: AdjacencyGraph,
    rng,
    basis: np.ndarray | None = None,
) -> ParameterState:
    """Extend ``kappa`` and ``omega`` over ``horizon`` (0-based month indices that
    must continue directly after the state's last month).

    kappa follows its random walk; omega gets ICAR-structured, sum-to-zero
    increments of scale ``sd_omega``. Everything else is carried unchanged.
    """
    horizon = np.asarray(list(horizon), dtype=np.int64)
    T = state.kappa.shape[0]
    H = horizon.size
    if H and not np.array_equal(horizon, np.arange(T, T + H)):
        raise ValueError(f"horizon must be the contiguous months {T}..{T + H - 1}")
    if basis is None:
        basis = icar_sampling_basis(graph)
    out = state.copy()
    if H == 0:
        return out
    if T == 0:
        raise ValueError("cannot forecast a state with no fitted months")
    steps = state.sd_kappa * rng.standard_normal(H)
    out.kappa = np.concatenate([state.kappa, state.kappa[-1] + np.cumsum(steps)])
    inc = state.sd_omega * (basis @ rng.standard_normal((basis.shape[1], H)))
    out.omega = np.concatenate([state.omega, state.omega[:, -1:] + np.cumsum(inc, axis=1)], axis=1)
    return out


def sample_ppd(state: ParameterState, offsets: Offsets, rng) -> np.ndarray:
    """One posterior predictive count draw for every cell the state covers.

    Fresh structural-zero indicators are drawn for every month, training
    months included.
    """
    n, T = state.omega.shape
    if offsets.expected.shape[1] < T:
        raise ValueError(
            f"population/offsets cover {offsets.expected.shape[1]} months, state needs {T}"
        )
    lam = offsets.expected[:, :T] * np.exp(state.log_relative_risk())
    lam = np.minimum(lam, MAX_POISSON_MEAN)
    zero = rng.random((n, T)) < state.rho
    counts = rng.poisson(lam)
    counts[zero] = 0
    return counts


@dataclass
class PpdDraws:
    counts: np.ndarray  # (S, n_areas, n_months) int
    log_risk: np.ndarray | None = None  # (S, n_areas, n_months), optional

    @property
    def n_samples(self) -> int:
        return self.counts.shape[0]


def ppd_from_samples(
    samples,
    offsets: Offsets,
    graph: AdjacencyGraph,
    n_months_total: int,
    seed: int = 0,
    max_draws: int | None = None,
    keep_log_risk: bool = False,
) -> PpdDraws:
    """Forecast and simulate counts for every saved draw (or an even subsample).

    Draw ``k`` (in chain-major order) uses its own generator seeded by
    ``(seed, k)``, so results do not depend on how draws are batched.
    """
    C, S = samples.n_chains, samples.n_draws
    order = [(c, s) for c in range(C) for s in range(S)]
    if max_draws is not None and max_draws < len(order):
        idx = np.linspace(0, len(order) - 1, max_draws).round().astype(int)
        order = [order[k] for k in idx]
    n = len(samples.area_ids)
    T = samples.n_months_train
    basis = icar_sampling_basis(graph)
    counts = np.empty((len(order), n, n_months_total), dtype=np.int32)
    log_risk = np.empty((len(order), n, n_months_total)) if keep_log_risk else None
    horizon = range(T, n_months_total)
    for k, (c, s) in enumerate(order):
        rng = np.random.default_rng([seed, k])
        st = forecast_state(samples.state(c, s), horizon, graph, rng, basis)
        counts[k] = sample_ppd(st, offsets, rng)
        if keep_log_risk:
            log_risk[k] = st.log_relative_risk()
    return PpdDraws(counts=counts, log_risk=log_risk)


def excess_samples(observed, ppd) -> np.ndarray:
    """``observed - ppd`` per draw; cells whose observed value is NaN stay NaN.

    ``observed`` broadcasts against the trailing axes of ``ppd``.
    """
    counts = ppd.counts if isinstance(ppd, PpdDraws) else np.asarray(ppd)
    obs = np.asarray(observed, dtype=float)
    return obs[None, ...] - counts


def summarize(draws, levels=LEVELS, axis: int = 0) -> np.ndarray:
    """Empirical quantiles (linear interpolation between order statistics)
    along ``axis``; returns an array with the quantile axis first."""
    x = np.asarray(draws, dtype=float)
    if x.shape[axis] < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} draws per cell, got {x.shape[axis]}")
    return np.quantile(x, levels, axis=axis, method="linear")


def rates(values, population) -> np.ndarray:
    """Per-100,000 rate of counts (or excess counts)."""
    pop = np.asarray(population, dtype=float)
    if np.any(pop <= 0):
        raise ValueError("population must be positive")
    return np.asarray(values, dtype=float) / pop * PER_100K


@dataclass
class AnnualAggregate:
    years: np.ndarray
    draws: np.ndarray  # (S, n_areas, n_years) summed per draw
    partial: np.ndarray  # (n_areas, n_years) bool


def annual_aggregate(monthly_draws, month_years, missing=None) -> AnnualAggregate:
    """Sum monthly draws within each calendar year, draw by draw.

    A year is marked partial for an area when it has fewer than 12 months in
    the horizon or any of its months is flagged in ``missing``.
    """
    x = np.asarray(monthly_draws, dtype=float)
    years_all = np.asarray(month_years)
    years = np.unique(years_all)
    S, n, _ = x.shape
    miss = np.zeros((n, years_all.size), bool) if missing is None else np.asarray(missing, bool)
    out = np.empty((S, n, years.size))
    partial = np.zeros((n, years.size), bool)
    for k, yr in enumerate(years):
        cols = years_all == yr
        block = x[:, :, cols]
        out[:, :, k] = np.where(np.isnan(block), 0.0, block).sum(axis=2)
        partial[:, k] = (cols.sum() < 12) | miss[:, cols].any(axis=1)
    return AnnualAggregate(years=years, draws=out, partial=partial)
