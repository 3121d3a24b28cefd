"""Observed panel, zero-inflated Poisson data model, latent process priors and the
joint log-posterior.

Indexing is 0-based everywhere in the Python API (area ``i``, month ``m``);
files use 1-based ``month_index``.

Linear predictor::

    log theta[i, m] = alpha + u[i] + v[i] + kappa[m] + omega[i, m]

with ``u`` ICAR, ``v`` iid normal, ``kappa`` a first-order random walk and
``omega`` the Knorr-Held type IV interaction (random walk in time of ICAR
increments in space, precision ``Q_rw1 (x) Q_icar``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import special, stats

from .graph import AdjacencyGraph, connected_components, icar_quadform, icar_rank

SD_NAMES = ("sd_alpha", "sd_v", "sd_u", "sd_kappa", "sd_omega")
CONSTRAINT_TOL = 1e-8


class DegenerateModelWarning(UserWarning):
    """All training deaths are zero, so every Poisson mean collapses to zero."""


def month_years(n_months: int, anchor_year: int, anchor_month: int = 1) -> np.ndarray:
    """Calendar year of each 0-based month offset from the anchor."""
    k = np.arange(n_months) + (anchor_month - 1)
    return anchor_year + k // 12


@dataclass(frozen=True)
class ObservationPanel:
    """County-by-month training counts plus population through the full horizon.

    ``deaths`` has shape ``(n_areas, n_months_train)``; ``population`` has shape
    ``(n_areas, n_months_total)``.
    """

    area_ids: tuple
    deaths: np.ndarray
    population: np.ndarray
    n_months_train: int
    n_months_total: int
    anchor_year: int = 2018
    anchor_month: int = 1

    def __post_init__(self):
        deaths = np.asarray(self.deaths)
        pop = np.asarray(self.population)
        n = len(self.area_ids)
        if not self.n_months_train < self.n_months_total:
            raise ValueError("n_months_train must be smaller than n_months_total")
        if deaths.shape != (n, self.n_months_train):
            raise ValueError(f"deaths must have shape {(n, self.n_months_train)}, got {deaths.shape}")
        if pop.shape != (n, self.n_months_total):
            raise ValueError(f"population must have shape {(n, self.n_months_total)}, got {pop.shape}")
        if deaths.size and (deaths.min() < 0 or not np.all(deaths == np.round(deaths))):
            raise ValueError("deaths must be non-negative integers")
        if pop.size and pop.min() < 1:
            raise ValueError("population must be >= 1")
        years = self.month_years
        for yr in np.unique(years):
            block = pop[:, years == yr]
            if not np.all(block == block[:, :1]):
                raise ValueError(f"population varies within calendar year {yr}")
        object.__setattr__(self, "deaths", deaths.astype(np.int64))
        object.__setattr__(self, "population", pop.astype(np.int64))

    @property
    def n_areas(self) -> int:
        return len(self.area_ids)

    @property
    def month_years(self) -> np.ndarray:
        return month_years(self.n_months_total, self.anchor_year, self.anchor_month)

    @property
    def month_labels(self) -> list[str]:
        k = np.arange(self.n_months_total) + (self.anchor_month - 1)
        return [f"{self.anchor_year + kk // 12:04d}-{kk % 12 + 1:02d}" for kk in k]


@dataclass(frozen=True)
class Offsets:
    reference_rate: float
    expected: np.ndarray  # (n_areas, n_months_total), R * N
    degenerate: bool = False


def compute_reference_rate(panel: ObservationPanel) -> float:
    """Pooled training deaths per training person-month.

    Returns 0 and emits :class:`DegenerateModelWarning` if no deaths were observed.
    """
    pop = panel.population[:, : panel.n_months_train]
    total_pop = float(pop.sum())
    if total_pop <= 0:
        raise ValueError("total training population is zero")
    total = float(panel.deaths.sum())
    if total == 0:
        warnings.warn("all training deaths are zero; reference rate is 0", DegenerateModelWarning, stacklevel=2)
        return 0.0
    return total / total_pop


def compute_offsets(panel: ObservationPanel, reference_rate: float | None = None) -> Offsets:
    R = compute_reference_rate(panel) if reference_rate is None else float(reference_rate)
    return Offsets(reference_rate=R, expected=R * panel.population.astype(float), degenerate=R == 0.0)


@dataclass(frozen=True)
class HyperPriors:
    """Half-normal scales on the five standard-deviation parameters."""

    scale_alpha: float = 1.0
    scale_v: float = 1.0
    scale_u: float = 1.0
    scale_kappa: float = 1.0
    scale_omega: float = 1.0

    def __post_init__(self):
        for name in ("scale_alpha", "scale_v", "scale_u", "scale_kappa", "scale_omega"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.scale_alpha, self.scale_v, self.scale_u, self.scale_kappa, self.scale_omega])


@dataclass
class ParameterState:
    """One full latent configuration. ``kappa``/``omega`` cover however many months
    the state currently spans (training months during fitting, the full horizon
    after forecasting)."""

    alpha: float
    u: np.ndarray
    v: np.ndarray
    kappa: np.ndarray
    omega: np.ndarray
    pi: np.ndarray  # (n_areas, n_months_train) in {0, 1}
    rho: float
    sd_alpha: float
    sd_v: float
    sd_u: float
    sd_kappa: float
    sd_omega: float

    @property
    def sds(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in SD_NAMES])

    def copy(self) -> "ParameterState":
        return replace(
            self,
            u=self.u.copy(),
            v=self.v.copy(),
            kappa=self.kappa.copy(),
            omega=self.omega.copy(),
            pi=self.pi.copy(),
        )

    def log_relative_risk(self) -> np.ndarray:
        return self.alpha + (self.u + self.v)[:, None] + self.kappa[None, :] + self.omega


def relative_risk(state: ParameterState, i: int, m: int) -> float:
    """exp(alpha + u_i + v_i + kappa_m + omega_im) for 0-based area/month."""
    if not 0 <= m < state.kappa.shape[0]:
        raise IndexError(f"month {m} outside state horizon {state.kappa.shape[0]}")
    return math.exp(state.alpha + state.u[i] + state.v[i] + state.kappa[m] + state.omega[i, m])


def zip_logpmf_conditional(y, mu, pi):
    """Log-probability of ``y`` given the Poisson mean and the structural-zero flag."""
    y = np.asarray(y)
    mu = np.asarray(mu, dtype=float)
    pi = np.asarray(pi)
    if np.any(y < 0):
        raise ValueError("counts must be non-negative")
    if np.any(mu < 0):
        raise ValueError("mu must be non-negative")
    pois = stats.poisson.logpmf(y, mu)
    out = np.where(pi == 1, np.where(y == 0, 0.0, -np.inf), pois)
    return out[()] if out.ndim == 0 else out


def zip_logpmf_marginal(y, mu, rho):
    """ZIP log-pmf with the structural-zero indicator summed out."""
    y = np.asarray(y)
    mu = np.asarray(mu, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(rho > 1):
        raise ValueError("rho must lie in [0, 1]")
    if np.any(y < 0):
        raise ValueError("counts must be non-negative")
    with np.errstate(divide="ignore"):
        log_rho = np.log(rho)
        log_1m = np.log1p(-rho)
    pos = log_1m + stats.poisson.logpmf(y, mu)
    zero = np.logaddexp(log_rho, log_1m - mu)
    out = np.where(y == 0, zero, pos)
    return out[()] if out.ndim == 0 else out


def zip_moments(mu: float, rho: float) -> tuple[float, float]:
    """Marginal mean and variance of a ZIP count with Poisson mean ``mu``."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    if mu < 0:
        raise ValueError("mu must be non-negative")
    mean = (1 - rho) * mu
    return mean, mean + rho / (1 - rho) * mean**2


def _normal_logpdf(x, sd):
    x = np.asarray(x, dtype=float)
    return float(np.sum(-0.5 * math.log(2 * math.pi) - math.log(sd) - 0.5 * (x / sd) ** 2))


def _halfnormal_logpdf(x, scale):
    return 0.5 * math.log(2 / math.pi) - math.log(scale) - 0.5 * (x / scale) ** 2


def interaction_quadform(graph: AdjacencyGraph, omega: np.ndarray) -> float:
    """``omega' (Q_rw1 (x) Q_icar) omega``: ICAR quadratic form of month-to-month increments."""
    inc = np.diff(omega, axis=1)
    if graph.edge_count == 0 or inc.shape[1] == 0:
        return 0.0
    d = inc[graph.edges[:, 0], :] - inc[graph.edges[:, 1], :]
    return float(np.sum(d * d))


def rw1_quadform(kappa: np.ndarray) -> float:
    d = np.diff(kappa)
    return float(np.dot(d, d))


def check_state(state: ParameterState, panel: ObservationPanel, graph: AdjacencyGraph) -> None:
    """Raise ``ValueError`` if ``state`` breaks a fitting-time invariant."""
    T = panel.n_months_train
    if not 0 <= state.rho <= 1:
        raise ValueError("rho outside [0, 1]")
    for k in SD_NAMES:
        if not getattr(state, k) > 0:
            raise ValueError(f"{k} must be positive")
    if state.pi.shape != panel.deaths.shape:
        raise ValueError("pi must cover the training cells")
    if np.any(state.pi[panel.deaths > 0] != 0):
        raise ValueError("pi = 1 on a cell with a positive count")
    labels = connected_components(graph)
    kap = state.kappa[:T]
    om = state.omega[:, :T]
    if abs(kap.sum()) > CONSTRAINT_TOL * max(1, T):
        raise ValueError("kappa does not sum to zero over training months")
    if np.any(np.abs(om.sum(axis=1)) > CONSTRAINT_TOL * max(1, T)):
        raise ValueError("omega does not sum to zero over training months within each area")
    for c in np.unique(labels):
        mask = labels == c
        tol = CONSTRAINT_TOL * max(1, int(mask.sum()))
        if abs(state.u[mask].sum()) > tol:
            raise ValueError("u does not sum to zero within a connected component")
        if np.any(np.abs(om[mask].sum(axis=0)) > tol):
            raise ValueError("omega does not sum to zero over areas within a component")


def log_joint(
    state: ParameterState,
    panel: ObservationPanel,
    offsets: Offsets,
    graph: AdjacencyGraph,
    priors: HyperPriors,
) -> float:
    """Joint log-density of training data and parameters.

    Proper densities keep their normalising constants. The ICAR and type IV
    terms use ``-(r/2) log(2 pi) - r log(sd) - Q/(2 sd^2)`` with ``r`` the rank of
    the structure matrix, which is the part of their (improper) normaliser that
    depends on ``sd``.
    """
    check_state(state, panel, graph)
    T = panel.n_months_train
    y = panel.deaths
    eta = state.log_relative_risk()[:, :T]
    mu = offsets.expected[:, :T] * np.exp(eta)
    total = float(np.sum(zip_logpmf_conditional(y, mu, state.pi)))

    n_pi = state.pi.sum()
    total += float(special.xlogy(n_pi, state.rho) + special.xlog1py(state.pi.size - n_pi, -state.rho))

    total += _normal_logpdf(state.alpha, state.sd_alpha)
    total += _normal_logpdf(state.v, state.sd_v)

    r = icar_rank(graph)
    total += -0.5 * r * math.log(2 * math.pi) - r * math.log(state.sd_u)
    total += -0.5 * icar_quadform(graph, state.u) / state.sd_u**2

    kap = state.kappa[:T]
    total += _normal_logpdf(np.diff(kap), state.sd_kappa)

    r_om = (T - 1) * r
    total += -0.5 * r_om * math.log(2 * math.pi) - r_om * math.log(state.sd_omega)
    total += -0.5 * interaction_quadform(graph, state.omega[:, :T]) / state.sd_omega**2

    for name, scale in zip(SD_NAMES, priors.as_array()):
        total += _halfnormal_logpdf(getattr(state, name), scale)
    return total
