"""Out-of-sample validation on synthetic panels.

Truth is generated from a no-crisis process (ICAR + iid area effects, a
monthly random walk, iid cell noise, structural zeros), the model is fitted
on the training months only, and the held-out counts are scored against the
posterior predictive median and 95% interval.

Error convention: ``error = chi_hat - chi_true = (y - y_hat) - (y - y_true)``,
which reduces to ``y_true - y_hat`` because the observed series cancels.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .forecast import ppd_from_samples, summarize
from .graph import AdjacencyGraph, icar_sampling_basis
from .mcmc import McmcConfig, run_chains
from .model import HyperPriors, ObservationPanel, Offsets

METRIC_COLUMNS = ("n_leftout", "me", "mde", "mae", "mse", "mre", "mdre", "mare", "coverage95")


@dataclass(frozen=True)
class GenConfig:
    alpha_true: float = 0.1
    tau_true: float = 1.0
    sd_v_true: float = 0.1
    sd_omega_true: float = 0.5
    rho_true: float = 0.2
    sd_kappa_true: float = 0.05
    seed: int = 0
    # put the training-month mean of kappa into nothing but alpha, as the fitted model does
    center_kappa: bool = True

    def __post_init__(self):
        for name in ("tau_true", "sd_v_true", "sd_omega_true", "sd_kappa_true"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.tau_true > 0:
            raise ValueError("tau_true must be positive")
        if not 0.0 <= self.rho_true <= 1.0:
            raise ValueError("rho_true must lie in [0, 1]")


@dataclass
class Truth:
    u: np.ndarray
    v: np.ndarray
    kappa: np.ndarray
    omega: np.ndarray
    log_theta: np.ndarray
    pi: np.ndarray
    y: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return np.exp(self.log_theta)


def generate_truth(
    graph: AdjacencyGraph,
    offsets: Offsets,
    gen: GenConfig,
    rng,
    n_months_train: int | None = None,
) -> Truth:
    """Draw one synthetic panel over every month ``offsets`` covers."""
    n, T = offsets.expected.shape
    basis = icar_sampling_basis(graph)
    u = basis @ rng.standard_normal(basis.shape[1]) / np.sqrt(gen.tau_true)
    v = gen.sd_v_true * rng.standard_normal(n)
    kappa = np.cumsum(gen.sd_kappa_true * rng.standard_normal(T))
    if gen.center_kappa:
        kappa -= kappa[: n_months_train or T].mean()
    omega = gen.sd_omega_true * rng.standard_normal((n, T))
    log_theta = gen.alpha_true + (u + v)[:, None] + kappa[None, :] + omega
    pi = (rng.random((n, T)) < gen.rho_true).astype(np.int64)
    y = rng.poisson(offsets.expected * np.exp(log_theta))
    y[pi == 1] = 0
    return Truth(u=u, v=v, kappa=kappa, omega=omega, log_theta=log_theta, pi=pi, y=y)


@dataclass
class ReplicationResult:
    replication: int
    truth: Truth
    errors: np.ndarray  # (n_areas, n_leftout_months)
    truths: np.ndarray
    covered: np.ndarray
    pred_med: np.ndarray
    pred_lo: np.ndarray
    pred_hi: np.ndarray
    alpha_ci: tuple = (np.nan, np.nan)
    rho_ci: tuple = (np.nan, np.nan)
    alpha_covered: bool | None = None
    rho_covered: bool | None = None


def excess_errors(observed, pred_med, truth) -> np.ndarray:
    """Error between estimated and true excess for an arbitrary observed series."""
    chi_hat = np.asarray(observed) - pred_med
    chi_true = np.asarray(observed) - truth
    return chi_hat - chi_true


def _ci(x, level=0.95):
    a = (1 - level) / 2
    lo, hi = np.quantile(np.ravel(x), [a, 1 - a])
    return float(lo), float(hi)


def run_replication(
    graph: AdjacencyGraph,
    population: np.ndarray,
    reference_rate: float,
    gen: GenConfig,
    fit_config: McmcConfig,
    n_months_train: int,
    replication: int = 0,
    priors: HyperPriors = HyperPriors(),
    ppd_samples: int | None = None,
    oracle: bool = False,
    anchor=(2018, 1),
) -> ReplicationResult:
    """Generate, fit on months ``< n_months_train``, score the rest.

    Replication ``r`` draws its truth from ``default_rng([gen.seed, r])`` and
    fits with chain seeds derived from the same pair. ``oracle=True`` skips the
    fit and predicts the truth exactly (harness self-test).
    """
    n, T_total = population.shape
    T = n_months_train
    # same offsets for generation and fitting, so alpha keeps its meaning
    panel_pop = np.asarray(population)
    offsets = Offsets(reference_rate=reference_rate, expected=reference_rate * panel_pop.astype(float), degenerate=False)
    rng = np.random.default_rng([gen.seed, replication])
    truth = generate_truth(graph, offsets, gen, rng, T)
    held = truth.y[:, T:].astype(float)
    if oracle:
        med = lo = hi = held.copy()
        res = ReplicationResult(replication, truth, np.zeros_like(held), held, np.ones(held.shape, bool), med, lo, hi)
        return res

    panel = ObservationPanel(
        area_ids=graph.area_ids,
        deaths=truth.y[:, :T],
        population=panel_pop,
        n_months_train=T,
        n_months_total=T_total,
        anchor_year=anchor[0],
        anchor_month=anchor[1],
    )
    fit_seed = int(np.random.SeedSequence([gen.seed, replication, 1]).generate_state(1)[0])
    cfg = replace(fit_config, seed=fit_seed)
    samples = run_chains(panel, offsets, graph, priors, cfg)
    ppd = ppd_from_samples(samples, offsets, graph, T_total, seed=fit_seed, max_draws=ppd_samples)
    lo, med, hi = summarize(ppd.counts[:, :, T:])
    errors = held - med
    covered = (held >= lo) & (held <= hi)
    a_ci = _ci(samples.alpha)
    r_ci = _ci(samples.rho)
    return ReplicationResult(
        replication=replication,
        truth=truth,
        errors=errors,
        truths=held,
        covered=covered,
        pred_med=med,
        pred_lo=lo,
        pred_hi=hi,
        alpha_ci=a_ci,
        rho_ci=r_ci,
        alpha_covered=a_ci[0] <= gen.alpha_true <= a_ci[1],
        rho_covered=r_ci[0] <= gen.rho_true <= r_ci[1],
    )


@dataclass(frozen=True)
class MetricsReport:
    n_leftout: int
    me: float
    mde: float
    mae: float
    mse: float
    mre: float
    mdre: float
    mare: float
    coverage95: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_COLUMNS}


def aggregate_metrics(errors, truths, flags) -> MetricsReport:
    """Table-style summary. MAE is the median absolute error; relative errors
    divide by ``max(1, truth)``."""
    e = np.ravel(np.asarray(errors, dtype=float))
    t = np.ravel(np.asarray(truths, dtype=float))
    f = np.ravel(np.asarray(flags, dtype=bool))
    if e.size == 0:
        raise ValueError("no errors to summarize")
    if not (e.size == t.size == f.size):
        raise ValueError("errors, truths and flags must have the same size")
    rel = e / np.maximum(1.0, t)
    return MetricsReport(
        n_leftout=int(e.size),
        me=float(e.mean()),
        mde=float(np.median(e)),
        mae=float(np.median(np.abs(e))),
        mse=float(np.mean(e**2)),
        mre=float(rel.mean()),
        mdre=float(np.median(rel)),
        mare=float(np.median(np.abs(rel))),
        coverage95=float(f.mean()),
    )


def _replication_job(args):
    return run_replication(*args[:-1], **args[-1])


def run_validation(
    graph: AdjacencyGraph,
    population: np.ndarray,
    reference_rate: float,
    gen: GenConfig,
    fit_config: McmcConfig,
    n_months_train: int,
    n_replications: int = 20,
    priors: HyperPriors = HyperPriors(),
    ppd_samples: int | None = None,
    oracle: bool = False,
    n_jobs: int = 1,
    progress=None,
) -> list[ReplicationResult]:
    """Replications ``0..K-1``; results do not depend on ``n_jobs``."""
    kw = dict(priors=priors, ppd_samples=ppd_samples, oracle=oracle)
    jobs = [(graph, population, reference_rate, gen, fit_config, n_months_train, r, kw) for r in range(n_replications)]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            return list(ex.map(_replication_job, jobs))
    out = []
    for job in jobs:
        out.append(_replication_job(job))
        if progress is not None:
            progress(out[-1])
    return out


def metrics_rows(results: list[ReplicationResult]) -> list[dict]:
    """One row per replication plus a pooled ``all`` row."""
    rows = []
    for r in results:
        m = aggregate_metrics(r.errors, r.truths, r.covered)
        rows.append({"replication": r.replication, **m.as_dict(),
                     "alpha_covered": r.alpha_covered, "rho_covered": r.rho_covered})
    pooled = aggregate_metrics(
        np.concatenate([r.errors.ravel() for r in results]),
        np.concatenate([r.truths.ravel() for r in results]),
        np.concatenate([r.covered.ravel() for r in results]),
    )
    flags = lambda k: [getattr(r, k) for r in results if getattr(r, k) is not None]  # noqa: E731
    rows.append({"replication": "all", **pooled.as_dict(),
                 "alpha_covered": np.mean(flags("alpha_covered")) if flags("alpha_covered") else None,
                 "rho_covered": np.mean(flags("rho_covered")) if flags("rho_covered") else None})
    return rows
