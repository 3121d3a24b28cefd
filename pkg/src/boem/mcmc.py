"""Metropolis-within-Gibbs sampler for the zero-inflated spatio-temporal model.

Sweep order is fixed: structural-zero indicators (Gibbs), rho (Gibbs),
alpha, v, u, kappa, omega (sitewise random-walk Metropolis), the five log
standard deviations (conditional and joint-rescaling moves), then one
elliptical slice move each for the v, u, kappa and omega fields. The slice moves
shift the smooth, strongly correlated modes that sitewise updates barely
touch. Step sizes adapt per site during burn-in only.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .graph import AdjacencyGraph, connected_components, icar_rank, icar_sampling_basis, rw1_sampling_basis
from .model import (
    SD_NAMES,
    HyperPriors,
    ObservationPanel,
    Offsets,
    ParameterState,
    log_joint,
)

log = logging.getLogger(__name__)

REFRESH_EVERY = 50
# angle draws available to one elliptical slice move
ESS_BUDGET = 48


class McmcError(RuntimeError):
    def __init__(self, message, chain=None):
        super().__init__(message if chain is None else f"chain {chain}: {message}")
        self.chain = chain


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 8
    n_iterations: int = 80_000
    n_burnin: int = 40_000
    thin: int = 10
    seed: int = 0
    adapt_target: float = 0.44
    adapt_window: int = 50
    adapt_c: float = 1.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ValueError("need 0 <= n_burnin < n_iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be >= 1")

    @property
    def n_saved(self) -> int:
        return (self.n_iterations - self.n_burnin) // self.thin


# --- single-site building blocks (reference versions of what the kernel does) ---


def gibbs_update_pi(y: int, mu: float, rho: float, rng) -> int:
    """Draw the structural-zero indicator from its full conditional."""
    return int(rng.random() < pi_conditional_prob(y, mu, rho))


def pi_conditional_prob(y: int, mu: float, rho: float) -> float:
    """P(pi = 1 | y, mu, rho)."""
    if y > 0:
        return 0.0
    a = rho
    b = (1.0 - rho) * math.exp(-mu)
    return a / (a + b) if a + b > 0 else 0.0


def rho_conditional_params(pi) -> tuple[float, float]:
    pi = np.asarray(pi)
    s = float(pi.sum())
    return 1.0 + s, 1.0 + pi.size - s


def gibbs_update_rho(pi, rng) -> float:
    """Conjugate Beta draw for rho under its Uniform(0, 1) prior."""
    a, b = rho_conditional_params(pi)
    return float(rng.beta(a, b))


def mh_update_scalar(current: float, logpost_delta, step_sd: float, rng) -> tuple[float, bool]:
    """One random-walk Metropolis step.

    ``logpost_delta(proposed)`` returns log p(proposed) - log p(current).
    For positive parameters, call this on the log scale and include the
    Jacobian (``+ log x``) in ``logpost_delta``.
    """
    if not step_sd > 0:
        raise ValueError("step_sd must be positive")
    proposal = current + step_sd * rng.standard_normal()
    lr = logpost_delta(proposal)
    if math.isnan(lr):
        raise McmcError(f"log-posterior difference is NaN at {proposal!r}")
    if lr >= 0 or math.log(rng.random()) < lr:
        return proposal, True
    return current, False


def adapt_step(step_sd: float, recent_accept_rate: float, target: float = 0.44, t: int = 1, c: float = 1.0):
    """Robbins-Monro scaling of a proposal sd towards the target acceptance rate.

    Works elementwise on arrays.
    """
    gamma = min(1.0, c / math.sqrt(max(t, 1)))
    return step_sd * np.exp(gamma * (np.asarray(recent_accept_rate) - target))


# --- chains ---


@dataclass
class ChainResult:
    chain: int
    seed: int
    iteration: np.ndarray
    alpha: np.ndarray
    rho: np.ndarray
    sds: np.ndarray  # (S, 5)
    u: np.ndarray
    v: np.ndarray
    kappa: np.ndarray
    omega: np.ndarray
    acceptance: dict = field(default_factory=dict)
    adapting_after_burnin: bool = False


@dataclass
class PosteriorSamples:
    """Saved draws from one or more chains, stacked as ``(chain, draw, ...)``."""

    area_ids: tuple
    n_months_train: int
    iteration: np.ndarray
    alpha: np.ndarray
    rho: np.ndarray
    sds: np.ndarray
    u: np.ndarray
    v: np.ndarray
    kappa: np.ndarray
    omega: np.ndarray
    seeds: tuple = ()
    acceptance: tuple = ()

    @property
    def n_chains(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_draws(self) -> int:
        return self.alpha.shape[1]

    def sd(self, name: str) -> np.ndarray:
        return self.sds[..., SD_NAMES.index(name)]

    def scalar_params(self) -> dict:
        out = {"alpha": self.alpha, "rho": self.rho}
        for k, name in enumerate(SD_NAMES):
            out[name] = self.sds[..., k]
        return out

    def state(self, chain: int, draw: int) -> ParameterState:
        n, T = self.omega.shape[2:]
        sd = self.sds[chain, draw]
        return ParameterState(
            alpha=float(self.alpha[chain, draw]),
            u=self.u[chain, draw].copy(),
            v=self.v[chain, draw].copy(),
            kappa=self.kappa[chain, draw].copy(),
            omega=self.omega[chain, draw].copy(),
            pi=np.zeros((n, T), dtype=np.int64),
            rho=float(self.rho[chain, draw]),
            **{k: float(s) for k, s in zip(SD_NAMES, sd)},
        )

    def iter_states(self):
        for c in range(self.n_chains):
            for s in range(self.n_draws):
                yield self.state(c, s)

    @classmethod
    def from_chains(cls, chains: list[ChainResult], area_ids, n_months_train: int) -> "PosteriorSamples":
        stack = lambda name: np.stack([getattr(r, name) for r in chains])  # noqa: E731
        return cls(
            area_ids=tuple(area_ids),
            n_months_train=n_months_train,
            iteration=stack("iteration"),
            alpha=stack("alpha"),
            rho=stack("rho"),
            sds=stack("sds"),
            u=stack("u"),
            v=stack("v"),
            kappa=stack("kappa"),
            omega=stack("omega"),
            seeds=tuple(r.seed for r in chains),
            acceptance=tuple(r.acceptance for r in chains),
        )


def initial_state(panel: ObservationPanel, rng) -> ParameterState:
    n, T = panel.n_areas, panel.n_months_train
    zero = panel.deaths == 0
    pi = (zero & (rng.random((n, T)) < 0.5)).astype(np.int64)
    return ParameterState(
        alpha=0.0,
        u=np.zeros(n),
        v=np.zeros(n),
        kappa=np.zeros(T),
        omega=np.zeros((n, T)),
        pi=pi,
        rho=0.5,
        sd_alpha=0.1,
        sd_v=0.1,
        sd_u=0.1,
        sd_kappa=0.1,
        sd_omega=0.1,
    )


def _component_tables(graph: AdjacencyGraph):
    comp = connected_components(graph)
    n_comp = int(comp.max()) + 1 if comp.size else 0
    comp_size = np.bincount(comp, minlength=n_comp).astype(np.int64)
    out_ptr = np.zeros(n_comp + 1, dtype=np.int64)
    out_lists = []
    for c in range(n_comp):
        if comp_size[c] >= 2:
            outside = np.flatnonzero(comp != c)
        else:
            outside = np.zeros(0, dtype=np.int64)
        out_lists.append(outside.astype(np.int64))
        out_ptr[c + 1] = out_ptr[c] + outside.size
    out_idx = np.concatenate(out_lists) if out_lists else np.zeros(0, dtype=np.int64)
    return comp.astype(np.int64), comp_size, n_comp, out_ptr, out_idx


def run_chain(
    panel: ObservationPanel,
    offsets: Offsets,
    graph: AdjacencyGraph,
    priors: HyperPriors,
    config: McmcConfig,
    chain_seed: int,
    chain: int = 1,
) -> ChainResult:
    """Run one chain; fully determined by ``chain_seed``."""
    rng = np.random.default_rng(chain_seed)
    n, T = panel.n_areas, panel.n_months_train
    y = np.ascontiguousarray(panel.deaths, dtype=np.float64)
    X = np.ascontiguousarray(offsets.expected[:, :T], dtype=np.float64)

    st = initial_state(panel, rng)
    lj = log_joint(st, panel, offsets, graph, priors)
    if not np.isfinite(lj):
        raise McmcError(f"non-finite log joint ({lj}) at initial state", chain)

    nb_ptr, nb_idx = graph.csr()
    comp, comp_size, n_comp, out_ptr, out_idx = _component_tables(graph)
    rank_u = float(icar_rank(graph))
    hp = priors.as_array()

    pi = st.pi
    par = np.array([st.alpha])
    u, v, kap, om = st.u, st.v, st.kappa, st.omega
    sds = st.sds
    rho = st.rho
    eta = np.zeros((n, T))
    mu = np.zeros((n, T))
    K.linear_predictor(par[0], u, v, kap, om, X, eta, mu)

    step = {
        "alpha": np.full(1, 0.05),
        # field steps are in units of the field's current sd
        "v": np.full(n, 1.0),
        "u": np.full(n, 1.0),
        "kappa": np.full(T, 1.0),
        "omega": np.full((n, T), 1.0),
        "sd": np.full(5, 0.3),
        "scale": np.full(5, 0.1),
    }
    acc = {k: np.zeros_like(s, dtype=np.int64) for k, s in step.items()}
    n_rand = 1 + 2 * n + T + n * T + 10
    Bs = icar_sampling_basis(graph)
    Bt = rw1_sampling_basis(T)
    cur = np.empty((n, T))
    nu = np.empty((n, T))

    S = config.n_saved
    out = ChainResult(
        chain=chain,
        seed=chain_seed,
        iteration=np.zeros(S, dtype=np.int64),
        alpha=np.zeros(S),
        rho=np.zeros(S),
        sds=np.zeros((S, 5)),
        u=np.zeros((S, n)),
        v=np.zeros((S, n)),
        kappa=np.zeros((S, T)),
        omega=np.zeros((S, n, T)),
    )
    adapting = config.n_burnin > 0
    window = 0
    saved = 0
    for it in range(1, config.n_iterations + 1):
        if it == config.n_burnin + 1:
            adapting = False
            for a in acc.values():
                a[:] = 0
        unif = rng.random(n * T)
        n_pi = K.update_pi(y, mu, rho, unif, pi)
        rho = float(rng.beta(1.0 + n_pi, 1.0 + n * T - n_pi))
        z = rng.standard_normal(n_rand)
        e = rng.standard_exponential(n_rand)
        K.mh_sweep(
            y, mu, pi, eta,
            par, u, v, kap, om, sds,
            nb_ptr, nb_idx, comp, comp_size, out_ptr, out_idx,
            hp, rank_u,
            z, e,
            step["alpha"], step["v"], step["u"], step["kappa"], step["omega"], step["sd"], step["scale"],
            acc["alpha"], acc["v"], acc["u"], acc["kappa"], acc["omega"], acc["sd"], acc["scale"],
            n_comp,
        )
        _slice_moves(rng, y, X, pi, eta, mu, v, u, kap, om, sds, Bs, Bt, cur, nu)
        if it % REFRESH_EVERY == 0:
            # bound round-off drift in the incrementally updated caches
            K.linear_predictor(par[0], u, v, kap, om, X, eta, mu)

        if adapting and it % config.adapt_window == 0:
            window += 1
            for k in step:
                rate = acc[k] / config.adapt_window
                step[k] = adapt_step(step[k], rate, config.adapt_target, window, config.adapt_c)
                acc[k][:] = 0

        if it > config.n_burnin:
            if adapting:
                out.adapting_after_burnin = True
            j = it - config.n_burnin
            if j % config.thin == 0:
                if not (np.isfinite(par[0]) and np.all(np.isfinite(sds)) and np.all(np.isfinite(eta))):
                    raise McmcError(f"non-finite state at iteration {it}", chain)
                out.iteration[saved] = it
                out.alpha[saved] = par[0]
                out.rho[saved] = rho
                out.sds[saved] = sds
                out.u[saved] = u
                out.v[saved] = v
                out.kappa[saved] = kap
                out.omega[saved] = om
                saved += 1

    n_post = config.n_iterations - config.n_burnin
    rates = {
        "alpha": float(acc["alpha"][0]) / n_post,
        "v": float(acc["v"].mean()) / n_post if n else math.nan,
        "u": _active_mean(acc["u"], comp_size[comp] >= 2) / n_post if n else math.nan,
        "kappa": float(acc["kappa"].mean()) / n_post if T >= 2 else math.nan,
        "omega": _active_mean(acc["omega"], (comp_size[comp] >= 2)[:, None] & np.ones((1, T), bool)) / n_post
        if T >= 2
        else math.nan,
    }
    for k, name in enumerate(SD_NAMES):
        rates[name] = float(acc["sd"][k]) / n_post
        rates[f"scale_{name}"] = float(acc["scale"][k]) / n_post
    out.acceptance = rates
    return out


def _slice_moves(rng, y, X, pi, eta, mu, v, u, kap, om, sds, Bs, Bt, cur, nu):
    """Elliptical slice updates of v, u, kappa and omega against exact draws
    from their (constrained) priors at the current standard deviations."""
    r, q = Bs.shape[1], Bt.shape[1]
    n = v.shape[0]
    if n:
        nu_v = sds[1] * rng.standard_normal(n)
        cur[:] = v[:, None]
        nu[:] = nu_v[:, None]
        th = K.ess_field(eta, mu, X, y, pi, cur, nu, math.log(rng.random()), rng.random(ESS_BUDGET))
        v[:] = v * math.cos(th) + nu_v * math.sin(th)
    if r:
        nu_u = sds[2] * (Bs @ rng.standard_normal(r))
        cur[:] = u[:, None]
        nu[:] = nu_u[:, None]
        th = K.ess_field(eta, mu, X, y, pi, cur, nu, math.log(rng.random()), rng.random(ESS_BUDGET))
        u[:] = u * math.cos(th) + nu_u * math.sin(th)
    if q:
        nu_k = sds[3] * (Bt @ rng.standard_normal(q))
        cur[:] = kap[None, :]
        nu[:] = nu_k[None, :]
        th = K.ess_field(eta, mu, X, y, pi, cur, nu, math.log(rng.random()), rng.random(ESS_BUDGET))
        kap[:] = kap * math.cos(th) + nu_k * math.sin(th)
    if r and q:
        nu[:] = sds[4] * (Bs @ rng.standard_normal((r, q)) @ Bt.T)
        th = K.ess_field(eta, mu, X, y, pi, om, nu, math.log(rng.random()), rng.random(ESS_BUDGET))
        om[:] = om * math.cos(th) + nu * math.sin(th)


def _active_mean(a, mask):
    return float(a[mask].mean()) if mask.any() else math.nan


def _run_chain_job(args):
    return run_chain(*args)


def chain_seeds(config: McmcConfig) -> list[int]:
    return [config.seed + c for c in range(1, config.n_chains + 1)]


def run_chains(
    panel: ObservationPanel,
    offsets: Offsets,
    graph: AdjacencyGraph,
    priors: HyperPriors,
    config: McmcConfig,
) -> PosteriorSamples:
    """Run ``config.n_chains`` independent chains; chain ``c`` (1-based) uses
    seed ``config.seed + c``. ``config.n_jobs > 1`` runs them in worker
    processes; results do not depend on it."""
    jobs = [(panel, offsets, graph, priors, config, s, c + 1) for c, s in enumerate(chain_seeds(config))]
    if config.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.n_jobs, len(jobs))) as ex:
            futures = [ex.submit(_run_chain_job, j) for j in jobs]
            results = []
            for c, f in enumerate(futures, start=1):
                try:
                    results.append(f.result())
                except McmcError:
                    raise
                except Exception as exc:  # pragma: no cover - worker crash
                    raise McmcError(str(exc), c) from exc
    else:
        results = []
        for job in jobs:
            try:
                results.append(run_chain(*job))
            except McmcError:
                raise
            except Exception as exc:
                raise McmcError(str(exc), job[-1]) from exc
    for r in results:
        if r.adapting_after_burnin:
            raise McmcError("adaptation still active after burn-in", r.chain)
        log.debug("chain %d acceptance %s", r.chain, r.acceptance)
    return PosteriorSamples.from_chains(results, panel.area_ids, panel.n_months_train)
