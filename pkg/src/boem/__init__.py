"""Bayesian excess mortality for small areas: a zero-inflated Poisson
spatio-temporal model fitted on pre-crisis months and projected forward."""

from .diagnostics import ess, rhat
from .forecast import annual_aggregate, excess_samples, forecast_state, ppd_from_samples, rates, sample_ppd, summarize
from .graph import AdjacencyGraph, GraphError, from_edges, icar_quadform, load_adjacency
from .mcmc import McmcConfig, McmcError, PosteriorSamples, run_chain, run_chains
from .model import (
    HyperPriors,
    ObservationPanel,
    Offsets,
    ParameterState,
    compute_offsets,
    log_joint,
    zip_logpmf_marginal,
    zip_moments,
)
from .simulate import GenConfig, MetricsReport, aggregate_metrics, generate_truth, run_replication

__version__ = "0.1.0"

__all__ = [
    "ess",
    "rhat",
    "annual_aggregate",
    "excess_samples",
    "forecast_state",
    "ppd_from_samples",
    "rates",
    "sample_ppd",
    "summarize",
    "AdjacencyGraph",
    "GraphError",
    "from_edges",
    "icar_quadform",
    "load_adjacency",
    "McmcConfig",
    "McmcError",
    "PosteriorSamples",
    "run_chain",
    "run_chains",
    "HyperPriors",
    "ObservationPanel",
    "Offsets",
    "ParameterState",
    "compute_offsets",
    "log_joint",
    "zip_logpmf_marginal",
    "zip_moments",
    "GenConfig",
    "MetricsReport",
    "aggregate_metrics",
    "generate_truth",
    "run_replication",
]
