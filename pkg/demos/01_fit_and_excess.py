"""
Excess deaths on the bundled synthetic panel
============================================

Fit the model on the 24 pre-crisis months, project the rest of the horizon
and compare against what was observed once the crisis hit. The same steps
are available as ``boem fit`` and ``boem predict``; here we call the library
directly so the intermediate objects are visible.

Chains are kept short so the script finishes in well under a minute; expect
somewhat rough R-hat values.
"""

# %%
import numpy as np

from boem.datasets import example_files
from boem.diagnostics import chain_rhat, parameter_summary
from boem.forecast import annual_aggregate, excess_samples, ppd_from_samples, summarize
from boem.io import read_adjacency, read_counts, read_population
from boem.mcmc import McmcConfig, run_chains
from boem.model import HyperPriors, ObservationPanel, compute_offsets, month_years

f = example_files()
ids, pop = read_population(f.population, 2018, 1, 60)
graph = read_adjacency(f.adjacency, ids)
deaths = read_counts(f.counts, ids, 1, 24).astype(int)
panel = ObservationPanel(ids, deaths, pop, n_months_train=24, n_months_total=60)
print(f"{panel.n_areas} areas, {graph.edge_count} adjacencies, {deaths.sum()} training deaths")
print(f"share of zero cells: {np.mean(deaths == 0):.2f}")

# %%
# Offsets are the deaths expected at the pooled training rate.
offsets = compute_offsets(panel)
print(f"reference rate: {offsets.reference_rate * 1e5:.3f} per 100k person-months")

# %%
cfg = McmcConfig(n_chains=2, n_iterations=3000, n_burnin=1500, thin=5, seed=1)
samples = run_chains(panel, offsets, graph, HyperPriors(), cfg)

print(f"{'':10s}{'Mean':>8s}{'SD':>8s}{'2.5%':>8s}{'Median':>8s}{'97.5%':>8s}{'R-hat':>8s}")
for name, draws in samples.scalar_params().items():
    s = parameter_summary(draws)
    print(f"{name:10s}" + "".join(f"{v:8.3f}" for v in s.values()) + f"{chain_rhat(draws):8.3f}")

# %%
# Posterior predictive counts for all 60 months. Training months are redrawn
# too, which gives the pre-crisis baseline for excess.
ppd = ppd_from_samples(samples, offsets, graph, 60, seed=1, max_draws=500)
observed = np.hstack([deaths, read_counts(f.crisis_counts, ids, 25, 60)])

# statewide totals, draw by draw, before taking quantiles
tot_pred = ppd.counts.sum(axis=1)
tot_excess = excess_samples(observed.sum(axis=0), tot_pred)
lo, med, hi = summarize(tot_excess)
years = month_years(60, 2018)
for yr in np.unique(years):
    sel = years == yr
    print(f"{yr}: observed {observed[:, sel].sum():5.0f}  "
          f"monthly excess median ranges {med[sel].min():6.1f} to {med[sel].max():6.1f}")

# %%
# Annual county excess is the per-draw sum over the year, then summarized.
agg = annual_aggregate(excess_samples(observed, ppd), years)
lo, med, hi = summarize(agg.draws)
k = list(agg.years).index(2021)
top = np.argsort(med[:, k])[::-1][:5]
print("largest 2021 county excess (median and 95% interval):")
for i in top:
    print(f"  {ids[i]}  {med[i, k]:6.1f}  ({lo[i, k]:.1f}, {hi[i, k]:.1f})")
