"""Synthetic example dataset: a 159-county planar adjacency graph with
Georgia-like county populations, plus counts simulated from the model.

The shipped CSVs under ``boem/data`` were written by :func:`write_example_dataset`
with the default arguments; regenerating reproduces them exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

N_COUNTIES = 159
# outline loosely shaped like Georgia (km, origin at the south-west corner)
_OUTLINE = np.array([[0, 0], [250, -10], [330, 30], [400, 150], [420, 230], [330, 390], [240, 470], [0, 470]], float)
# Georgia opioid deaths per person-month, roughly 2018-2019
EXAMPLE_REFERENCE_RATE = 7.0e-6


def _inside(points, poly):
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), bool)
    j = len(poly) - 1
    for i in range(len(poly)):
        xi, yi = poly[i]
        xj, yj = poly[j]
        cross = ((yi > y) != (yj > y)) & (x < (xj - xi) * (y - yi) / (yj - yi + 1e-300) + xi)
        inside ^= cross
        j = i
    return inside


def county_centroids(n: int = N_COUNTIES, seed: int = 2018) -> np.ndarray:
    """Jittered-lattice centroids inside the outline, exactly ``n`` of them."""
    rng = np.random.default_rng(seed)
    spacing = 31.0
    xs = np.arange(spacing / 2, 430, spacing)
    ys = np.arange(-20 + spacing / 2, 480, spacing)
    grid = np.array([(x + (spacing / 2 if k % 2 else 0.0), y) for k, y in enumerate(ys) for x in xs])
    grid += rng.uniform(-0.3, 0.3, grid.shape) * spacing
    pts = grid[_inside(grid, _OUTLINE)]
    if len(pts) < n:
        raise RuntimeError("outline too small for requested county count")
    # drop points nearest the outline's east edge until n remain
    keep = rng.permutation(len(pts))[:n]
    return pts[np.sort(keep)]


def adjacency_edges(points: np.ndarray, max_len_factor: float = 1.6) -> list[tuple[int, int]]:
    """Delaunay edges with long hull-spanning edges removed."""
    tri = Delaunay(points)
    edges = set()
    for s in tri.simplices:
        for a, b in ((s[0], s[1]), (s[1], s[2]), (s[0], s[2])):
            edges.add((min(a, b), max(a, b)))
    edges = sorted(edges)
    lengths = np.array([np.linalg.norm(points[a] - points[b]) for a, b in edges])
    cut = max_len_factor * np.median(lengths)
    return [e for e, L in zip(edges, lengths) if L <= cut]


def county_populations(n: int = N_COUNTIES, seed: int = 2019) -> np.ndarray:
    """2018 populations: a lognormal body with a handful of metro counties."""
    rng = np.random.default_rng(seed)
    pop = np.exp(rng.normal(np.log(24_000), 0.85, n))
    metro = rng.choice(n, 6, replace=False)
    pop[metro] = rng.uniform(250_000, 1_000_000, 6)
    return np.clip(np.round(pop), 1_700, None).astype(np.int64)


def area_ids(n: int = N_COUNTIES) -> list[str]:
    return [f"C{k:03d}" for k in range(1, n + 1)]


@dataclass
class ExampleFiles:
    adjacency: Path
    population: Path
    counts: Path
    crisis_counts: Path
    config: Path


def example_files() -> ExampleFiles:
    base = Path(str(resources.files("boem") / "data"))
    return ExampleFiles(
        adjacency=base / "adjacency.csv",
        population=base / "population.csv",
        counts=base / "counts.csv",
        crisis_counts=base / "crisis_counts.csv",
        config=base / "example_config.yaml",
    )


def yearly_populations(base: np.ndarray, years, growth_seed: int = 2020) -> np.ndarray:
    """(n_areas, n_years) populations: ``base`` in the first year, then a small
    county-specific annual growth."""
    rng = np.random.default_rng(growth_seed)
    growth = 1.0 + rng.normal(0.008, 0.006, base.size)
    k = np.arange(len(years))
    return np.round(base[:, None] * growth[:, None] ** k[None, :]).astype(np.int64)


def crisis_uplift(n_areas: int, n_months_total: int, onset: int, seed: int = 2021) -> np.ndarray:
    """Log relative-risk uplift from month index ``onset`` (0-based) on: ramps to
    a county-specific plateau around +0.5 over a year."""
    rng = np.random.default_rng(seed)
    plateau = rng.normal(0.5, 0.2, n_areas)
    m = np.arange(n_months_total) - onset
    ramp = np.clip((m + 1) / 12.0, 0.0, 1.0)
    return plateau[:, None] * ramp[None, :]


def write_example_dataset(
    out_dir,
    n_months_train: int = 24,
    n_months_total: int = 60,
    anchor_year: int = 2018,
    seed: int = 7,
) -> ExampleFiles:
    """Write adjacency, population, training counts and crisis-period counts.

    Counts follow the validation generator (no-crisis truth) through the
    training window; from March 2020 on the crisis file adds an uplift to the
    log relative risk, reusing the same structural zeros and cell noise.
    """
    import pandas as pd

    from .graph import from_edges
    from .model import Offsets, month_years
    from .simulate import GenConfig, generate_truth

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = area_ids()
    pts = county_centroids()
    edges = adjacency_edges(pts)
    graph = from_edges([(ids[a], ids[b]) for a, b in edges], ids)

    years = np.unique(month_years(n_months_total, anchor_year))
    pop_year = yearly_populations(county_populations(), years)
    col = month_years(n_months_total, anchor_year) - anchor_year
    pop = pop_year[:, col]

    offsets = Offsets(EXAMPLE_REFERENCE_RATE, EXAMPLE_REFERENCE_RATE * pop.astype(float), False)
    gen = GenConfig(seed=seed, sd_omega_true=0.2)
    rng = np.random.default_rng(seed)
    truth = generate_truth(graph, offsets, gen, rng, n_months_train)
    onset = (2020 - anchor_year) * 12 + 2
    lam = offsets.expected * np.exp(truth.log_theta + crisis_uplift(len(ids), n_months_total, onset))
    crisis = rng.poisson(lam)
    crisis[truth.pi == 1] = 0

    files = ExampleFiles(
        adjacency=out / "adjacency.csv",
        population=out / "population.csv",
        counts=out / "counts.csv",
        crisis_counts=out / "crisis_counts.csv",
        config=out / "example_config.yaml",
    )
    pd.DataFrame([(ids[a], ids[b]) for a, b in edges], columns=["area_a", "area_b"]).to_csv(files.adjacency, index=False)
    pd.DataFrame(
        [(ids[i], int(yr), int(pop_year[i, k])) for i in range(len(ids)) for k, yr in enumerate(years)],
        columns=["area_id", "year", "population"],
    ).to_csv(files.population, index=False)

    def counts_frame(y, months):
        return pd.DataFrame(
            [(ids[i], m + 1, int(y[i, m])) for i in range(len(ids)) for m in months],
            columns=["area_id", "month_index", "deaths"],
        )

    counts_frame(truth.y, range(n_months_train)).to_csv(files.counts, index=False)
    counts_frame(crisis, range(n_months_train, n_months_total)).to_csv(files.crisis_counts, index=False)
    files.config.write_text(EXAMPLE_CONFIG.format(T=n_months_train, TT=n_months_total, year=anchor_year))
    return files


EXAMPLE_CONFIG = """\
# Runs every command on the bundled synthetic dataset. Paths are relative to this file.
counts: counts.csv
population: population.csv
adjacency: adjacency.csv
crisis_counts: crisis_counts.csv
out_dir: boem_out
n_months_train: {T}
n_months_total: {TT}
anchor_year: {year}
anchor_month: 1
# reduced from the full 8 x 80,000 so the example finishes in a few minutes
n_chains: 4
n_iterations: 10000
n_burnin: 5000
thin: 5
seed: 2024
ppd_samples: 2000
"""
