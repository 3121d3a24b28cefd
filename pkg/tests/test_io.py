import numpy as np
import pytest

from boem.datasets import example_files
from boem.graph import from_edges
from boem.io import (
    DIAGNOSTICS_HEADER,
    EXCESS_ANNUAL_HEADER,
    EXCESS_HEADER,
    GEN_TRUTH_HEADER,
    METRICS_HEADER,
    SUMMARY_HEADER,
    TRACE_HEADER,
    ConfigError,
    DataError,
    draw_columns,
    load_config,
    read_adjacency,
    read_counts,
    read_draws,
    read_population,
    write_draws,
    write_traces,
)
from boem.mcmc import McmcConfig, run_chains
from boem.model import HyperPriors, ObservationPanel, compute_offsets


def write(path, text):
    path.write_text(text)
    return path


# --- golden headers ---


def test_golden_headers():
    assert EXCESS_HEADER == ["area_id", "month_index", "observed", "pop", "pred_med", "pred_lo", "pred_hi",
                             "excess_med", "excess_lo", "excess_hi", "rate_obs", "rate_pred_med",
                             "emr_med", "emr_lo", "emr_hi"]
    assert EXCESS_ANNUAL_HEADER == ["area_id", "year"] + EXCESS_HEADER[2:] + ["partial"]
    assert SUMMARY_HEADER == ["parameter", "Mean", "SD", "95% lower", "Median", "95% upper"]
    assert DIAGNOSTICS_HEADER == ["parameter", "rhat", "ess", "acceptance"]
    assert METRICS_HEADER[:10] == ["replication", "n_leftout", "me", "mde", "mae", "mse", "mre", "mdre", "mare",
                                   "coverage95"]
    assert GEN_TRUTH_HEADER == ["replication", "area_id", "month_index", "theta", "pi", "y"]
    assert TRACE_HEADER == ["chain", "iteration", "value"]


def test_draw_column_names():
    cols = draw_columns(["A", "B"], 2)
    assert cols[:9] == ["chain", "iteration", "alpha", "rho", "sd_alpha", "sd_v", "sd_u", "sd_kappa", "sd_omega"]
    assert cols[9:] == ["u.A", "u.B", "v.A", "v.B", "kappa.1", "kappa.2",
                        "omega.A.1", "omega.A.2", "omega.B.1", "omega.B.2"]
    assert draw_columns(["A"], 3, compact=True) == cols[:9]


# --- readers ---


def test_read_example_files():
    f = example_files()
    ids, pop = read_population(f.population, 2018, 1, 60)
    assert len(ids) == 159 and pop.shape == (159, 60)
    g = read_adjacency(f.adjacency, ids)
    assert g.edge_count > 159
    y = read_counts(f.counts, ids, 1, 24)
    assert y.shape == (159, 24) and not np.isnan(y).any()
    crisis = read_counts(f.crisis_counts, ids, 25, 60, require_complete=False)
    assert crisis.shape == (159, 36)


def test_population_expanded_by_year(tmp_path):
    p = write(tmp_path / "pop.csv", "area_id,year,population\nA,2018,100\nA,2019,120\nB,2018,50\nB,2019,55\n")
    ids, pop = read_population(p, 2018, 7, 12)
    assert ids == ("A", "B")
    assert pop[0].tolist() == [100] * 6 + [120] * 6


def test_population_gap_named(tmp_path):
    p = write(tmp_path / "pop.csv", "area_id,year,population\nA,2018,100\n")
    with pytest.raises(DataError, match="2019"):
        read_population(p, 2018, 1, 24)


def test_counts_unknown_area_listed_by_line(tmp_path):
    p = write(tmp_path / "c.csv", "area_id,month_index,deaths\nA,1,0\nZ,1,2\nA,2,-1\nQ,2,1\n")
    with pytest.raises(DataError) as exc:
        read_counts(p, ("A",), 1, 2)
    msg = str(exc.value)
    assert "line 3" in msg and "'Z'" in msg and "line 5" in msg and "line 4" in msg


def test_counts_bad_header(tmp_path):
    p = write(tmp_path / "c.csv", "area,month,deaths\nA,1,0\n")
    with pytest.raises(DataError, match="header"):
        read_counts(p, ("A",), 1, 1)


def test_adjacency_errors(tmp_path):
    p = write(tmp_path / "a.csv", "area_a,area_b\nA,B\nB,C\nC,C\n")
    with pytest.raises(DataError) as exc:
        read_adjacency(p, ("A", "B"))
    assert "line 3" in str(exc.value) and "line 4" in str(exc.value)


# --- config ---


def test_config_overrides_win(tmp_path):
    p = write(tmp_path / "run.yaml", "counts: data/c.csv\nn_chains: 3\nseed: 5\n")
    cfg = load_config(p, {"seed": 9, "n_chains": None})
    assert cfg.seed == 9 and cfg.n_chains == 3
    assert cfg.path("counts") == tmp_path / "data" / "c.csv"


def test_config_rejections(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        load_config(write(tmp_path / "a.yaml", "chains: 3\n"))
    with pytest.raises(ConfigError):
        load_config(None, {"n_months_train": 60, "n_months_total": 60})
    with pytest.raises(ConfigError):
        load_config(write(tmp_path / "b.yaml", "n_chains: two\n"))
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")


def test_defaults_mirror_reference_setup():
    cfg = load_config()
    assert (cfg.n_months_train, cfg.n_months_total) == (24, 60)
    assert (cfg.n_chains, cfg.n_iterations, cfg.n_burnin, cfg.thin) == (8, 80_000, 40_000, 10)


# --- draws file ---


@pytest.fixture(scope="module")
def samples():
    ids = ("A", "B", "C")
    g = from_edges([("A", "B"), ("B", "C")], ids)
    rng = np.random.default_rng(0)
    panel = ObservationPanel(ids, rng.poisson(2, (3, 4)), np.full((3, 5), 10_000), 4, 5)
    return run_chains(panel, compute_offsets(panel), g, HyperPriors(),
                      McmcConfig(n_chains=2, n_iterations=60, n_burnin=20, thin=2, seed=3))


def test_draws_round_trip(tmp_path, samples):
    p = tmp_path / "d.npz"
    write_draws(p, samples, 0.0002)
    d = read_draws(p)
    back = d.samples()
    for name in ("alpha", "rho", "sds", "u", "v", "kappa", "omega", "iteration"):
        assert np.array_equal(getattr(back, name), getattr(samples, name)), name
    assert back.area_ids == samples.area_ids
    assert d.meta["reference_rate"] == 0.0002
    assert np.array_equal(d.by_chain("sd_u"), samples.sd("sd_u"))


def test_draws_file_bytes_are_reproducible(tmp_path, samples):
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    write_draws(a, samples, 0.1)
    write_draws(b, samples, 0.1)
    assert a.read_bytes() == b.read_bytes()


def test_compact_draws(tmp_path, samples):
    p = tmp_path / "c.npz"
    write_draws(p, samples, 0.1, compact=True)
    d = read_draws(p)
    assert d.columns == draw_columns(samples.area_ids, 4, compact=True)
    with pytest.raises(DataError):
        d.samples()


def test_corrupt_draws_rejected(tmp_path):
    p = write(tmp_path / "bad.npz", "not a zip")
    with pytest.raises(DataError, match="corrupt"):
        read_draws(p)
    with pytest.raises(ConfigError):
        read_draws(tmp_path / "none.npz")


def test_traces(tmp_path, samples):
    p = tmp_path / "d.npz"
    write_draws(p, samples, 0.1)
    paths = write_traces(tmp_path / "tr", read_draws(p))
    assert {x.name for x in paths} >= {"trace_alpha.csv", "trace_rho.csv", "trace_sd_omega.csv"}
    lines = (tmp_path / "tr" / "trace_alpha.csv").read_text().splitlines()
    assert lines[0] == "chain,iteration,value" and len(lines) == 1 + 2 * 20
