import numpy as np
import pytest


def tiny_dataset(root, n_train=12, n_total=24, seed=0):
    """Six areas on a ring with two calendar years of population."""
    rng = np.random.default_rng(seed)
    ids = [f"c{i}" for i in range(6)]
    root.mkdir(parents=True, exist_ok=True)
    edges = [(ids[i], ids[(i + 1) % 6]) for i in range(6)]
    (root / "adjacency.csv").write_text("area_a,area_b\n" + "".join(f"{a},{b}\n" for a, b in edges))
    pops = rng.integers(20_000, 80_000, size=6)
    rows = [f"{a},{yr},{p + 100 * (yr - 2018)}\n" for a, p in zip(ids, pops) for yr in (2018, 2019)]
    (root / "population.csv").write_text("area_id,year,population\n" + "".join(rows))
    lam = 1e-4 * pops[:, None] * np.ones((1, n_total))
    y = rng.poisson(lam)
    y[rng.random(y.shape) < 0.2] = 0
    lines = [f"{a},{m + 1},{y[i, m]}\n" for i, a in enumerate(ids) for m in range(n_train)]
    (root / "counts.csv").write_text("area_id,month_index,deaths\n" + "".join(lines))
    lines = [f"{a},{m + 1},{y[i, m]}\n" for i, a in enumerate(ids) for m in range(n_train, n_total)]
    (root / "crisis.csv").write_text("area_id,month_index,deaths\n" + "".join(lines))
    (root / "run.yaml").write_text(
        "counts: counts.csv\npopulation: population.csv\nadjacency: adjacency.csv\n"
        f"n_months_train: {n_train}\nn_months_total: {n_total}\n"
        "n_chains: 2\nn_iterations: 3000\nn_burnin: 1500\nthin: 5\nseed: 11\nppd_samples: 101\n"
    )
    return root


@pytest.fixture
def tiny(tmp_path):
    return tiny_dataset(tmp_path / "data")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
