import math

import numpy as np
import pytest

from boem.diagnostics import chain_rhat, ess, field_diagnostics, parameter_summary, rhat


def classic_split_rhat(x):
    """Textbook formula, written out separately from the library."""
    n = x.shape[1] // 2
    halves = [c[:n] for c in x] + [c[n : 2 * n] for c in x]
    m = len(halves)
    means = np.array([h.mean() for h in halves])
    W = np.mean([h.var(ddof=1) for h in halves])
    B = n / (m - 1) * np.sum((means - means.mean()) ** 2)
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def test_iid_chains_near_one():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 5000))
    assert 0.99 <= rhat(x) <= 1.05


def test_separated_chains():
    rng = np.random.default_rng(1)
    x = np.stack([rng.normal(0, 1, 1000), rng.normal(10, 1, 1000)])
    r = rhat(x)
    assert r > 3
    assert r == pytest.approx(classic_split_rhat(x), rel=1e-12)


def test_rhat_degenerate_inputs():
    assert math.isnan(rhat(np.ones((3, 100))))
    assert math.isnan(rhat([1.0, 2.0, 3.0]))
    assert math.isnan(chain_rhat(np.arange(100.0)))


def test_ess_iid():
    rng = np.random.default_rng(2)
    e = ess(rng.standard_normal(10_000))
    assert 8_000 <= e <= 12_000


def test_ess_ar1():
    rng = np.random.default_rng(3)
    n, phi = 50_000, 0.9
    x = np.empty(n)
    x[0] = rng.standard_normal() / math.sqrt(1 - phi**2)
    eps = rng.standard_normal(n)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + eps[t]
    target = n * (1 - phi) / (1 + phi)
    assert target / 2 <= ess(x) <= target * 2


def test_ess_degenerate_inputs():
    assert math.isnan(ess(np.arange(5.0)))
    assert math.isnan(ess(np.full(100, 2.0)))


def test_ess_bounded_by_draw_count():
    rng = np.random.default_rng(4)
    # antithetic draws would give ESS above n without the cap
    x = np.cumprod(-np.ones(1000)) + 0.01 * rng.standard_normal(1000)
    assert 0 < ess(x) <= 1000


def test_parameter_summary():
    s = parameter_summary([1, 2, 3, 4, 5])
    assert s["Mean"] == 3 and s["Median"] == 3
    assert list(s) == ["Mean", "SD", "95% lower", "Median", "95% upper"]
    assert all(math.isnan(v) for v in parameter_summary([]).values())


def test_field_diagnostics_reports_worst_element():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 500, 3))
    x[1, :, 2] += 5.0
    r, e = field_diagnostics(x)
    assert r == pytest.approx(rhat(x[:, :, 2]))
    assert e == pytest.approx(min(ess(x[:, :, k]) for k in range(3)))
