"""Convergence diagnostics: split R-hat and effective sample size.

Both return ``nan`` when the statistic is not defined for the input
(too few draws, zero variance).
"""

from __future__ import annotations

import math

import numpy as np


def _as_chains(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("draws must be 1-d or (chains, draws)")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1]
    half = n // 2
    if n % 2:
        return np.concatenate([x[:, :half], x[:, half + 1 :]], axis=0)
    return np.concatenate([x[:, :half], x[:, half:]], axis=0)


def rhat(draws) -> float:
    """Split-chain potential scale reduction factor.

    ``draws`` is ``(chains, n)`` or a single chain. Each chain is cut in half
    and the classic between/within variance ratio is computed on the halves.
    """
    x = _as_chains(draws)
    if x.size < 4 or x.shape[1] < 2:
        return math.nan
    s = _split(x)
    m, n = s.shape
    if m < 2 or n < 2:
        return math.nan
    means = s.mean(axis=1)
    W = s.var(axis=1, ddof=1).mean()
    if not W > 0:
        return math.nan
    B = n * means.var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    m, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=1)
    ac = np.fft.irfft(f * np.conjugate(f), size, axis=1)[:, :n]
    return ac / n


def ess(draws) -> float:
    """Effective sample size with Geyer's initial monotone positive sequence.

    Accepts one chain or ``(chains, n)``; the autocorrelation combines
    within- and between-chain variance as in multi-chain R-hat. The result is
    capped at the total number of draws.
    """
    x = _as_chains(draws)
    m, n = x.shape
    if n < 10:
        return math.nan
    ac = _autocov(x)
    W = (ac[:, 0] * n / (n - 1)).mean()
    if not W > 0:
        return math.nan
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (W - ac.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # pair sums P_k = rho_{2k} + rho_{2k+1}, truncated at the first negative
    n_pairs = n // 2
    P = rho[: 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    k = 0
    while k < n_pairs and P[k] > 0:
        k += 1
    P = np.minimum.accumulate(P[:k]) if k else P[:0]
    tau = -1.0 + 2.0 * P.sum()
    total = m * n
    if not tau > 0:
        return float(total)
    return float(min(total / tau, total))


def parameter_summary(draws) -> dict:
    """Mean, SD, 95% interval and median over all chains; NaNs when empty."""
    x = np.ravel(np.asarray(draws, dtype=float))
    x = x[np.isfinite(x)]
    if x.size == 0:
        return {"Mean": math.nan, "SD": math.nan, "95% lower": math.nan, "Median": math.nan, "95% upper": math.nan}
    lo, med, hi = np.quantile(x, [0.025, 0.5, 0.975])
    return {
        "Mean": float(x.mean()),
        "SD": float(x.std(ddof=1)) if x.size > 1 else math.nan,
        "95% lower": float(lo),
        "Median": float(med),
        "95% upper": float(hi),
    }


def chain_rhat(draws) -> float:
    """R-hat across chains; not applicable with a single chain."""
    x = _as_chains(draws)
    return rhat(x) if x.shape[0] >= 2 else math.nan


def field_diagnostics(draws) -> tuple[float, float]:
    """Worst-case (max R-hat, min ESS) over the trailing elements of a
    ``(chains, draws, ...)`` array."""
    x = np.asarray(draws, dtype=float)
    flat = x.reshape(x.shape[0], x.shape[1], -1)
    r = [chain_rhat(flat[:, :, k]) for k in range(flat.shape[2])]
    e = [ess(flat[:, :, k]) for k in range(flat.shape[2])]
    r = [v for v in r if not math.isnan(v)]
    e = [v for v in e if not math.isnan(v)]
    return (max(r) if r else math.nan, min(e) if e else math.nan)
