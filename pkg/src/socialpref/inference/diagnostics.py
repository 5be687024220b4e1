"""Convergence diagnostics for multi-chain draws shaped ``(chains, draws)``."""

from __future__ import annotations

import numpy as np


def split_rhat(x) -> float:
    """Potential scale reduction on chains split in half."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain, shaped (chains, draws)")
    n = x.shape[1] // 2
    halves = np.concatenate([x[:, :n], x[:, -n:]], axis=0)
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x):
    n = x.size
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), m)
    return np.fft.irfft(f * np.conj(f), m)[:n] / n


def ess(x) -> float:
    """Effective sample size with Geyer's initial monotone sequence."""
    x = np.asarray(x, dtype=float)
    chains, n = x.shape
    acov = np.array([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    mean_var = x.mean(axis=1).var(ddof=1) if chains > 1 else 0.0
    var_plus = W * (n - 1) / n + mean_var
    if var_plus == 0:
        return float(chains * n)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    total = 0.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    return float(chains * n / max(tau, 1.0 / np.log10(chains * n + 10)))
