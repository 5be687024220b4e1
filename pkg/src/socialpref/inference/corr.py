"""Cholesky factors of correlation matrices from unconstrained reals.

Row ``i`` of the factor is built from ``i`` canonical partial correlations
``z = tanh(y)``: ``L[i, j] = z_j * sqrt(prod_{m<j} (1 - z_m**2))`` and the
diagonal absorbs the remainder so every row has unit norm.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import betaln


def n_free(K: int) -> int:
    return K * (K - 1) // 2


def _log_sech2(y):
    # log(1 - tanh(y)**2), stable for large |y|
    a = np.abs(y)
    return -2.0 * (a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0))


def constrain(y, K: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.size != n_free(K):
        raise ValueError(f"expected {n_free(K)} free values for K={K}, got {y.size}")
    L = np.eye(K)
    idx = 0
    for i in range(1, K):
        yi = y[idx : idx + i]
        idx += i
        z = np.tanh(yi)
        w = _log_sech2(yi)
        cw = np.concatenate(([0.0], np.cumsum(w)))
        S = np.exp(0.5 * cw)
        L[i, :i] = z * S[:i]
        L[i, i] = S[i]
    return L


def unconstrain(L) -> np.ndarray:
    L = np.asarray(L, dtype=float)
    K = L.shape[0]
    out = []
    for i in range(1, K):
        # remaining squared norm of the row, summed without cancellation
        rem = np.cumsum((L[i, : i + 1] ** 2)[::-1])[::-1]
        for j in range(i):
            s, x = math.sqrt(rem[j]), L[i, j]
            # atanh(x / s) = log((s + x) / sqrt(s**2 - x**2))
            out.append(math.log((s + x) / math.sqrt(rem[j + 1])))
    return np.asarray(out)


def lkj_log_normalizer(K: int, eta: float) -> float:
    """Log normalizing constant of the LKJ density ``det(R)**(eta - 1)``."""
    total = 0.0
    for k in range(1, K):
        b = eta + (K - k - 1) / 2.0
        total += (2.0 * eta - 2.0 + K - k) * (K - k) * math.log(2.0) + (K - k) * betaln(b, b)
    return total


def log_density_and_grad(y, K: int, eta: float, grad_L=None):
    """LKJ(eta) log density of ``constrain(y)`` including the change of variables.

    Returns ``(L, logp, grad_y)``. If ``grad_L`` (the gradient of some scalar
    with respect to ``L``) is given, it is back-propagated into ``grad_y``.
    """
    y = np.asarray(y, dtype=float)
    L = constrain(y, K)
    logp = -lkj_log_normalizer(K, eta) if K > 1 else 0.0
    grad = np.zeros_like(y)
    idx = 0
    for i in range(1, K):
        yi = y[idx : idx + i]
        z = np.tanh(yi)
        w = _log_sech2(yi)
        m = np.arange(i)
        e_i = K - i - 3 + 2.0 * eta
        c = 1.0 + 0.5 * (i - 1 - m) + 0.5 * e_i
        logp += float(np.dot(c, w))
        g = -2.0 * z * c
        if grad_L is not None:
            gl = grad_L[i, : i + 1]
            Li = L[i, : i + 1]
            prod = gl * Li
            # tail[m] = sum_{j > m} gL_ij L_ij  (including the diagonal)
            tail = np.cumsum(prod[::-1])[::-1][1:]
            S = np.exp(0.5 * np.concatenate(([0.0], np.cumsum(w)))[:i])
            g = g + gl[:i] * (1.0 - z * z) * S - z * tail
        grad[idx : idx + i] = g
        idx += i
    return L, logp, grad
