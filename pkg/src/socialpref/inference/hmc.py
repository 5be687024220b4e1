"""Adaptive Hamiltonian Monte Carlo with a static, jittered path length.

Warmup follows the usual windowed scheme: a fast interval for step-size
adaptation only, a sequence of doubling slow windows that estimate a
diagonal inverse metric from the draws, and a final fast interval. Step
size is tuned by dual averaging towards a target acceptance rate. The number
of leapfrog steps is ``integration_time / step_size`` scaled by a uniform
jitter in [0.5, 1.5], so the path length follows the tuned step size.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

LogProbGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class HMCSettings:
    target_accept: float = 0.8
    integration_time: float = 2.0
    max_leapfrog: int = 512
    init_radius: float = 1.0
    max_energy_error: float = 1000.0
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25


@dataclass
class ChainResult:
    draws: np.ndarray
    log_prob: np.ndarray
    accept_prob: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    warmup_divergent: int = 0


class _DualAveraging:
    def __init__(self, step_size: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step_size)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_eps = math.log(step_size)
        self.log_eps_bar = 0.0

    def update(self, accept: float) -> float:
        self.t += 1
        t = self.t
        w = 1.0 / (t + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept)
        self.log_eps = self.mu - math.sqrt(t) / self.gamma * self.h_bar
        eta = t ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def _windows(warmup: int, s: HMCSettings) -> tuple[int, int, list[int]]:
    """Initial fast buffer, terminal fast buffer and the ends of slow windows."""
    init, term, base = s.init_buffer, s.term_buffer, s.base_window
    if init + term + base > warmup:
        init, term = int(0.15 * warmup), int(0.1 * warmup)
        base = warmup - init - term
    ends = []
    start, size = init, base
    slow_end = warmup - term
    while start < slow_end:
        end = start + size
        # absorb a window that would leave less than double its size behind
        if end + 2 * size > slow_end:
            end = slow_end
        ends.append(end)
        start, size = end, 2 * size
    return init, term, ends


def _leapfrog(logp_grad, q, p, grad, eps, inv_metric, n_steps):
    p = p + 0.5 * eps * grad
    for step in range(n_steps):
        q = q + eps * inv_metric * p
        lp, grad = logp_grad(q)
        if not math.isfinite(lp):
            return q, p, lp, grad
        if step != n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return q, p, lp, grad


def _safe(logp_grad):
    def f(q):
        with np.errstate(all="ignore"):
            try:
                lp, g = logp_grad(q)
            except (FloatingPointError, ValueError, OverflowError):
                return -math.inf, np.zeros_like(q)
        if not math.isfinite(lp) or not np.all(np.isfinite(g)):
            return -math.inf, np.zeros_like(q)
        return lp, g
    return f


class _Kernel:
    def __init__(self, logp_grad, rng, settings: HMCSettings, dim: int):
        self.f = _safe(logp_grad)
        self.rng = rng
        self.s = settings
        self.inv_metric = np.ones(dim)

    def transition(self, q, lp, grad, eps):
        rng = self.rng
        p = rng.standard_normal(q.size) / np.sqrt(self.inv_metric)
        h0 = -lp + 0.5 * np.sum(self.inv_metric * p * p)
        base = self.s.integration_time / eps
        n = int(np.clip(round(base * rng.uniform(0.5, 1.5)), 1, self.s.max_leapfrog))
        q1, p1, lp1, g1 = _leapfrog(self.f, q, p, grad, eps, self.inv_metric, n)
        h1 = -lp1 + 0.5 * np.sum(self.inv_metric * p1 * p1) if math.isfinite(lp1) else math.inf
        dh = h1 - h0
        divergent = not math.isfinite(dh) or dh > self.s.max_energy_error
        accept = 0.0 if divergent else min(1.0, math.exp(-dh))
        if not divergent and rng.random() < accept:
            return q1, lp1, g1, accept, divergent, n
        return q, lp, grad, accept, divergent, n

    def reasonable_step_size(self, q, lp, grad, eps=0.1):
        """Double or halve ``eps`` until one leapfrog step crosses acceptance 1/2."""
        rng = self.rng

        def log_accept(e):
            p = rng.standard_normal(q.size) / np.sqrt(self.inv_metric)
            h0 = -lp + 0.5 * np.sum(self.inv_metric * p * p)
            _, p1, lp1, _ = _leapfrog(self.f, q, p, grad, e, self.inv_metric, 1)
            if not math.isfinite(lp1):
                return -math.inf
            return h0 - (-lp1 + 0.5 * np.sum(self.inv_metric * p1 * p1))

        direction = 1 if log_accept(eps) > math.log(0.5) else -1
        for _ in range(100):
            new = eps * (2.0 ** direction)
            la = log_accept(new)
            if (direction == 1 and not la > math.log(0.5)) or (direction == -1 and la > math.log(0.5)):
                break
            eps = new
        return eps


def sample_chain(
    logp_grad: LogProbGrad, dim: int, warmup: int, draws: int, rng: np.random.Generator,
    settings: HMCSettings = HMCSettings(), init: np.ndarray | None = None,
) -> ChainResult:
    kernel = _Kernel(logp_grad, rng, settings, dim)
    f = kernel.f
    if init is None:
        for _ in range(100):
            q = rng.uniform(-settings.init_radius, settings.init_radius, dim)
            lp, grad = f(q)
            if math.isfinite(lp):
                break
        else:
            raise InitializationError("could not find a finite initial log density")
    else:
        q = np.asarray(init, dtype=float).copy()
        lp, grad = f(q)
        if not math.isfinite(lp):
            raise InitializationError("initial point has non-finite log density")

    eps = kernel.reasonable_step_size(q, lp, grad)
    da = _DualAveraging(eps, settings.target_accept)
    init_buf, _, window_ends = _windows(warmup, settings) if warmup > 0 else (0, 0, [])
    window_start = init_buf
    w_n, w_mean, w_m2 = 0, np.zeros(dim), np.zeros(dim)
    warm_div = 0

    for it in range(warmup):
        q, lp, grad, acc, div, _ = kernel.transition(q, lp, grad, eps)
        warm_div += div
        eps = da.update(acc)
        if window_ends and window_start <= it < window_ends[0]:
            w_n += 1
            d = q - w_mean
            w_mean += d / w_n
            w_m2 += d * (q - w_mean)
            if it + 1 == window_ends[0]:
                var = w_m2 / max(w_n - 1, 1)
                kernel.inv_metric = (w_n / (w_n + 5.0)) * var + 1e-3 * (5.0 / (w_n + 5.0))
                eps = kernel.reasonable_step_size(q, lp, grad, eps)
                da = _DualAveraging(eps, settings.target_accept)
                window_start = window_ends.pop(0)
                w_n, w_mean, w_m2 = 0, np.zeros(dim), np.zeros(dim)
    if warmup > 0:
        eps = da.final

    out = np.empty((draws, dim))
    lps = np.empty(draws)
    accs = np.empty(draws)
    divs = np.zeros(draws, dtype=bool)
    steps = np.empty(draws, dtype=np.int64)
    for it in range(draws):
        q, lp, grad, acc, div, n = kernel.transition(q, lp, grad, eps)
        out[it], lps[it], accs[it], divs[it], steps[it] = q, lp, acc, div, n
    return ChainResult(out, lps, accs, divs, steps, eps, kernel.inv_metric.copy(), warm_div)
