"""Response curves, fixed points and population choice dynamics."""

from __future__ import annotations

import enum
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.special import expit

from socialpref.choice import AgentParams, ModelDomainError, binary_logit


class DegenerateContinuum(ModelDomainError):
    """Every share is a fixed point (linear imitation without preferences)."""


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- curves


def _p_first(lam: float, gap: float, f: float, s: NDArray[np.float64]) -> NDArray[np.float64]:
    s = np.asarray(s, dtype=float)
    if f < 0 and np.any((s <= 0) | (s >= 1)):
        raise ModelDomainError("unbounded anticonformist utility: zero share with f < 0")
    if f == 0:
        return np.full_like(s, expit(lam * gap))
    with np.errstate(divide="ignore"):
        social = f * (np.log(s) - np.log1p(-s))
    return expit(lam * gap + social)


def response_curve(params: AgentParams, nu: Sequence[float], s_grid) -> NDArray[np.float64]:
    """Probability of choosing the first alternative when its expected share is ``s``.

    Shares are ``(s, 1 - s)``; with canonical ordering the first alternative
    is the intrinsically preferred one.
    """
    gap = float(nu[0]) - float(nu[1])
    return _p_first(params.lam, gap, params.f, s_grid)


@dataclass(frozen=True)
class FixedPoint:
    location: float
    slope: float

    @property
    def attracting(self) -> bool:
        return abs(self.slope) < 1.0

    @property
    def stability(self) -> str:
        return "attracting" if self.attracting else "repelling"


def fixed_points(
    params: AgentParams, nu: Sequence[float], tol: float = 1e-9, mesh: float = 1e-3
) -> list[FixedPoint]:
    """Solutions of ``P(s) = s`` on [0, 1], sorted by location.

    Sign changes of ``P(s) - s`` on a uniform mesh are refined by bisection.
    Tangential roots without a sign change are not detected.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    gap = float(nu[0]) - float(nu[1])
    lam, f = params.lam, params.f
    n = int(round(1.0 / mesh))
    grid = np.linspace(0.0, 1.0, n + 1)
    if f < 0:
        # the response is 1 at s -> 0 and 0 at s -> 1; stay inside the open interval
        grid[0], grid[-1] = 1e-15, 1.0 - 1e-15

    def h(s):
        return _p_first(lam, gap, f, s) - s

    hv = h(grid)
    if np.max(np.abs(hv)) < 1e-12:
        raise DegenerateContinuum("every share is a fixed point (f = 1 without preference)")

    roots: list[float] = []
    for i, v in enumerate(hv):
        if v == 0.0:
            roots.append(float(grid[i]))
    for i in range(n):
        a, b = grid[i], grid[i + 1]
        fa, fb = hv[i], hv[i + 1]
        if fa == 0.0 or fb == 0.0 or np.sign(fa) == np.sign(fb):
            continue
        while b - a > tol:
            m = 0.5 * (a + b)
            fm = float(h(np.array([m]))[0])
            if fm == 0.0:
                a = b = m
                break
            if np.sign(fm) == np.sign(fa):
                a, fa = m, fm
            else:
                b = m
        roots.append(0.5 * (a + b))
    roots.sort()

    out = []
    for r in roots:
        out.append(FixedPoint(location=r, slope=_slope(lam, gap, f, r, grid[0], grid[-1])))
    return out


def _slope(lam, gap, f, s, lo, hi, step=1e-6):
    a, b = max(lo, s - step), min(hi, s + step)
    pa, pb = _p_first(lam, gap, f, np.array([a, b]))
    return float((pb - pa) / (b - a))


# ------------------------------------------------------------ simulation


class InitialRule(enum.Enum):
    PRIOR_ONLY = "prior-only"


class BeliefRule(enum.Enum):
    PER_PERIOD_RESET = "per-period-reset"
    ACCUMULATE = "accumulate"


@dataclass(frozen=True)
class PopulationMember:
    params: AgentParams
    nu: tuple[float, float]
    current_choice: int | None = None


@dataclass(frozen=True)
class SimConfig:
    periods: int
    seed: int
    sample_size: int = 5
    target: int = 0
    initial_rule: InitialRule = InitialRule.PRIOR_ONLY
    belief_rule: BeliefRule = BeliefRule.PER_PERIOD_RESET

    def __post_init__(self):
        if self.periods < 1:
            raise ConfigError("periods must be >= 1")
        if self.sample_size < 1:
            raise ConfigError("sample_size must be >= 1")
        if self.target not in (0, 1):
            raise ConfigError("target must be 0 or 1")


@dataclass(frozen=True)
class Trajectory:
    shares: NDArray[np.float64]
    population_size: int

    def __len__(self):
        return len(self.shares)


def simulate_batch(
    lam, gap, f, phi, delta, *, periods: int, sample_size: int, rng: np.random.Generator,
    replications: int = 1, belief_rule: BeliefRule = BeliefRule.PER_PERIOD_RESET,
) -> NDArray[np.float64]:
    """Vectorized core of :func:`simulate`.

    Member arrays broadcast to ``(replications, N)``; ``gap`` is the intrinsic
    utility of the target minus that of the other alternative. Returns the
    per-period target share with shape ``(replications, periods)``.

    Each member observes ``sample_size`` distinct other members drawn
    uniformly without replacement; only the number choosing the target
    matters, so it is drawn directly from the hypergeometric distribution.
    """
    shape = np.broadcast_shapes(*(np.shape(x) for x in (lam, gap, f, phi, delta)))
    N = shape[-1]
    shape = (replications, N)
    lam, gap, f, phi, delta = (np.broadcast_to(np.asarray(x, float), shape) for x in (lam, gap, f, phi, delta))
    if N <= sample_size:
        raise ConfigError(f"population size {N} must exceed the sample size {sample_size}")

    out = np.empty((replications, periods))
    seen_target = np.zeros(shape)
    seen_total = 0
    logit = binary_logit(lam, f, phi, delta, gap, seen_target, seen_total)
    choices = rng.random(shape) < expit(logit)
    out[:, 0] = choices.sum(axis=1) / N
    for t in range(1, periods):
        c = choices.astype(np.int64)
        others = c.sum(axis=1, keepdims=True) - c
        k_target = rng.hypergeometric(others, (N - 1) - others, sample_size)
        if belief_rule is BeliefRule.ACCUMULATE:
            seen_target = seen_target + k_target
            seen_total += sample_size
        else:
            seen_target, seen_total = k_target, sample_size
        logit = binary_logit(lam, f, phi, delta, gap, seen_target, seen_total)
        choices = rng.random(shape) < expit(logit)
        out[:, t] = choices.sum(axis=1) / N
    return out


def simulate(population: Sequence[PopulationMember], config: SimConfig) -> Trajectory:
    """Simulate repeated socially informed choice in a well-mixed population.

    Period 0 choices use prior expected shares only. In later periods every
    member samples the previous-period choices of ``config.sample_size``
    others; beliefs reset to the prior each period unless
    ``belief_rule`` is ``ACCUMULATE``.
    """
    if len(population) <= config.sample_size:
        raise ConfigError(
            f"population size {len(population)} must exceed the sample size {config.sample_size}"
        )
    t, o = config.target, 1 - config.target
    lam = np.array([m.params.lam for m in population])
    f = np.array([m.params.f for m in population])
    phi = np.array([m.params.phi for m in population])
    delta = np.array([m.params.delta for m in population])
    if np.any(phi <= 0):
        raise ModelDomainError("degenerate prior: phi must be > 0")
    gap = np.array([m.nu[t] - m.nu[o] for m in population])
    rng = np.random.default_rng(config.seed)
    shares = simulate_batch(
        lam, gap, f, phi, delta, periods=config.periods, sample_size=config.sample_size,
        rng=rng, belief_rule=config.belief_rule,
    )[0]
    return Trajectory(shares=shares, population_size=len(population))


# ------------------------------------------------------------------ grid


def _steps(lo: float, hi: float, step: float) -> tuple[float, ...]:
    n = int(round((hi - lo) / step))
    return tuple(round(lo + i * step, 10) for i in range(n + 1))


@dataclass(frozen=True)
class GridConfig:
    mean_prefs: tuple[float, ...] = field(default_factory=lambda: _steps(0.0, 4.0, 0.1))
    fs: tuple[float, ...] = field(default_factory=lambda: _steps(-2.0, 2.0, 0.1))
    phis: tuple[float, ...] = (1.0, 5.0, 20.0)
    deltas: tuple[float, ...] = (0.0, 0.5, 1.0)
    population: int = 50
    periods: int = 50
    replications: int = 50
    sample_size: int = 5
    pref_sd: float = 1.0
    minority: bool = False
    minority_every: int = 5
    minority_pref: float = -4.0
    seed: int = 0

    def __post_init__(self):
        if self.population <= self.sample_size:
            raise ConfigError("population must exceed the sample size")
        if self.periods < 1 or self.replications < 1:
            raise ConfigError("periods and replications must be >= 1")
        if any(p <= 0 for p in self.phis):
            raise ConfigError("phi values must be positive")

    def cells(self):
        """Cell index tuples ``(iphi, idelta, imean, if)`` in output order."""
        return itertools.product(
            range(len(self.phis)), range(len(self.deltas)), range(len(self.mean_prefs)), range(len(self.fs))
        )


@dataclass(frozen=True)
class GridResult:
    table: pd.DataFrame

    COLUMNS = ("mean_pref", "f", "phi", "delta", "minority", "avg_final_share")


def run_cell(grid: GridConfig, cell: tuple[int, int, int, int]) -> float:
    """Average final-period target share for one grid cell.

    The cell owns a random stream derived from ``(seed, minority, cell)``, so
    its value does not depend on how cells are distributed over workers.
    """
    iphi, idelta, imean, if_ = cell
    ss = np.random.SeedSequence(grid.seed, spawn_key=(int(grid.minority), *cell))
    rng = np.random.default_rng(ss)
    R, N = grid.replications, grid.population
    prefs = rng.normal(grid.mean_prefs[imean], grid.pref_sd, size=(R, N))
    if grid.minority:
        prefs[:, grid.minority_every - 1 :: grid.minority_every] = grid.minority_pref
    traj = simulate_batch(
        1.0, prefs, grid.fs[if_], grid.phis[iphi], grid.deltas[idelta],
        periods=grid.periods, sample_size=grid.sample_size, rng=rng, replications=R,
    )
    return float(traj[:, -1].mean())


def _run_cells(args):
    grid, cells = args
    return [run_cell(grid, c) for c in cells]


def grid_run(grid: GridConfig, workers: int = 1) -> GridResult:
    cells = list(grid.cells())
    if workers <= 1:
        values = [run_cell(grid, c) for c in cells]
    else:
        chunks = [cells[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_cells, [(grid, ch) for ch in chunks]))
        values = [0.0] * len(cells)
        for w, part in enumerate(parts):
            for j, v in enumerate(part):
                values[w + j * workers] = v
    rows = []
    for (iphi, idelta, imean, if_), v in zip(cells, values):
        rows.append((grid.mean_prefs[imean], grid.fs[if_], grid.phis[iphi], grid.deltas[idelta], int(grid.minority), v))
    return GridResult(pd.DataFrame(rows, columns=list(GridResult.COLUMNS)))
