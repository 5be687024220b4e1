"""Forward choice model: preference-biased Dirichlet beliefs and logit choice.

Utilities are ``lambda * nu_j + f * log(s_j)`` plus standard Gumbel noise, so
choice probabilities take the logit form ``exp(lambda*nu_j) * s_j**f``
normalized over alternatives. Expected shares ``s`` come from a Dirichlet
prior with parameters ``phi * J * softmax(delta * nu)`` updated with observed
peer counts.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

EULER_GAMMA = 0.57721566490153286061


class ModelDomainError(ValueError):
    """Raised when the model is evaluated outside its mathematical domain."""


@dataclass(frozen=True)
class AgentParams:
    """Behavioral parameters of one decision-maker in one task/treatment cell."""

    lam: float
    f: float
    phi: float
    delta: float

    def __post_init__(self):
        for name in ("lam", "f", "phi", "delta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"AgentParams.{name} must be finite")
        if self.phi < 0:
            raise ValueError("AgentParams.phi must be non-negative")


@dataclass(frozen=True)
class ChoiceSituation:
    """Intrinsic-utility scores and observed peer counts for one decision."""

    nu: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "nu", tuple(float(v) for v in self.nu))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.nu) < 2:
            raise ValueError("a choice situation needs at least 2 alternatives")
        if len(self.nu) != len(self.counts):
            raise ValueError("nu and counts must have the same length")
        if any(c < 0 for c in self.counts):
            raise ValueError("peer counts must be non-negative")
        if not all(math.isfinite(v) for v in self.nu):
            raise ValueError("nu must be finite")

    @property
    def J(self) -> int:
        return len(self.nu)

    @property
    def sample_size(self) -> int:
        return sum(self.counts)

    @classmethod
    def binary(cls, delta: float, preferred: int, n_preferred: int, sample_size: int = 5):
        """Binary situation built from a measured preference ``delta``.

        ``nu`` is ``(+delta/2, -delta/2)`` arranged so the preferred index gets
        the positive half.
        """
        from socialpref.measurement import nu_from_delta

        if not 0 <= n_preferred <= sample_size:
            raise ValueError("n_preferred must lie in [0, sample_size]")
        counts = [0, 0]
        counts[preferred] = n_preferred
        counts[1 - preferred] = sample_size - n_preferred
        return cls(tuple(nu_from_delta(delta, preferred)), tuple(counts))


@dataclass(frozen=True)
class BeliefState:
    """Dirichlet parameters over alternative shares."""

    alpha: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if not all(a > 0 and math.isfinite(a) for a in self.alpha):
            raise ValueError("Dirichlet parameters must be finite and strictly positive")

    @property
    def shares(self) -> NDArray[np.float64]:
        return expected_shares(self)


class StrategyClass(enum.Enum):
    ANTICONFORMIST = "anticonformist"
    INDEPENDENT = "independent"
    NONCONFORMIST = "nonconformist"
    LINEAR = "linear"
    CONFORMIST = "conformist"


@dataclass(frozen=True)
class Observation:
    """One observed social-information choice.

    ``situation`` is stored in the canonical binary order produced by
    :meth:`ChoiceSituation.binary`; ``chosen`` and ``preferred`` index into it.
    """

    individual_id: str
    task: str
    treatment: str
    situation: ChoiceSituation
    chosen: int
    delta_measured: float
    preferred: int
    decision_id: str = ""
    row: int | None = field(default=None, compare=False)

    def __post_init__(self):
        J = self.situation.J
        if not 0 <= self.chosen < J:
            raise ValueError(f"chosen index {self.chosen} out of range")
        if not 0 <= self.preferred < J:
            raise ValueError(f"preferred index {self.preferred} out of range")
        if not 0.0 <= self.delta_measured <= 1.0:
            raise ValueError("delta_measured must lie in [0, 1]")
        if J == 2:
            nu = self.situation.nu
            if abs((nu[self.preferred] - nu[1 - self.preferred]) - self.delta_measured) > 1e-12:
                raise ValueError("situation.nu is inconsistent with delta_measured")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.individual_id, self.task, self.treatment)


def _softmax(x: NDArray[np.float64]) -> NDArray[np.float64]:
    z = np.exp(x - np.max(x))
    return z / z.sum()


def prior_alpha(params: AgentParams, nu: Sequence[float]) -> BeliefState:
    """Preference-biased Dirichlet prior ``phi * J * softmax(delta * nu)``."""
    if params.phi <= 0:
        raise ModelDomainError(
            "degenerate prior: phi must be > 0 (use raw counts for the phi -> 0 limit)"
        )
    nu = np.asarray(nu, dtype=float)
    alpha = params.phi * nu.size * _softmax(params.delta * nu)
    return BeliefState(tuple(alpha))


def update_belief(prior: BeliefState, counts: Sequence[int]) -> BeliefState:
    """Conjugate Dirichlet-multinomial update."""
    if len(counts) != len(prior.alpha):
        raise ValueError(
            f"counts has length {len(counts)}, belief has {len(prior.alpha)} alternatives"
        )
    if any(c < 0 for c in counts):
        raise ValueError("counts must be non-negative")
    return BeliefState(tuple(a + c for a, c in zip(prior.alpha, counts)))


def expected_shares(belief: BeliefState) -> NDArray[np.float64]:
    alpha = np.asarray(belief.alpha, dtype=float)
    return alpha / alpha.sum()


def posterior_shares(params: AgentParams, situation: ChoiceSituation) -> NDArray[np.float64]:
    """Closed-form expected shares ``(J*phi*softmax(delta*nu) + n) / (J*phi + N)``."""
    if params.phi <= 0:
        raise ModelDomainError("degenerate prior: phi must be > 0")
    nu = np.asarray(situation.nu, dtype=float)
    n = np.asarray(situation.counts, dtype=float)
    J = nu.size
    return (J * params.phi * _softmax(params.delta * nu) + n) / (J * params.phi + n.sum())


def choice_probabilities(
    params: AgentParams, nu: Sequence[float], shares: ArrayLike
) -> NDArray[np.float64]:
    """Logit choice probabilities ``exp(lam*nu_j) * s_j**f / sum_k(...)``.

    ``shares`` may be any positive rescaling of the shares (e.g. raw counts):
    the power form makes the result invariant to a common factor.
    """
    nu = np.asarray(nu, dtype=float)
    s = np.asarray(shares, dtype=float)
    if nu.shape != s.shape:
        raise ValueError("nu and shares must have the same length")
    if np.any(s < 0):
        raise ValueError("shares must be non-negative")
    zero = s == 0
    if np.any(zero) and params.f < 0:
        raise ModelDomainError("unbounded anticonformist utility: zero share with f < 0")
    with np.errstate(divide="ignore"):
        log_s = np.log(s)
    if params.f == 0:
        social = np.zeros_like(s)
    else:
        social = np.where(zero, -np.inf, params.f * np.where(zero, 0.0, log_s))
    util = params.lam * nu + social
    if not np.any(np.isfinite(util)):
        raise ModelDomainError("all alternatives have zero share")
    util = util - np.max(util)
    w = np.exp(util)
    return w / w.sum()


def binary_logit(lam, f, phi, delta, gap, n_first, sample_size):
    """Log-odds of choosing the first of two alternatives, vectorized.

    ``gap`` is ``nu_first - nu_second``; ``n_first`` peers of ``sample_size``
    chose the first alternative. Shares follow the closed-form posterior
    with a ``2 * phi * softmax(delta * nu)`` prior.
    """
    q = expit(np.multiply(delta, gap))
    a1 = 2.0 * phi * q + n_first
    a2 = 2.0 * phi * (1.0 - q) + (np.subtract(sample_size, n_first))
    social = np.multiply(f, np.log(a1) - np.log(a2))
    return np.multiply(lam, gap) + social


def log_likelihood(
    params_lookup: Mapping[tuple[str, str, str], AgentParams],
    observations: Sequence[Observation],
) -> float:
    """Total log-probability of the observed choices."""
    return float(np.sum(pointwise_log_likelihood(params_lookup, observations)))


def pointwise_log_likelihood(
    params_lookup: Mapping[tuple[str, str, str], AgentParams],
    observations: Sequence[Observation],
) -> NDArray[np.float64]:
    """Per-observation log-probabilities; ``-inf`` flags a zero-probability choice."""
    out = np.empty(len(observations))
    for k, obs in enumerate(observations):
        params = params_lookup[obs.key]
        shares = posterior_shares(params, obs.situation)
        p = choice_probabilities(params, obs.situation.nu, shares)[obs.chosen]
        out[k] = math.log(p) if p > 0 else -math.inf
    return out


def classify(f: float, tol: float = 1e-9) -> StrategyClass:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if f < -tol:
        return StrategyClass.ANTICONFORMIST
    if abs(f) <= tol:
        return StrategyClass.INDEPENDENT
    if abs(f - 1.0) <= tol:
        return StrategyClass.LINEAR
    if f < 1.0:
        return StrategyClass.NONCONFORMIST
    return StrategyClass.CONFORMIST


def digamma(x: float) -> float:
    """Digamma for real ``x > 0``: upward recurrence then the asymptotic series."""
    if not x > 0:
        raise ValueError("digamma is only implemented for x > 0")
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    # Bernoulli-number tail: 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760, 1/12
    tail = inv2 * (
        1.0 / 12
        - inv2
        * (
            1.0 / 120
            - inv2
            * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12))))
        )
    )
    return acc + math.log(x) - 0.5 / x - tail


def log_share_expectation(belief: BeliefState, j: int) -> tuple[float, float]:
    """Exact ``E[log s_j]`` under the Dirichlet belief and its log approximation.

    The approximation uses ``digamma(x) ~ log(x - 1/2)``.
    """
    alpha = belief.alpha
    total = sum(alpha)
    exact = digamma(alpha[j]) - digamma(total)
    if alpha[j] <= 0.5 or total <= 0.5:
        raise ModelDomainError("approximation domain: requires alpha_j > 1/2")
    approx = math.log((alpha[j] - 0.5) / (total - 0.5))
    return exact, approx
