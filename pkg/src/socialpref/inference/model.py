"""Hierarchical logit model with individual effects and task/treatment fixed effects.

Individual parameters in task ``t`` and treatment ``c``::

    u_i     = diag(sigma) @ L @ z_i          (non-centered, z_i ~ N(0, I))
    lam_it  = Lam_t + u_i[lam]
    f_itc   = F_t + T_c + u_i[f]             (T_control = 0)
    phi_it  = exp(Phi_t + u_i[phi])
    delta_it = D_t + u_i[delta]

Fixed and treatment effects have N(0, 1) priors, ``sigma ~ Exponential(1)``
and ``L @ L.T ~ LKJ(2)``. The unconstrained vector stacks, in order: fixed
effects (parameter-major, ``K x T``), treatment effects on ``f``, log sigma,
free correlation values and ``z`` (``I x K``, row-major).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from socialpref.choice import AgentParams, Observation
from socialpref.inference import corr

TASKS = ("quest", "paint")
TREATMENTS = ("control", "reward", "punish")
PARAM_NAMES = ("lambda", "f", "phi", "delta")
LKJ_ETA = 2.0
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class NonFiniteDensity(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"log posterior is not finite (term: {term})")
        self.term = term


class Variant(enum.Enum):
    PBSI = "pbsi"
    PSI = "psi"
    P = "p"
    SI = "si"


_ACTIVE = {
    Variant.PBSI: ("lambda", "f", "phi", "delta"),
    Variant.PSI: ("lambda", "f", "phi"),
    Variant.P: ("lambda",),
    Variant.SI: ("f", "phi"),
}


@dataclass(frozen=True)
class ModelSpec:
    """Model variant plus the share rule used for its prior.

    ``share_rule="literal"`` uses ``(phi + n) / (2 phi + N)`` directly; the
    default ``"prior"`` rule is ``(2 phi softmax(delta nu) + n) / (2 phi + N)``.
    With ``delta = 0`` both coincide.
    """

    variant: Variant = Variant.PBSI
    share_rule: str = "prior"

    def __post_init__(self):
        if isinstance(self.variant, str):
            object.__setattr__(self, "variant", Variant(self.variant.lower()))
        if self.share_rule not in ("prior", "literal"):
            raise ValueError(f"unknown share rule {self.share_rule!r}")
        if self.share_rule == "literal" and "delta" in self.active:
            raise ValueError("the literal share rule has no preference bias")

    @classmethod
    def of(cls, variant: Variant | str) -> "ModelSpec":
        v = Variant(variant.lower()) if isinstance(variant, str) else variant
        return cls(v, "literal" if v is Variant.PSI else "prior")

    @property
    def active(self) -> tuple[str, ...]:
        return _ACTIVE[self.variant]

    @property
    def K(self) -> int:
        return len(self.active)

    @property
    def has_treatment(self) -> bool:
        return "f" in self.active


@dataclass(frozen=True)
class ChoiceData:
    """Binary observations as arrays, in canonical preferred-first order."""

    individuals: tuple[str, ...]
    ind: np.ndarray
    task: np.ndarray
    treat: np.ndarray
    gap: np.ndarray
    n_pref: np.ndarray
    sample_size: np.ndarray
    y: np.ndarray

    @property
    def n_obs(self) -> int:
        return int(self.ind.size)

    @property
    def n_individuals(self) -> int:
        return len(self.individuals)

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "ChoiceData":
        ids: dict[str, int] = {}
        rows = []
        for obs in observations:
            if obs.situation.J != 2:
                raise ValueError("the hierarchical model handles binary choices only")
            if obs.task not in TASKS or obs.treatment not in TREATMENTS:
                raise ValueError(f"unknown task/treatment {obs.task!r}/{obs.treatment!r}")
            i = ids.setdefault(obs.individual_id, len(ids))
            p = obs.preferred
            rows.append((
                i, TASKS.index(obs.task), TREATMENTS.index(obs.treatment),
                obs.delta_measured, obs.situation.counts[p], obs.situation.sample_size,
                int(obs.chosen == p),
            ))
        arr = list(zip(*rows)) if rows else [()] * 7
        return cls(
            individuals=tuple(ids),
            ind=np.asarray(arr[0], dtype=np.int64),
            task=np.asarray(arr[1], dtype=np.int64),
            treat=np.asarray(arr[2], dtype=np.int64),
            gap=np.asarray(arr[3], dtype=float),
            n_pref=np.asarray(arr[4], dtype=float),
            sample_size=np.asarray(arr[5], dtype=float),
            y=np.asarray(arr[6], dtype=float),
        )

    def subset(self, mask) -> "ChoiceData":
        mask = np.asarray(mask)
        return ChoiceData(
            self.individuals, self.ind[mask], self.task[mask], self.treat[mask],
            self.gap[mask], self.n_pref[mask], self.sample_size[mask], self.y[mask],
        )


class Layout:
    """Slices of the unconstrained parameter vector for one spec and data size."""

    def __init__(self, spec: ModelSpec, n_individuals: int, n_tasks: int = len(TASKS)):
        self.spec = spec
        self.I = n_individuals
        self.T = n_tasks
        K = spec.K
        sizes = [
            ("fixed", K * n_tasks),
            ("treatment", 2 if spec.has_treatment else 0),
            ("log_sigma", K),
            ("corr", corr.n_free(K)),
            ("z", n_individuals * K),
        ]
        self.slices = {}
        start = 0
        for name, n in sizes:
            self.slices[name] = slice(start, start + n)
            start += n
        self.size = start

    def constrained_names(self) -> list[str]:
        act = self.spec.active
        names = [f"{p}[{t}]" for p in act for t in TASKS[: self.T]]
        if self.spec.has_treatment:
            names += ["T[reward]", "T[punish]"]
        names += [f"sigma[{p}]" for p in act]
        names += [f"Omega[{act[a]},{act[b]}]" for a in range(len(act)) for b in range(a + 1, len(act))]
        return names

    def individual_names(self, individuals: Sequence[str]) -> list[str]:
        return [f"u[{i},{p}]" for i in individuals for p in self.spec.active]


@dataclass
class ParamVector:
    """Unconstrained parameters, block by block."""

    spec: ModelSpec
    fixed: np.ndarray  # (K, T); the phi row is on the log scale
    treatment: np.ndarray  # (2,) reward, punish; empty without f
    log_sigma: np.ndarray  # (K,)
    corr_free: np.ndarray  # (K(K-1)/2,)
    z: np.ndarray  # (I, K)

    @classmethod
    def zeros(cls, spec: ModelSpec, n_individuals: int, n_tasks: int = len(TASKS)):
        lay = Layout(spec, n_individuals, n_tasks)
        return cls.from_array(spec, np.zeros(lay.size), n_individuals, n_tasks)

    @classmethod
    def from_array(cls, spec: ModelSpec, theta, n_individuals: int, n_tasks: int = len(TASKS)):
        lay = Layout(spec, n_individuals, n_tasks)
        theta = np.asarray(theta, dtype=float)
        if theta.size != lay.size:
            raise ValueError(f"expected {lay.size} parameters, got {theta.size}")
        s = lay.slices
        return cls(
            spec=spec,
            fixed=theta[s["fixed"]].reshape(spec.K, n_tasks).copy(),
            treatment=theta[s["treatment"]].copy(),
            log_sigma=theta[s["log_sigma"]].copy(),
            corr_free=theta[s["corr"]].copy(),
            z=theta[s["z"]].reshape(n_individuals, spec.K).copy(),
        )

    def to_array(self) -> np.ndarray:
        return np.concatenate([
            self.fixed.ravel(), self.treatment, self.log_sigma, self.corr_free, self.z.ravel()
        ])

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @property
    def corr_cholesky(self) -> np.ndarray:
        return corr.constrain(self.corr_free, self.spec.K)

    def individual_effects(self) -> np.ndarray:
        """``u = diag(sigma) L z_i`` for every individual, shape ``(I, K)``."""
        return (self.z @ self.corr_cholesky.T) * self.sigma

    def constrained(self) -> np.ndarray:
        """Population-level parameters on their natural scale."""
        spec = self.spec
        fixed = self.fixed.copy()
        if "phi" in spec.active:
            k = spec.active.index("phi")
            fixed[k] = np.exp(fixed[k])
        L = self.corr_cholesky
        omega = L @ L.T
        iu = np.triu_indices(spec.K, 1)
        return np.concatenate([fixed.ravel(), self.treatment, self.sigma, omega[iu]])


def individual_params(pv: ParamVector, i: int, t: int, c: int) -> AgentParams:
    """Behavioral parameters of individual ``i`` in task ``t`` and treatment ``c``.

    Parameters a variant does not estimate take their pinned values
    (``lam = f = delta = 0``; ``phi = 1`` when unused).
    """
    act = pv.spec.active
    u = pv.individual_effects()[i]
    vals = {"lambda": 0.0, "f": 0.0, "phi": 0.0, "delta": 0.0}
    for k, p in enumerate(act):
        vals[p] = pv.fixed[k, t] + u[k]
    if "f" in act and c > 0:
        vals["f"] += pv.treatment[c - 1]
    phi = math.exp(vals["phi"]) if "phi" in act else 1.0
    return AgentParams(lam=vals["lambda"], f=vals["f"], phi=phi, delta=vals["delta"])


def _obs_param_arrays(spec: ModelSpec, data: ChoiceData, fixed, treatment, U):
    """Per-observation (lam, f, log_phi, delta); inactive entries are ``None``."""
    act = spec.active
    out = dict.fromkeys(PARAM_NAMES)
    for k, p in enumerate(act):
        out[p] = fixed[k][data.task] + U[data.ind, k]
    if spec.has_treatment:
        tvec = np.concatenate(([0.0], treatment))
        out["f"] = out["f"] + tvec[data.treat]
    return out


def _loglik_terms(spec: ModelSpec, data: ChoiceData, p, need_grad: bool):
    """Pointwise log-likelihood and derivatives w.r.t. (lam, f, log_phi, delta)."""
    gap, n, N, y = data.gap, data.n_pref, data.sample_size, data.y
    eta = np.zeros_like(gap)
    if p["lambda"] is not None:
        eta = eta + p["lambda"] * gap
    g = dg_dlogphi = dg_ddelta = None
    if p["f"] is not None:
        phi = np.exp(p["phi"])
        if spec.share_rule == "literal":
            a1, a2 = phi + n, phi + (N - n)
            w1 = w2 = phi
        else:
            q = expit(p["delta"] * gap) if p["delta"] is not None else 0.5
            w1, w2 = 2.0 * phi * q, 2.0 * phi * (1.0 - q)
            a1, a2 = w1 + n, w2 + (N - n)
        g = np.log(a1) - np.log(a2)
        eta = eta + p["f"] * g
        if need_grad:
            dg_dlogphi = w1 / a1 - w2 / a2
            if p["delta"] is not None:
                dg_ddelta = 2.0 * phi * q * (1.0 - q) * gap * (1.0 / a1 + 1.0 / a2)
    # log sigmoid(+-eta)
    ll = -np.logaddexp(0.0, np.where(y > 0, -eta, eta))
    if not need_grad:
        return ll, None
    r = y - expit(eta)
    grads = dict.fromkeys(PARAM_NAMES)
    if p["lambda"] is not None:
        grads["lambda"] = r * gap
    if p["f"] is not None:
        grads["f"] = r * g
        grads["phi"] = r * p["f"] * dg_dlogphi
        if p["delta"] is not None:
            grads["delta"] = r * p["f"] * dg_ddelta
    return ll, grads


class HierarchicalModel:
    """Log posterior and its gradient on the unconstrained space."""

    def __init__(self, spec: ModelSpec, data: ChoiceData):
        self.spec = spec
        self.data = data
        self.layout = Layout(spec, data.n_individuals)

    @property
    def dim(self) -> int:
        return self.layout.size

    def unpack(self, theta) -> ParamVector:
        return ParamVector.from_array(self.spec, theta, self.data.n_individuals)

    def log_prob_terms(self, theta) -> dict[str, float]:
        pv = self.unpack(theta)
        K = self.spec.K
        _, lkj, _ = corr.log_density_and_grad(pv.corr_free, K, LKJ_ETA)
        fx = np.concatenate([pv.fixed.ravel(), pv.treatment])
        terms = {
            "likelihood": float(np.sum(self.pointwise(pv))),
            "prior_fixed": float(-0.5 * np.sum(fx**2) - fx.size * _LOG_SQRT_2PI),
            # Exponential(1) on sigma plus the log-scale Jacobian
            "prior_sigma": float(np.sum(-np.exp(pv.log_sigma) + pv.log_sigma)),
            "prior_corr": float(lkj),
            "prior_z": float(-0.5 * np.sum(pv.z**2) - pv.z.size * _LOG_SQRT_2PI),
        }
        return terms

    def pointwise(self, pv: ParamVector) -> np.ndarray:
        U = pv.individual_effects()
        p = _obs_param_arrays(self.spec, self.data, pv.fixed, pv.treatment, U)
        ll, _ = _loglik_terms(self.spec, self.data, p, need_grad=False)
        return ll

    def log_prob(self, theta) -> float:
        return float(sum(self.log_prob_terms(theta).values()))

    def log_prob_and_grad(self, theta) -> tuple[float, np.ndarray]:
        spec, data = self.spec, self.data
        pv = self.unpack(theta)
        K, I, T = spec.K, data.n_individuals, self.layout.T
        sigma = pv.sigma
        Lc, lkj, _ = corr.log_density_and_grad(pv.corr_free, K, LKJ_ETA)
        U = (pv.z @ Lc.T) * sigma
        p = _obs_param_arrays(spec, data, pv.fixed, pv.treatment, U)
        ll, gobs = _loglik_terms(spec, data, p, need_grad=True)

        g_fixed = np.zeros((K, T))
        g_U = np.zeros((I, K))
        for k, name in enumerate(spec.active):
            go = gobs[name]
            g_fixed[k] = np.bincount(data.task, weights=go, minlength=T)
            g_U[:, k] = np.bincount(data.ind, weights=go, minlength=I)
        g_treat = np.zeros(0)
        if spec.has_treatment:
            g_treat = np.bincount(data.treat, weights=gobs["f"], minlength=3)[1:]

        # U = Z L^T diag(sigma)
        LZ = pv.z @ Lc.T
        g_sigma = np.sum(g_U * LZ, axis=0)
        g_L = (sigma[:, None] * g_U.T) @ pv.z
        g_z = (g_U * sigma) @ Lc
        _, _, g_corr = corr.log_density_and_grad(pv.corr_free, K, LKJ_ETA, grad_L=g_L)

        fx = np.concatenate([pv.fixed.ravel(), pv.treatment])
        logp = (
            float(np.sum(ll))
            - 0.5 * float(np.sum(fx**2)) - fx.size * _LOG_SQRT_2PI
            + float(np.sum(-sigma + pv.log_sigma))
            + lkj
            - 0.5 * float(np.sum(pv.z**2)) - pv.z.size * _LOG_SQRT_2PI
        )
        grad = np.concatenate([
            (g_fixed - pv.fixed).ravel(),
            g_treat - pv.treatment,
            g_sigma * sigma - sigma + 1.0,
            g_corr,
            (g_z - pv.z).ravel(),
        ])
        return logp, grad


def log_posterior(spec: ModelSpec, data: Sequence[Observation] | ChoiceData, pv: ParamVector) -> float:
    """Log posterior density (unconstrained space, Jacobians included)."""
    if not isinstance(data, ChoiceData):
        data = ChoiceData.from_observations(data)
    model = HierarchicalModel(spec, _with_individuals(data, pv))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        terms = model.log_prob_terms(pv.to_array())
    for name, v in terms.items():
        if not math.isfinite(v):
            raise NonFiniteDensity(name)
    return float(sum(terms.values()))


def grad_log_posterior(spec: ModelSpec, data: Sequence[Observation] | ChoiceData, pv: ParamVector) -> np.ndarray:
    if not isinstance(data, ChoiceData):
        data = ChoiceData.from_observations(data)
    model = HierarchicalModel(spec, _with_individuals(data, pv))
    logp, grad = model.log_prob_and_grad(pv.to_array())
    if not math.isfinite(logp) or not np.all(np.isfinite(grad)):
        raise NonFiniteDensity("gradient")
    return grad


def _with_individuals(data: ChoiceData, pv: ParamVector) -> ChoiceData:
    # allow a parameter vector with more individuals than appear in the data
    I = pv.z.shape[0]
    if I < data.n_individuals:
        raise ValueError(f"parameter vector has {I} individuals, data has {data.n_individuals}")
    if I == data.n_individuals:
        return data
    extra = tuple(f"_unobserved{k}" for k in range(I - data.n_individuals))
    return ChoiceData(data.individuals + extra, data.ind, data.task, data.treat,
                      data.gap, data.n_pref, data.sample_size, data.y)


# ------------------------------------------------ constrained-draw evaluation


def unflatten_draw(spec: ModelSpec, n_individuals: int, pop: np.ndarray, u: np.ndarray):
    """Split a constrained population vector (see :meth:`ParamVector.constrained`)."""
    K, T = spec.K, len(TASKS)
    fixed = pop[: K * T].reshape(K, T)
    off = K * T
    treatment = pop[off : off + 2] if spec.has_treatment else np.zeros(0)
    return fixed, treatment, u.reshape(n_individuals, K)


def pointwise_from_constrained(spec: ModelSpec, data: ChoiceData, pop: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Pointwise log-likelihood for one constrained draw (``phi`` on natural scale)."""
    fixed, treatment, U = unflatten_draw(spec, data.n_individuals, pop, u)
    fixed = fixed.copy()
    if "phi" in spec.active:
        k = spec.active.index("phi")
        fixed[k] = np.log(fixed[k])
    p = _obs_param_arrays(spec, data, fixed, treatment, U)
    ll, _ = _loglik_terms(spec, data, p, need_grad=False)
    return ll
