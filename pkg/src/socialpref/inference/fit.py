"""Posterior fitting, information criteria and fit summaries."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from socialpref.inference import diagnostics
from socialpref.inference.hmc import HMCSettings, sample_chain
from socialpref.inference.model import (
    TASKS, TREATMENTS, ChoiceData, HierarchicalModel, Layout, ModelSpec,
    pointwise_from_constrained,
)

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 0.10


@dataclass
class Posterior:
    """Posterior draws on the constrained scale.

    ``samples`` holds population parameters followed by the individual
    effects ``u[i, p]``; ``population`` counts the leading population columns.
    """

    spec: ModelSpec
    data: ChoiceData
    names: list[str]
    samples: np.ndarray
    chain: np.ndarray
    population: int
    loglik: np.ndarray
    divergences: int = 0
    rhat: dict[str, float] = field(default_factory=dict)
    ess: dict[str, float] = field(default_factory=dict)
    step_size: list[float] = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.samples.shape[0]

    @property
    def population_names(self) -> list[str]:
        return self.names[: self.population]

    @property
    def divergence_rate(self) -> float:
        return self.divergences / max(self.n_draws, 1)

    @property
    def reliable(self) -> bool:
        return self.divergence_rate <= DIVERGENCE_LIMIT

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.names.index(name)]

    def by_chain(self, name: str) -> np.ndarray:
        col = self.column(name)
        return np.stack([col[self.chain == c] for c in np.unique(self.chain)])

    def compute_diagnostics(self) -> None:
        chains = np.unique(self.chain)
        self.rhat, self.ess = {}, {}
        if chains.size < 2:
            return
        for k, name in enumerate(self.names):
            x = np.stack([self.samples[self.chain == c, k] for c in chains])
            self.rhat[name] = diagnostics.split_rhat(x)
            self.ess[name] = diagnostics.ess(x)

    def compute_loglik(self) -> None:
        I, K = self.data.n_individuals, self.spec.K
        pop = self.samples[:, : self.population]
        u = self.samples[:, self.population :]
        self.loglik = np.stack([
            pointwise_from_constrained(self.spec, self.data, pop[s], u[s].reshape(I, K))
            for s in range(self.n_draws)
        ]) if self.n_draws else np.zeros((0, self.data.n_obs))


def _run_chain(args):
    spec, data, c, seed, warmup, draws, settings = args
    model = HierarchicalModel(spec, data)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(c,)))
    res = sample_chain(model.log_prob_and_grad, model.dim, warmup, draws, rng, settings)
    pop, ind, ll = [], [], []
    for theta in res.draws:
        pv = model.unpack(theta)
        pop.append(pv.constrained())
        ind.append(pv.individual_effects().ravel())
        ll.append(model.pointwise(pv))
    return (np.asarray(pop), np.asarray(ind), np.asarray(ll),
            int(res.divergent.sum()), res.step_size, res.warmup_divergent)


def hmc_fit(
    spec: ModelSpec, data: ChoiceData, chains: int = 4, warmup: int = 500, draws: int = 500,
    seed: int = 0, workers: int = 1, settings: HMCSettings = HMCSettings(),
) -> Posterior:
    """Sample the posterior with independent chains.

    Chain ``c`` draws from the stream ``SeedSequence(seed, spawn_key=(c,))``,
    so its draws do not depend on how many chains run or on ``workers``.
    """
    if chains < 1:
        raise ValueError("need at least one chain")
    if chains < 2:
        logger.warning("split R-hat needs at least 2 chains")
    jobs = [(spec, data, c, seed, warmup, draws, settings) for c in range(chains)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]

    layout = Layout(spec, data.n_individuals)
    names = layout.constrained_names() + layout.individual_names(data.individuals)
    pop = np.concatenate([r[0] for r in results])
    ind = np.concatenate([r[1] for r in results])
    post = Posterior(
        spec=spec, data=data, names=names,
        samples=np.hstack([pop, ind]),
        chain=np.repeat(np.arange(chains), draws),
        population=pop.shape[1],
        loglik=np.concatenate([r[2] for r in results]),
        divergences=sum(r[3] for r in results),
        step_size=[r[4] for r in results],
    )
    post.compute_diagnostics()
    if not post.reliable:
        logger.warning("fit unreliable: %.1f%% divergent transitions", 100 * post.divergence_rate)
    return post


# ------------------------------------------------------------------- WAIC


@dataclass(frozen=True)
class WaicResult:
    waic: float
    lppd: float
    penalty: float
    pointwise: np.ndarray  # per-observation contribution to waic


def waic(pointwise_loglik) -> WaicResult:
    """WAIC from a ``draws x observations`` log-likelihood matrix.

    ``lppd`` is the log of the draw-averaged likelihood; the penalty sums the
    unbiased (``ddof=1``) variance of the log-likelihood across draws.
    """
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim != 2:
        raise ValueError("expected a (draws, observations) matrix")
    S = ll.shape[0]
    if S < 2:
        raise ValueError("WAIC needs at least 2 draws for the variance penalty")
    lppd_i = logsumexp(ll, axis=0) - np.log(S)
    pen_i = ll.var(axis=0, ddof=1)
    contrib = -2.0 * (lppd_i - pen_i)
    lppd, pen = float(lppd_i.sum()), float(pen_i.sum())
    return WaicResult(waic=-2.0 * (lppd - pen), lppd=lppd, penalty=pen, pointwise=contrib)


# --------------------------------------------------------------- summaries


def summarize(posterior: Posterior, percentiles: Sequence[float] = (5, 95), population_only: bool = True) -> pd.DataFrame:
    """Posterior mean and percentiles per parameter.

    Percentiles interpolate linearly between order statistics: the q-th
    percentile of ``n`` sorted draws sits at position ``(n - 1) * q / 100``.
    """
    if posterior.n_draws == 0:
        raise ValueError("posterior has no draws")
    k = posterior.population if population_only else len(posterior.names)
    x = posterior.samples[:, :k]
    out = pd.DataFrame({"parameter": posterior.names[:k], "mean": x.mean(axis=0)})
    for q in percentiles:
        out[f"p{q:g}"] = np.percentile(x, q, axis=0, method="linear")
    if posterior.rhat:
        out["rhat"] = [posterior.rhat.get(n, np.nan) for n in out["parameter"]]
        out["ess"] = [posterior.ess.get(n, np.nan) for n in out["parameter"]]
    return out


def table1(summary: pd.DataFrame, percentiles: Sequence[float] = (5, 95)) -> pd.DataFrame:
    """Arrange task-level parameters as rows mean/percentiles x columns (param, task)."""
    s = summary.set_index("parameter")
    cols, data = [], {}
    for p in ("lambda", "f", "phi", "delta"):
        for t in TASKS:
            name = f"{p}[{t}]"
            if name in s.index:
                cols.append((p, t))
                data[(p, t)] = [s.loc[name, "mean"]] + [s.loc[name, f"p{q:g}"] for q in percentiles]
    index = ["mean"] + [f"{q:g}th percentile" for q in percentiles]
    return pd.DataFrame(data, index=index, columns=pd.MultiIndex.from_tuples(cols, names=["param", "task"]))


def _choice_probs(posterior: Posterior) -> np.ndarray:
    return np.exp(posterior.loglik)


def individual_fit(posterior: Posterior) -> pd.DataFrame:
    """Mean posterior probability of each individual's observed choices, per task."""
    d = posterior.data
    p_obs = _choice_probs(posterior).mean(axis=0)
    df = pd.DataFrame({
        "individual_id": np.asarray(d.individuals, dtype=object)[d.ind],
        "task": np.asarray(TASKS, dtype=object)[d.task],
        "p": p_obs,
    })
    out = df.groupby(["individual_id", "task"], sort=False)["p"].agg(["mean", "size"]).reset_index()
    return out.rename(columns={"mean": "fit", "size": "n_choices"})


def aggregate_fit(posterior: Posterior) -> pd.DataFrame:
    """Observed vs posterior-predictive rate of choosing the preferred alternative.

    Cells are task x treatment x number of peers who chose the preferred
    alternative; cells without observations are absent.
    """
    d = posterior.data
    p_chosen = _choice_probs(posterior)
    p_pref = np.where(d.y > 0, p_chosen, 1.0 - p_chosen).mean(axis=0)
    df = pd.DataFrame({
        "task": np.asarray(TASKS, dtype=object)[d.task],
        "treatment": np.asarray(TREATMENTS, dtype=object)[d.treat],
        "n_pref": d.n_pref.astype(int),
        "observed": d.y,
        "predicted": p_pref,
    })
    g = df.groupby(["task", "treatment", "n_pref"], sort=True)
    out = g.agg(n_obs=("observed", "size"), observed=("observed", "mean"), predicted=("predicted", "mean"))
    return out.reset_index()


# --------------------------------------------------------------- files

POSTERIOR_COLUMNS = ("draw", "chain", "parameter", "value")


def posterior_frame(posterior: Posterior) -> pd.DataFrame:
    """Long table ``draw, chain, parameter, value``; ``draw`` counts within a chain."""
    S, P = posterior.samples.shape
    within = np.zeros(S, dtype=np.int64)
    for c in np.unique(posterior.chain):
        m = posterior.chain == c
        within[m] = np.arange(m.sum())
    return pd.DataFrame({
        "draw": np.repeat(within, P),
        "chain": np.repeat(posterior.chain, P),
        "parameter": np.tile(np.asarray(posterior.names, dtype=object), S),
        "value": posterior.samples.ravel(),
    })


def read_posterior(path, spec: ModelSpec, data: ChoiceData) -> Posterior:
    """Rebuild a :class:`Posterior` from ``posterior.csv`` and the fitted data."""
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in POSTERIOR_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    layout = Layout(spec, data.n_individuals)
    names = layout.constrained_names() + layout.individual_names(data.individuals)
    wide = df.pivot(index=["chain", "draw"], columns="parameter", values="value")
    absent = [n for n in names if n not in wide.columns]
    if absent:
        raise ValueError(f"{path}: posterior lacks parameters {absent[:5]} for model {spec.variant.value}")
    wide = wide.sort_index()
    post = Posterior(
        spec=spec, data=data, names=names, samples=wide[names].to_numpy(),
        chain=wide.index.get_level_values("chain").to_numpy(),
        population=len(layout.constrained_names()), loglik=np.zeros((0, data.n_obs)),
    )
    post.compute_loglik()
    post.compute_diagnostics()
    return post


def waic_frame(result: WaicResult, model: str, n_draws: int) -> pd.DataFrame:
    return pd.DataFrame([{
        "model": model, "waic": result.waic, "lppd": result.lppd, "penalty": result.penalty,
        "n_draws": n_draws, "n_obs": result.pointwise.size,
    }])


def summary_from_frame(df: pd.DataFrame, percentiles: Sequence[float] = (5, 95), population_only: bool = True) -> pd.DataFrame:
    """:func:`summarize` computed from a long ``posterior.csv`` table."""
    wide = df.pivot(index=["chain", "draw"], columns="parameter", values="value")
    order = list(dict.fromkeys(df["parameter"]))
    if population_only:
        order = [n for n in order if not n.startswith("u[")]
    x = wide[order].to_numpy()
    out = pd.DataFrame({"parameter": order, "mean": x.mean(axis=0)})
    for q in percentiles:
        out[f"p{q:g}"] = np.percentile(x, q, axis=0, method="linear")
    chains = wide.index.get_level_values("chain").to_numpy()
    if np.unique(chains).size >= 2:
        per = [np.stack([x[chains == c, k] for c in np.unique(chains)]) for k in range(len(order))]
        out["rhat"] = [diagnostics.split_rhat(p) for p in per]
        out["ess"] = [diagnostics.ess(p) for p in per]
    return out
