import math

import numpy as np
import pandas as pd
import pytest

import expected as X
import oracles
from socialpref.inference.diagnostics import ess, split_rhat
from socialpref.inference.fit import (
    Posterior, aggregate_fit, hmc_fit, individual_fit, posterior_frame, read_posterior,
    summarize, summary_from_frame, table1, waic,
)
from socialpref.inference.hmc import HMCSettings, InitializationError, sample_chain
from socialpref.inference.model import ChoiceData, Layout, ModelSpec, pointwise_from_constrained
from socialpref.inference.recover import coverage_table, recover
from socialpref.io import frame_to_observations
from socialpref.synthetic import Design, PopulationSpec, generate_synthetic


def dataset(seed=1, individuals=30, decisions=6, **spec_kw):
    ds = generate_synthetic(PopulationSpec(**spec_kw), Design(individuals, decisions), seed)
    return ds, ChoiceData.from_observations(frame_to_observations(ds.choices))


def fixed_posterior(spec, data, pop, u, draws=2):
    """Posterior whose every draw equals the given constrained values."""
    lay = Layout(spec, data.n_individuals)
    names = lay.constrained_names() + lay.individual_names(data.individuals)
    row = np.concatenate([pop, np.ravel(u)])
    post = Posterior(spec, data, names, np.tile(row, (draws, 1)), np.zeros(draws, int),
                     len(pop), np.zeros((0, data.n_obs)))
    post.compute_loglik()
    return post


# ------------------------------------------------------------ WAIC


def test_waic_constant_draws():
    r = waic(np.full((10, 1), math.log(0.3)))
    assert r.waic == pytest.approx(-2 * math.log(0.3), abs=1e-14)
    assert r.penalty == 0.0


def test_waic_two_draw_example():
    r = waic(np.log([[0.4], [0.6]]))
    assert r.lppd == pytest.approx(math.log(0.5), abs=1e-15)
    assert r.penalty == pytest.approx(X.WAIC_TWO_DRAW_PENALTY, abs=1e-15)
    assert r.waic == pytest.approx(X.WAIC_TWO_DRAW, abs=1e-14)
    assert r.waic == pytest.approx(-2 * (r.lppd - r.penalty), abs=1e-15)


def test_waic_against_oracle():
    ll = np.random.default_rng(0).normal(-0.7, 0.3, (40, 15))
    r = waic(ll)
    w, lppd, pen = oracles.waic(ll)
    assert (r.waic, r.lppd, r.penalty) == pytest.approx((w, lppd, pen), abs=1e-11)
    assert r.pointwise.sum() == pytest.approx(r.waic, abs=1e-11)


def test_waic_draw_duplication():
    # the unbiased variance is not invariant to duplicating draws: lppd is, and
    # the penalty scales by exactly 2(S-1)/(2S-1)
    ll = np.random.default_rng(1).normal(-0.7, 0.3, (25, 8))
    a, b = waic(ll), waic(np.vstack([ll, ll]))
    S = ll.shape[0]
    assert b.lppd == pytest.approx(a.lppd, abs=1e-12)
    assert b.penalty == pytest.approx(a.penalty * 2 * (S - 1) / (2 * S - 1), abs=1e-12)


def test_waic_single_draw_rejected():
    with pytest.raises(ValueError):
        waic(np.zeros((1, 3)))


# ------------------------------------------------------------ summaries


def _manual_posterior(values, names=("lambda[quest]",)):
    values = np.asarray(values, float).reshape(len(values), -1)
    data = ChoiceData.from_observations([])
    return Posterior(ModelSpec.of("p"), data, list(names), values, np.zeros(len(values), int),
                     len(names), np.zeros((len(values), 0)))


def test_summarize_constant_and_percentile_rule():
    s = summarize(_manual_posterior(np.full(20, 1.7)))
    assert s.loc[0, "mean"] == s.loc[0, "p5"] == s.loc[0, "p95"] == pytest.approx(1.7)
    s = summarize(_manual_posterior(np.arange(1, 101)))
    assert s.loc[0, "p5"] == pytest.approx(X.P5_OF_1_TO_100, abs=1e-12)
    assert s.loc[0, "p95"] == pytest.approx(95.05, abs=1e-12)


def test_table1_layout():
    names = [f"{p}[{t}]" for p in ("lambda", "f", "phi", "delta") for t in ("quest", "paint")]
    vals = np.random.default_rng(0).normal(size=(50, 8))
    t = table1(summarize(_manual_posterior(vals, names)))
    assert list(t.index) == ["mean", "5th percentile", "95th percentile"]
    assert list(t.columns) == [(p, k) for p in ("lambda", "f", "phi", "delta") for k in ("quest", "paint")]
    assert t.loc["mean", ("phi", "paint")] == pytest.approx(vals[:, 5].mean())


def test_summary_from_frame_matches():
    _, data = dataset(individuals=6, decisions=3)
    post = hmc_fit(ModelSpec.of("p"), data, chains=2, warmup=60, draws=40, seed=3)
    a = summarize(post)
    b = summary_from_frame(posterior_frame(post))
    pd.testing.assert_frame_equal(a, b, check_exact=False, rtol=1e-12)


# ------------------------------------------------------------ fit diagnostics


def test_individual_fit_constant_probability():
    ds, data = dataset(individuals=4, decisions=3)
    post = fixed_posterior(ModelSpec.of("p"), data, np.zeros(3), np.zeros(4))
    post.loglik = np.full_like(post.loglik, math.log(0.7))
    out = individual_fit(post)
    assert len(out) == 8
    assert np.allclose(out.fit, 0.7)
    assert (out.n_choices == 3).all()


def test_individual_fit_random_benchmark():
    # social-information-only model with f = 0: every choice has probability 1/2
    _, data = dataset(individuals=5, decisions=4)
    spec = ModelSpec.of("si")
    pop = np.concatenate([[0, 0], [1, 1], [0, 0], [0.5, 0.5], [0.2]])
    post = fixed_posterior(spec, data, pop, np.zeros((5, 2)))
    assert np.allclose(individual_fit(post).fit, 0.5, atol=1e-15)


def test_individual_fit_high_lambda():
    means = {"lambda": (60.0, 60.0), "f": (0.0, 0.0), "phi": (1.0, 1.0), "delta": (0.0, 0.0)}
    ds, data = dataset(individuals=10, decisions=10, means=means, sigma=(0, 0, 0, 0))
    spec = ModelSpec.of("p")
    post = fixed_posterior(spec, data, np.array([60.0, 60.0, 1e-9]), np.zeros(10))
    assert (individual_fit(post).fit > 0.9).all()


def test_aggregate_fit_calibrated():
    ds, data = dataset(seed=4, individuals=300, decisions=10, sigma=(0, 0, 0, 0))
    spec = ModelSpec.of("pbsi")
    truth = PopulationSpec().fixed_effects()
    pop = [truth[f"{p}[{t}]"] for p in ("lambda", "f", "phi", "delta") for t in ("quest", "paint")]
    pop += [0.0, 0.0] + [1e-9] * 4 + [0.0] * 6
    post = fixed_posterior(spec, data, np.array(pop), np.zeros((300, 4)))
    agg = aggregate_fit(post)
    assert set(agg.columns) >= {"task", "treatment", "n_pref", "n_obs", "observed", "predicted"}
    p = agg.predicted.clip(1e-3, 1 - 1e-3)
    z = (agg.observed - agg.predicted) / np.sqrt(p * (1 - p) / agg.n_obs)
    assert (np.abs(z) < 4).all()
    assert (np.abs(z) < 2.5).mean() > 0.9


def test_aggregate_fit_limits_and_missing_cells():
    means = {"lambda": (0.0, 0.0), "f": (6.0, 6.0), "phi": (0.2, 0.2), "delta": (0.0, 0.0)}
    ds, data = dataset(seed=2, individuals=60, decisions=10, means=means, sigma=(0, 0, 0, 0),
                       treatment=(0.0, 0.0))
    keep = data.treat != 1
    data = data.subset(keep)
    spec = ModelSpec.of("si")
    pop = np.array([6.0, 6.0, 0.2, 0.2, 0.0, 0.0, 1e-9, 1e-9, 0.0])
    post = fixed_posterior(spec, data, pop, np.zeros((60, 2)))
    agg = aggregate_fit(post)
    assert "reward" not in set(agg.treatment)
    top = agg[agg.n_pref == 5]
    assert (top.predicted > 0.95).all() and (top.observed > 0.9).all()


# ------------------------------------------------------------ sampler


def test_sample_chain_standard_normal():
    res = sample_chain(lambda q: (-0.5 * q @ q, -q), 3, 300, 1000, np.random.default_rng(0))
    assert np.abs(res.draws.mean(axis=0)).max() < 0.2
    assert np.abs(res.draws.std(axis=0) - 1).max() < 0.15
    assert res.divergent.sum() == 0


def test_sample_chain_init_error():
    with pytest.raises(InitializationError):
        sample_chain(lambda q: (-math.inf, q), 2, 10, 10, np.random.default_rng(0))


def test_diagnostics():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 500))
    assert split_rhat(x) < 1.02
    assert 1500 < ess(x) <= 2600
    y = x + np.arange(4)[:, None]
    assert split_rhat(y) > 1.5
    ar = np.zeros((2, 2000))
    for t in range(1, 2000):
        ar[:, t] = 0.9 * ar[:, t - 1] + rng.normal(size=2)
    assert ess(ar) < 600


def test_prior_recovery():
    spec = ModelSpec.of("p")
    data = ChoiceData.from_observations([])
    post = hmc_fit(spec, data, chains=4, warmup=300, draws=500, seed=1)
    for name in ("lambda[quest]", "lambda[paint]"):
        x = post.column(name)
        mcse = x.std() / math.sqrt(post.ess[name])
        assert abs(x.mean()) < 3 * mcse
        assert post.rhat[name] < 1.05


def test_p_variant_coin_flip_centers_lambda_at_zero():
    means = {"lambda": (0.0, 0.0), "f": (0.0, 0.0), "phi": (1.0, 1.0), "delta": (0.0, 0.0)}
    _, data = dataset(seed=5, individuals=40, decisions=10, means=means, sigma=(0, 0, 0, 0))
    post = hmc_fit(ModelSpec.of("p"), data, chains=2, warmup=200, draws=300, seed=2)
    for name in ("lambda[quest]", "lambda[paint]"):
        x = post.column(name)
        assert abs(x.mean()) < 2 * x.std()


def test_chain_determinism():
    _, data = dataset(individuals=8, decisions=4)
    spec = ModelSpec.of("psi")
    a = hmc_fit(spec, data, chains=2, warmup=50, draws=30, seed=9)
    b = hmc_fit(spec, data, chains=3, warmup=50, draws=30, seed=9, workers=2)
    assert np.array_equal(a.samples, b.samples[: 2 * 30])
    assert np.array_equal(a.loglik, b.loglik[: 2 * 30])
    c = hmc_fit(spec, data, chains=2, warmup=50, draws=30, seed=10)
    assert not np.array_equal(a.samples, c.samples)


def test_pooling_without_heterogeneity():
    means = {"lambda": (3.0, 3.0), "f": (0.0, 0.0), "phi": (1.0, 1.0), "delta": (0.0, 0.0)}
    spread, scale = [], []
    for sd in (0.0, 1.5):
        _, data = dataset(seed=6, individuals=30, decisions=10, means=means, sigma=(sd, 0, 0, 0))
        post = hmc_fit(ModelSpec.of("p"), data, chains=2, warmup=300, draws=300, seed=4)
        u = post.samples[:, post.population :].mean(axis=0)
        spread.append(u.std())
        scale.append(np.median(post.column("sigma[lambda]")))
    # without heterogeneity the individual estimates collapse onto the population mean
    assert spread[0] < 0.5 * spread[1]
    assert spread[0] < 0.4
    assert scale[0] < scale[1]


def test_posterior_csv_round_trip(tmp_path):
    _, data = dataset(individuals=6, decisions=3)
    spec = ModelSpec.of("pbsi")
    post = hmc_fit(spec, data, chains=2, warmup=40, draws=20, seed=5)
    path = tmp_path / "posterior.csv"
    from socialpref.io import write_table

    write_table(posterior_frame(post), path)
    back = read_posterior(path, spec, data)
    assert np.array_equal(back.samples, post.samples)
    assert np.array_equal(back.chain, post.chain)
    assert np.max(np.abs(back.loglik - post.loglik)) < 1e-12
    assert waic(back.loglik).waic == pytest.approx(waic(post.loglik).waic, abs=1e-9)


def test_recover_and_coverage_table():
    spec = ModelSpec.of("p")
    rep = recover(PopulationSpec(), Design(12, 4), seed=3, spec=spec, chains=2, warmup=80, draws=60)
    t = rep.table
    assert list(t.columns) == ["parameter", "true", "mean", "lower", "upper", "bias", "covered"]
    assert set(t.parameter) == {"lambda[quest]", "lambda[paint]", "sigma[lambda]"}
    assert (t.lower <= t.upper).all()
    assert 0 <= rep.coverage() <= 1
    assert np.allclose(t.bias, t["mean"] - t["true"])


def test_coverage_table_logic():
    post = _manual_posterior(np.arange(1, 101))
    t = coverage_table(post, {"lambda[quest]": 50.0, "other": 1.0})
    assert len(t) == 1 and bool(t.covered[0])
    t = coverage_table(post, {"lambda[quest]": 99.0})
    assert not bool(t.covered[0])
