import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import expected as X
import oracles
from socialpref.choice import (
    AgentParams, BeliefState, ChoiceSituation, ModelDomainError, Observation, StrategyClass,
    binary_logit, choice_probabilities, classify, digamma, expected_shares, log_likelihood,
    log_share_expectation, pointwise_log_likelihood, posterior_shares, prior_alpha, update_belief,
)


def P(lam=0.0, f=0.0, phi=1.0, delta=0.0):
    return AgentParams(lam, f, phi, delta)


# ----------------------------------------------------------- types


def test_agent_params_validation():
    with pytest.raises(ValueError):
        P(phi=-1)
    with pytest.raises(ValueError):
        P(lam=math.inf)


def test_binary_situation_layout():
    s = ChoiceSituation.binary(0.4, 1, 3)
    assert s.nu == (-0.2, 0.2)
    assert s.counts == (2, 3)
    assert s.sample_size == 5 and s.J == 2


def test_observation_checks_delta_consistency():
    sit = ChoiceSituation.binary(0.4, 0, 3)
    with pytest.raises(ValueError):
        Observation("a", "quest", "control", sit, chosen=0, delta_measured=0.3, preferred=0)


# ----------------------------------------------------------- prior / update


def test_prior_alpha_unbiased():
    assert prior_alpha(P(phi=2), (0.2, -0.2)).alpha == pytest.approx((2, 2), abs=1e-15)


def test_prior_alpha_biased():
    a = prior_alpha(P(phi=1, delta=1), (0.5, -0.5)).alpha
    assert a == pytest.approx(X.PRIOR_ALPHA_BIASED, abs=1e-14)
    assert sum(a) == pytest.approx(2.0, abs=1e-14)


def test_prior_alpha_unbiased_shares_are_uniform():
    b = prior_alpha(P(phi=1), (0.9, -0.3))
    assert expected_shares(b) == pytest.approx([0.5, 0.5], abs=1e-15)


def test_prior_alpha_degenerate():
    with pytest.raises(ModelDomainError):
        prior_alpha(P(phi=0), (0.1, -0.1))


def test_update_belief_examples():
    b = update_belief(BeliefState((1, 1)), (3, 2))
    assert b.alpha == (4, 3)
    assert expected_shares(b) == pytest.approx([4 / 7, 3 / 7], abs=1e-15)
    b = update_belief(BeliefState(X.PRIOR_ALPHA_BIASED), (0, 5))
    assert expected_shares(b) == pytest.approx(X.SHARES_AFTER_UPDATE, abs=1e-14)
    b0 = BeliefState((1.3, 0.7))
    assert update_belief(b0, (0, 0)) == b0


def test_update_belief_length_mismatch():
    with pytest.raises(ValueError):
        update_belief(BeliefState((1, 1)), (1, 2, 3))


def test_expected_shares_examples():
    assert expected_shares(BeliefState((1, 1))) == pytest.approx([0.5, 0.5])
    phi = 1.0
    b = BeliefState((2 * phi * 0.5 + 3, 2 * phi * 0.5 + 2))
    assert expected_shares(b) == pytest.approx([4 / 7, 3 / 7], abs=1e-15)


@settings(max_examples=300, deadline=None)
@given(
    phi=st.floats(0.01, 50), delta=st.floats(-5, 5), gap=st.floats(0, 1),
    n=st.integers(0, 5), pref=st.integers(0, 1),
)
def test_binary_logodds_formula_equivalence(phi, delta, gap, n, pref):
    sit = ChoiceSituation.binary(gap, pref, n)
    params = P(phi=phi, delta=delta)
    chained = expected_shares(update_belief(prior_alpha(params, sit.nu), sit.counts))
    ref = oracles.closed_form_shares(phi, delta, sit.nu, sit.counts)
    assert np.max(np.abs(chained - ref)) < 1e-12
    assert np.max(np.abs(posterior_shares(params, sit) - ref)) < 1e-12


# ----------------------------------------------------------- choice probabilities


def test_choice_probability_examples():
    assert choice_probabilities(P(), (0.3, -0.3), (0.2, 0.8)) == pytest.approx([0.5, 0.5])
    assert choice_probabilities(P(f=1), (0.3, -0.3), (0.6, 0.4)) == pytest.approx([0.6, 0.4], abs=1e-15)
    p = choice_probabilities(P(lam=5.09, f=1.22), (0.2, -0.2), (0.2089, 0.7911))
    assert p[0] == pytest.approx(X.P_FIRST_PAINT_MEANS, abs=1e-12)
    assert round(p[0], 3) == 0.601


def test_choice_probabilities_zero_share_anticonformist():
    with pytest.raises(ModelDomainError):
        choice_probabilities(P(f=-1), (0, 0), (0.0, 1.0))
    # conformists simply never pick an unobserved alternative
    assert choice_probabilities(P(f=1), (0, 0), (0.0, 1.0)) == pytest.approx([0, 1])


@settings(max_examples=300, deadline=None)
@given(
    lam=st.floats(-10, 10), f=st.floats(-3, 3),
    nu=st.lists(st.floats(-1, 1), min_size=2, max_size=5),
    data=st.data(),
)
def test_choice_probabilities_match_oracle(lam, f, nu, data):
    s = data.draw(st.lists(st.floats(0.01, 1), min_size=len(nu), max_size=len(nu)))
    got = choice_probabilities(P(lam=lam, f=f), nu, s)
    assert np.max(np.abs(got - oracles.choice_probs(lam, f, nu, s))) < 1e-12


@settings(max_examples=200, deadline=None)
@given(gap=st.floats(0, 1), f=st.floats(0.05, 3), lam=st.floats(-3, 3), s=st.floats(0.01, 0.98))
def test_monotone_in_own_share(gap, f, lam, s):
    nu = (gap / 2, -gap / 2)
    lo = choice_probabilities(P(lam=lam, f=f), nu, (s, 1 - s))[0]
    hi = choice_probabilities(P(lam=lam, f=f), nu, (s + 0.01, 0.99 - s))[0]
    assert hi > lo or (lo == hi == 1.0)
    lo = choice_probabilities(P(lam=lam, f=-f), nu, (s, 1 - s))[0]
    hi = choice_probabilities(P(lam=lam, f=-f), nu, (s + 0.01, 0.99 - s))[0]
    assert hi < lo or (lo == hi == 0.0)
    flat = [choice_probabilities(P(lam=lam), nu, (x, 1 - x))[0] for x in (s, s + 0.01)]
    assert flat[0] == flat[1]


def test_binary_logit_matches_full_model():
    rng = np.random.default_rng(0)
    for _ in range(200):
        lam, f, delta = rng.normal(0, 2, 3)
        phi = rng.uniform(0.1, 10)
        gap = rng.uniform(0, 1)
        n = int(rng.integers(0, 6))
        sit = ChoiceSituation.binary(gap, 0, n)
        params = P(lam=lam, f=f, phi=phi, delta=delta)
        p = choice_probabilities(params, sit.nu, posterior_shares(params, sit))[0]
        eta = binary_logit(lam, f, phi, delta, gap, n, 5)
        assert 1 / (1 + math.exp(-eta)) == pytest.approx(p, abs=1e-13)


# ----------------------------------------------------------- likelihood


def _obs(chosen=0, pref=0, gap=0.4, n=3, ind="a"):
    return Observation(ind, "quest", "control", ChoiceSituation.binary(gap, pref, n), chosen, gap, pref)


def test_log_likelihood_examples():
    look = {("a", "quest", "control"): P(lam=0, f=0)}
    assert log_likelihood(look, []) == 0.0
    assert log_likelihood(look, [_obs()]) == pytest.approx(math.log(0.5), abs=1e-15)
    look = {("a", "quest", "control"): P(lam=2, f=1.5, phi=2, delta=0.5)}
    o1, o2 = _obs(0), _obs(1, gap=0.9, n=1)
    assert log_likelihood(look, [o1, o2]) == pytest.approx(
        log_likelihood(look, [o1]) + log_likelihood(look, [o2]), abs=1e-14
    )
    ref = oracles.loglik_binary(2, 1.5, 2, 0.5, 0.9, 1, False)
    assert log_likelihood(look, [o2]) == pytest.approx(ref, abs=1e-13)


def test_pointwise_flags_impossible_choices():
    look = {("a", "quest", "control"): P(lam=0, f=1, phi=1e-300)}
    # all 5 peers chose alternative 0 and the prior is negligible
    o = _obs(chosen=1, n=5, gap=0.0)
    ll = pointwise_log_likelihood(look, [o])
    assert ll[0] < -100 or ll[0] == -math.inf


# ----------------------------------------------------------- classify


@pytest.mark.parametrize("f,cls", [
    (2.61, StrategyClass.CONFORMIST), (0.0, StrategyClass.INDEPENDENT),
    (-0.5, StrategyClass.ANTICONFORMIST), (0.5, StrategyClass.NONCONFORMIST),
    (1.0, StrategyClass.LINEAR), (1 + 1e-12, StrategyClass.LINEAR), (1.01, StrategyClass.CONFORMIST),
])
def test_classify(f, cls):
    assert classify(f) is cls


@given(st.floats(-10, 10), st.floats(0, 0.4))
def test_classify_partition(f, tol):
    c = classify(f, tol)
    hits = [f < -tol, abs(f) <= tol, tol < f < 1 - tol, abs(f - 1) <= tol, f > 1 + tol]
    names = [StrategyClass.ANTICONFORMIST, StrategyClass.INDEPENDENT, StrategyClass.NONCONFORMIST,
             StrategyClass.LINEAR, StrategyClass.CONFORMIST]
    assert sum(hits) == 1
    assert c is names[hits.index(True)]


# ----------------------------------------------------------- digamma


@pytest.mark.parametrize("x", [1e-3, 0.1, 0.5, 1, 1.5, 2, 3.7, 6, 10, 123.4, 1e6])
def test_digamma_against_mpmath(x):
    assert digamma(x) == pytest.approx(oracles.digamma(x), rel=1e-13, abs=1e-13)


def test_log_share_expectation_examples():
    exact, approx = log_share_expectation(BeliefState((2, 2)), 0)
    assert exact == pytest.approx(X.LOG_SHARE_EXACT, abs=1e-13)
    assert approx == pytest.approx(X.LOG_SHARE_APPROX, abs=1e-14)
    assert log_share_expectation(BeliefState((2, 2)), 1) == (exact, approx)


def test_log_share_expectation_domain():
    with pytest.raises(ModelDomainError):
        log_share_expectation(BeliefState((0.4, 2)), 0)
