import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from dpgpd.distributions import TailParams
from dpgpd.dpmg import TAIL, BaseMeasureParams, ClusterState, marginal_likelihood
from dpgpd.gpd_tail import (
    PosteriorEvaluator,
    ProposalTuning,
    TailPriors,
    gamma_log_hastings,
    jeffreys_logprior,
    joint_log_posterior,
    mh_update_sigma,
    mh_update_u,
    mh_update_xi,
    pilot_fit,
    plugin_threshold_ratio,
    sigma_lower_bound,
    threshold_logprior,
    truncnorm_log_hastings,
    u_lower_bound,
    xi_lower_bound,
)


def test_jeffreys_prior_formula():
    assert jeffreys_logprior(2.0, 0.5) == pytest.approx(-math.log(2.0 * 1.5 * math.sqrt(2.0)))
    with pytest.raises(ValueError):
        jeffreys_logprior(1.0, -0.5)


def test_threshold_prior_is_normal():
    pri = TailPriors(10.0, 4.0)
    assert threshold_logprior(11.0, pri) == pytest.approx(stats.norm(10, 2).logpdf(11.0))


def test_prior_from_data_interval_rule():
    x = np.random.default_rng(0).gamma(2.0, 3.0, 500)
    pri = TailPriors.from_data(x)
    q50, q90, q99 = np.quantile(x, [0.5, 0.9, 0.99])
    assert pri.m_u == pytest.approx(q90)
    d = stats.norm(pri.m_u, math.sqrt(pri.var_u))
    assert d.cdf(q99) - d.cdf(q50) == pytest.approx(0.99, abs=1e-10)


def test_prior_from_data_width_rule():
    x = np.random.default_rng(0).gamma(2.0, 3.0, 500)
    pri = TailPriors.from_data(x, rule="width")
    q50, q99 = np.quantile(x, [0.5, 0.99])
    assert 2 * 2.5758293035489 * math.sqrt(pri.var_u) == pytest.approx(q99 - q50, rel=1e-10)
    with pytest.raises(ValueError):
        TailPriors.from_data(x, rule="nope")


# --- toy posterior -----------------------------------------------------------------

TOY_X = np.array([0.7, 1.4, 2.2, 4.0, 6.5])
TOY_BM = BaseMeasureParams(1.2, 0.8, alpha=0.5)
TOY_PRI = TailPriors(3.0, 2.0)


def _toy_state(u):
    mem = np.where(TOY_X <= u, np.where(TOY_X < 2.0, 0, 1), TAIL)
    shapes, rates, counts = [3.0, 6.0], [2.5, 2.0], [int((mem == 0).sum()), int((mem == 1).sum())]
    keep = [j for j in range(2) if counts[j] > 0]
    remap = {j: k for k, j in enumerate(keep)}
    mem = np.array([remap.get(int(m), TAIL) for m in mem])
    return ClusterState(mem, [shapes[j] for j in keep], [rates[j] for j in keep], [counts[j] for j in keep])


def _oracle_log_post(u, sigma, xi, state):
    """Term-by-term log posterior with scipy densities and quadrature for H(u)."""
    a = TOY_BM.alpha
    n = state.n_bulk

    def h(v):
        mix = sum(c * stats.gamma.pdf(v, sh, scale=1 / r) for sh, r, c in zip(state.shapes, state.rates, state.counts))
        return (mix + a * marginal_likelihood(v, TOY_BM)) / (a + n)

    mix_cdf = sum(c * stats.gamma.cdf(u, sh, scale=1 / r) for sh, r, c in zip(state.shapes, state.rates, state.counts))
    # base-measure mass below u as the G0 average of the kernel CDF
    al, ag = TOY_BM.a_lambda, TOY_BM.a_gamma
    base = integrate.dblquad(
        lambda g, lam: al * ag * math.exp(-al * lam - ag * g) * special.gammainc(lam, g * u), 0, np.inf, 0, np.inf, epsabs=1e-12, epsrel=1e-10
    )[0]
    H = (mix_cdf + a * base) / (a + n)
    bulk = TOY_X[TOY_X <= u]
    tail = TOY_X[TOY_X > u]
    lp = sum(math.log(h(v)) for v in bulk)
    lp += tail.size * math.log(1 - H)
    lp += sum(stats.genpareto.logpdf(v, c=xi, loc=u, scale=sigma) for v in tail)
    lp += stats.norm(TOY_PRI.m_u, math.sqrt(TOY_PRI.var_u)).logpdf(u)
    lp += -math.log(sigma) - math.log1p(xi) - 0.5 * math.log1p(2 * xi)
    return lp


@pytest.mark.parametrize("u,sigma,xi", [(3.0, 1.0, 0.2), (5.0, 2.0, -0.3), (1.0, 0.7, 0.0), (2.5, 3.0, 1.1)])
def test_joint_log_posterior_term_by_term(u, sigma, xi):
    state = _toy_state(u)
    got = joint_log_posterior(TailParams(u, sigma, xi), state, TOY_BM, TOY_PRI, TOY_X)
    assert got == pytest.approx(_oracle_log_post(u, sigma, xi, state), abs=1e-7)


def test_joint_log_posterior_outside_support():
    state = _toy_state(3.0)
    # xi < 0 puts the upper endpoint at 3 + 1/0.4 = 5.5 < 6.5
    assert joint_log_posterior(TailParams(3.0, 1.0, -0.4), state, TOY_BM, TOY_PRI, TOY_X) == -math.inf


def test_tail_terms_plus_bulk_is_total():
    state = _toy_state(3.0)
    ev = PosteriorEvaluator(TOY_X, state, TOY_BM, TOY_PRI)
    full = ev(3.0, 1.0, 0.2)
    assert full - ev.tail_terms(3.0, 1.0, 0.2) == pytest.approx(ev._threshold_terms(3.0)[0])


def test_u_crossing_one_point_acceptance_ratio():
    """Plug-in ratio for u moving across 4.0: the point moves from B to A."""
    state = _toy_state(5.0)
    ev = PosteriorEvaluator(TOY_X, state, TOY_BM, TOY_PRI)
    cur = TailParams(3.5, 1.0, 0.2)
    lp = ev(cur.u, cur.sigma, cur.xi)
    ratio, _ = plugin_threshold_ratio(ev, cur, lp)(4.5)
    expect = _oracle_log_post(4.5, 1.0, 0.2, state) - _oracle_log_post(3.5, 1.0, 0.2, state)
    assert ratio == pytest.approx(expect, abs=1e-7)
    # 4.0 lies in B at u=3.5 and in A at u=4.5
    assert ev._threshold_terms(3.5)[2].size == 2 and ev._threshold_terms(4.5)[2].size == 1


# --- bounds and Hastings terms --------------------------------------------------------


def test_bounds():
    assert xi_lower_bound(2.0, 1.0, 5.0) == pytest.approx(-0.5)
    assert xi_lower_bound(2.0, 6.0, 5.0) == -math.inf
    assert sigma_lower_bound(-0.2, 1.0, 6.0) == pytest.approx(1.0)
    assert sigma_lower_bound(0.3, 1.0, 6.0) == 0.0
    assert u_lower_bound(0.1, 1.0, 0.3, 9.0) == 0.3
    assert u_lower_bound(-0.25, 1.0, 0.3, 9.0) == pytest.approx(5.0)


def test_truncnorm_hastings_hand_values():
    assert truncnorm_log_hastings(1.0, 1.0, 0.0, 2.0) == 0.0
    got = truncnorm_log_hastings(1.0, 0.5, 0.0, 0.25)
    assert got == pytest.approx(math.log(stats.norm.cdf(2.0)) - math.log(stats.norm.cdf(1.0)))
    assert truncnorm_log_hastings(3.0, 2.0, -math.inf, 1.0) == 0.0


def test_gamma_hastings_hand_values():
    assert gamma_log_hastings(2.0, 2.0, 0.3) == 0.0
    c, p, v = 2.0, 2.6, 0.5
    q = lambda x, m: stats.gamma.logpdf(x, m * m / v, scale=v / m)
    assert gamma_log_hastings(c, p, v) == pytest.approx(q(c, p) - q(p, c))


def _replay_xi(seed, cur, tun, log_post):
    """Recompute the xi step by hand from the same random stream."""
    rng = np.random.default_rng(seed)
    lower = xi_lower_bound(cur.sigma, cur.u, tun.sample_max)
    sd = math.sqrt(tun.v_xi)
    a = (lower - cur.xi) / sd
    prop = cur.xi + sd * -stats.norm.ppf(rng.random() * stats.norm.cdf(-a))
    lp0, lp1 = log_post(cur.u, cur.sigma, cur.xi), log_post(cur.u, cur.sigma, prop)
    ratio = lp1 - lp0 + math.log(stats.norm.cdf((cur.xi - lower) / sd)) - math.log(stats.norm.cdf((prop - lower) / sd))
    accept = ratio >= 0 or math.log(rng.random()) < ratio
    return prop, accept


@pytest.mark.parametrize("seed", range(8))
def test_xi_step_matches_hand_computation(seed):
    state = _toy_state(2.0)
    ev = PosteriorEvaluator(TOY_X, state, TOY_BM, TOY_PRI)
    cur = TailParams(2.0, 1.5, 0.1)
    tun = ProposalTuning(v_xi=0.3, v_sigma=0.3, v_u=0.5, sample_max=TOY_X.max())
    prop, accept = _replay_xi(seed, cur, tun, ev)
    new, acc, _ = mh_update_xi(cur, tun, ev, ev(cur.u, cur.sigma, cur.xi), np.random.default_rng(seed))
    assert acc == accept
    assert new.xi == pytest.approx(prop if accept else cur.xi, rel=1e-12)


def test_u_step_with_identity_proposal_accepts():
    cur = TailParams(3.0, 1.0, 0.2)
    tun = ProposalTuning(0.1, 0.1, 1e-30, 6.5)
    new, acc, _ = mh_update_u(cur, tun, lambda u: (0.0, None), np.random.default_rng(0), 0.7)
    assert acc and new.u == pytest.approx(3.0)


@given(st.integers(0, 2**31), st.floats(-0.45, -0.01), st.floats(0.5, 5.0))
@settings(max_examples=40, deadline=None)
def test_negative_xi_steps_keep_maximum_in_support(seed, xi, sigma):
    x = TOY_X
    u = 2.0
    sigma = max(sigma, -xi * (x.max() - u) * 1.01)
    state = _toy_state(u)
    ev = PosteriorEvaluator(x, state, TOY_BM, TOY_PRI)
    cur = TailParams(u, sigma, xi)
    tun = ProposalTuning(0.05, 0.5, 0.5, x.max())
    rng = np.random.default_rng(seed)
    lp = ev(u, sigma, xi)
    for _ in range(20):
        cur, _, lp = mh_update_xi(cur, tun, ev, lp, rng)
        cur, _, lp = mh_update_sigma(cur, tun, ev, lp, rng)
        assert cur.sigma > 0 and cur.xi > -0.5
        assert cur.xi >= 0 or x.max() <= cur.u - cur.sigma / cur.xi
        assert math.isfinite(lp)


def test_u_chain_under_prior_only_matches_prior():
    pri = TailPriors(5.0, 4.0)
    tun = ProposalTuning(0.1, 0.1, 9.0, -math.inf)
    cur = TailParams(5.0, 1.0, 0.2)
    rng = np.random.default_rng(42)
    draws = []
    for it in range(60000):
        ratio = lambda v, c=cur: (threshold_logprior(v, pri) - threshold_logprior(c.u, pri), None)
        cur, _, _ = mh_update_u(cur, tun, ratio, rng, -math.inf)
        if it % 20 == 0:
            draws.append(cur.u)
    assert stats.kstest(draws, stats.norm(5.0, 2.0).cdf).pvalue > 0.001


def test_pilot_fit_recovers_parameters():
    rng = np.random.default_rng(3)
    x = 2.0 + stats.genpareto.rvs(0.3, scale=1.5, size=4000, random_state=rng)
    sigma, xi, v_sigma, v_xi = pilot_fit(x, 2.0)
    assert abs(sigma - 1.5) < 4 * math.sqrt(v_sigma)
    assert abs(xi - 0.3) < 4 * math.sqrt(v_xi)
    assert pilot_fit(x[:3], 2.0) is None
