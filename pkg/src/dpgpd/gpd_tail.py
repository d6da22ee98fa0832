"""Priors, joint log posterior and Metropolis-Hastings moves for the GPD tail.

The threshold ``u``, scale ``sigma`` and shape ``xi`` are updated one at a
time with truncated proposals that keep the sample maximum inside the GPD
support. All acceptance ratios are computed on the log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from dpgpd.distributions import TailParams, TruncatedNormalSpec, sample_truncated_normal, std_normal_logcdf
from dpgpd.dpmg import BaseMeasureParams, ClusterState, mixture_cdf, mixture_logpdf


@dataclass(frozen=True)
class TailPriors:
    m_u: float
    var_u: float

    def __post_init__(self):
        if not self.var_u > 0:
            raise ValueError("var_u must be positive")

    @classmethod
    def from_data(cls, data, mass: float = 0.99, rule: str = "interval") -> TailPriors:
        """Mean at the empirical 90% quantile; the variance follows ``rule``.

        ``"interval"``: the prior puts probability ``mass`` between the
        empirical 50% and 99% quantiles. ``"width"``: the central ``mass``
        interval of the prior is as wide as that quantile range.
        """
        q50, q90, q99 = np.quantile(np.asarray(data, dtype=float), [0.5, 0.9, 0.99])
        if not q50 < q90 < q99:
            raise ValueError("data too degenerate to place the threshold prior")
        if rule == "width":
            sd = (q99 - q50) / (2.0 * special.ndtri(0.5 + 0.5 * mass))
            return cls(m_u=float(q90), var_u=float(sd * sd))
        if rule != "interval":
            raise ValueError(f"unknown threshold prior rule {rule!r}")

        def excess(sd):
            return special.ndtr((q99 - q90) / sd) - special.ndtr((q50 - q90) / sd) - mass

        hi = q99 - q50
        while excess(hi) > 0:
            hi *= 2.0
        sd = optimize.brentq(excess, 1e-12 * hi, hi, xtol=1e-14 * hi)
        return cls(m_u=float(q90), var_u=float(sd * sd))


@dataclass
class ProposalTuning:
    v_xi: float
    v_sigma: float
    v_u: float
    sample_max: float

    def __post_init__(self):
        if not (self.v_xi > 0 and self.v_sigma > 0 and self.v_u > 0):
            raise ValueError("proposal variances must be positive")


def jeffreys_logprior(sigma: float, xi: float) -> float:
    if not (sigma > 0 and xi > -0.5):
        raise ValueError("Jeffreys prior needs sigma > 0 and xi > -0.5")
    return -math.log(sigma) - math.log1p(xi) - 0.5 * math.log1p(2.0 * xi)


def threshold_logprior(u: float, priors: TailPriors) -> float:
    return -0.5 * (math.log(2.0 * math.pi * priors.var_u) + (u - priors.m_u) ** 2 / priors.var_u)


class PosteriorEvaluator:
    """Joint log posterior as a function of (u, sigma, xi) for a fixed bulk state.

    Terms that only depend on ``u`` (the bulk sum, ``log(1 - H(u))`` and the
    tail excesses) are cached, so sweeping sigma and xi at fixed ``u`` costs a
    single vectorised GPD evaluation.
    """

    def __init__(self, data, state: ClusterState, bm: BaseMeasureParams, priors: TailPriors):
        self.data = np.asarray(data, dtype=float)
        self.state = state
        self.bm = bm
        self.priors = priors
        self._u = None
        self._cache = None

    def _threshold_terms(self, u: float):
        if self._u != u:
            x = self.data
            bulk = x[x <= u]
            excess = x[x > u] - u
            bulk_sum = float(np.sum(mixture_logpdf(bulk, self.state, self.bm))) if bulk.size else 0.0
            h_u = mixture_cdf(u, self.state, self.bm) if u > 0 else 0.0
            log_tail_mass = math.log1p(-h_u) if h_u < 1.0 else -math.inf
            self._u = u
            self._cache = (bulk_sum, log_tail_mass, excess)
        return self._cache

    def tail_terms(self, u: float, sigma: float, xi: float) -> float:
        """Everything except the bulk density sum: tail mass, GPD excesses and priors."""
        if not (sigma > 0 and xi > -0.5):
            return -math.inf
        _, log_tail_mass, excess = self._threshold_terms(u)
        lp = threshold_logprior(u, self.priors) + jeffreys_logprior(sigma, xi)
        if excess.size == 0:
            return lp
        z = excess / sigma
        if abs(xi) < 1e-8:
            tail = -excess.size * math.log(sigma) - float(z.sum())
        else:
            arg = xi * z
            if xi < 0 and float(arg.min()) <= -1.0:
                return -math.inf
            tail = -excess.size * math.log(sigma) - (1.0 + 1.0 / xi) * float(np.log1p(arg).sum())
        return lp + excess.size * log_tail_mass + tail

    def __call__(self, u: float, sigma: float, xi: float) -> float:
        lp = self.tail_terms(u, sigma, xi)
        if lp == -math.inf:
            return lp
        return lp + self._threshold_terms(u)[0]


def joint_log_posterior(tail: TailParams, state: ClusterState, bm: BaseMeasureParams, priors: TailPriors, data) -> float:
    """Log posterior up to a constant; ``-inf`` when a tail point leaves the support."""
    return PosteriorEvaluator(data, state, bm, priors)(tail.u, tail.sigma, tail.xi)


# --- truncation bounds ----------------------------------------------------------


def xi_lower_bound(sigma: float, u: float, sample_max: float) -> float:
    if sample_max <= u:
        return -math.inf
    return -sigma / (sample_max - u)


def sigma_lower_bound(xi: float, u: float, sample_max: float) -> float:
    if xi >= 0 or sample_max <= u:
        return 0.0
    return -xi * (sample_max - u)


def u_lower_bound(xi: float, sigma: float, sample_min: float, sample_max: float) -> float:
    if xi >= 0:
        return sample_min
    return sample_max + sigma / xi


# --- Hastings corrections ---------------------------------------------------------


def truncnorm_log_hastings(current: float, proposed: float, lower: float, variance: float) -> float:
    """log q(current | proposed) - log q(proposed | current) for N(., variance) truncated below at ``lower``."""
    sd = math.sqrt(variance)
    return std_normal_logcdf((current - lower) / sd) - std_normal_logcdf((proposed - lower) / sd)


def _gamma_proposal_logpdf(x: float, centre: float, variance: float) -> float:
    shape = centre * centre / variance
    rate = centre / variance
    if not (shape > 0 and rate > 0 and x > 0):
        return -math.inf
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


def gamma_log_hastings(current: float, proposed: float, variance: float) -> float:
    """Same correction for the gamma proposal with mean at the current value and fixed variance."""
    return _gamma_proposal_logpdf(current, proposed, variance) - _gamma_proposal_logpdf(proposed, current, variance)


def _accept(log_ratio: float, rng) -> bool:
    return log_ratio >= 0 or math.log(rng.random()) < log_ratio


# --- MH moves ---------------------------------------------------------------------


def mh_update_xi(current: TailParams, tuning: ProposalTuning, log_post, current_lp: float, rng):
    """Returns ``(tail, accepted, log_post)``."""
    lower = xi_lower_bound(current.sigma, current.u, tuning.sample_max)
    prop = sample_truncated_normal(TruncatedNormalSpec(current.xi, tuning.v_xi, lower), rng)
    prop_lp = log_post(current.u, current.sigma, prop)
    if prop_lp == -math.inf:
        return current, False, current_lp
    log_ratio = prop_lp - current_lp + truncnorm_log_hastings(current.xi, prop, lower, tuning.v_xi)
    if _accept(log_ratio, rng):
        return TailParams(current.u, current.sigma, prop), True, prop_lp
    return current, False, current_lp


def mh_update_sigma(current: TailParams, tuning: ProposalTuning, log_post, current_lp: float, rng):
    """Gamma proposal when xi >= 0, truncated normal otherwise."""
    sig = current.sigma
    if current.xi >= 0:
        v = tuning.v_sigma
        prop = rng.gamma(sig * sig / v, v / sig)
        if not prop > 0:
            return current, False, current_lp
        hastings = gamma_log_hastings(sig, prop, v)
        if not math.isfinite(hastings):
            return current, False, current_lp
    else:
        lower = sigma_lower_bound(current.xi, current.u, tuning.sample_max)
        prop = sample_truncated_normal(TruncatedNormalSpec(sig, tuning.v_sigma, lower), rng)
        hastings = truncnorm_log_hastings(sig, prop, lower, tuning.v_sigma)
    prop_lp = log_post(current.u, prop, current.xi)
    if prop_lp == -math.inf:
        return current, False, current_lp
    if _accept(prop_lp - current_lp + hastings, rng):
        return TailParams(current.u, prop, current.xi), True, prop_lp
    return current, False, current_lp


def plugin_threshold_ratio(log_post, current: TailParams, current_lp: float):
    """Log-ratio function for :func:`mh_update_u` that scores ``u`` with the
    plug-in posterior at a fixed bulk state (no payload)."""

    def ratio(u_prop: float):
        return log_post(u_prop, current.sigma, current.xi) - current_lp, None

    return ratio


def mh_update_u(current: TailParams, tuning: ProposalTuning, log_ratio_fn, rng, sample_min: float):
    """Returns ``(tail, accepted, payload)``.

    ``log_ratio_fn(u_prop)`` returns the log target ratio of the proposal
    against the current state together with any payload the caller needs
    when the move is accepted (for example the relabelled bulk state).
    The truncated-normal Hastings correction is added here.
    """
    lower = u_lower_bound(current.xi, current.sigma, sample_min, tuning.sample_max)
    prop = sample_truncated_normal(TruncatedNormalSpec(current.u, tuning.v_u, lower), rng)
    log_ratio, payload = log_ratio_fn(prop)
    if log_ratio == -math.inf:
        return current, False, None
    log_ratio += truncnorm_log_hastings(current.u, prop, lower, tuning.v_u)
    if _accept(log_ratio, rng):
        return TailParams(prop, current.sigma, current.xi), True, payload
    return current, False, None


# --- pilot fit ----------------------------------------------------------------------


def _gpd_nll(params, excess):
    sigma, xi = params
    if sigma <= 0 or xi <= -0.5:
        return math.inf
    z = excess / sigma
    if abs(xi) < 1e-8:
        return excess.size * math.log(sigma) + float(z.sum())
    arg = xi * z
    if float(arg.min()) <= -1.0:
        return math.inf
    return excess.size * math.log(sigma) + (1.0 + 1.0 / xi) * float(np.log1p(arg).sum())


def _numerical_hessian(f, x, rel=1e-4):
    x = np.asarray(x, dtype=float)
    h = rel * np.maximum(np.abs(x), 1e-2)
    d = x.size
    hess = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = h[i]
            ej[j] = h[j]
            hess[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
    return hess


def pilot_fit(data, threshold: float):
    """Maximum-likelihood GPD fit to the excesses over ``threshold``.

    Returns ``(sigma, xi, v_sigma, v_xi)`` with the variances read off the
    inverse observed information, or ``None`` when the fit is unusable.
    """
    x = np.asarray(data, dtype=float)
    excess = x[x > threshold] - threshold
    if excess.size < 5:
        return None
    mean, var = float(excess.mean()), float(excess.var())
    xi0 = 0.5 * (1.0 - mean * mean / var) if var > 0 else 0.1
    xi0 = min(max(xi0, -0.4), 0.9)
    sigma0 = mean * (1.0 - xi0)
    best = None
    for start in ((sigma0, xi0), (mean, 0.1), (mean, -0.2)):
        res = optimize.minimize(_gpd_nll, start, args=(excess,), method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        return None
    sigma, xi = (float(v) for v in best.x)
    if not (sigma > 0 and xi > -0.45):
        return None
    try:
        cov = np.linalg.inv(_numerical_hessian(lambda p: _gpd_nll(p, excess), best.x))
    except np.linalg.LinAlgError:
        return None
    v_sigma, v_xi = float(cov[0, 0]), float(cov[1, 1])
    if not (np.isfinite(v_sigma) and np.isfinite(v_xi) and v_sigma > 0 and v_xi > 0):
        return None
    return sigma, xi, v_sigma, v_xi
