"""Densities, CDFs, quantiles and samplers used by the bulk and tail models.

Every density is exposed in log form first; linear forms are derived from it.
Gamma distributions use (shape, rate) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

# |xi| below this uses the exponential branch of the GPD
XI_SWITCH = 1e-8


@dataclass(frozen=True)
class GammaParams:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError(f"gamma shape and rate must be positive, got {self.shape}, {self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass(frozen=True)
class TailParams:
    """Threshold ``u``, scale ``sigma`` and shape ``xi`` of the generalized Pareto tail."""

    u: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.xi > -0.5:
            raise ValueError(f"xi must exceed -0.5, got {self.xi}")

    @property
    def upper_endpoint(self) -> float:
        if self.xi < 0:
            return self.u - self.sigma / self.xi
        return math.inf


@dataclass(frozen=True)
class TruncatedNormalSpec:
    """Normal(mean, variance) restricted to (lower, inf)."""

    mean: float
    variance: float
    lower: float = -math.inf

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")


def _positive(x, what="x"):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError(f"{what} must be strictly positive")
    return x


def _scalar_or_array(v):
    return float(v) if np.ndim(v) == 0 else v


def gamma_logpdf(x, p: GammaParams):
    x = _positive(x)
    out = p.shape * math.log(p.rate) - math.lgamma(p.shape) + (p.shape - 1.0) * np.log(x) - p.rate * x
    return _scalar_or_array(out)


def gamma_pdf(x, p: GammaParams):
    return _scalar_or_array(np.exp(gamma_logpdf(x, p)))


def gamma_cdf(x, p: GammaParams):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("gamma_cdf requires x >= 0")
    return _scalar_or_array(special.gammainc(p.shape, p.rate * x))


def gamma_quantile(q, p: GammaParams):
    return _scalar_or_array(special.gammaincinv(p.shape, np.asarray(q, dtype=float)) / p.rate)


def _gpd_excess(x, t: TailParams):
    z = (np.asarray(x, dtype=float) - t.u) / t.sigma
    bad = z < 0
    if t.xi < 0:
        bad |= z > -1.0 / t.xi
    if np.any(bad):
        raise ValueError("x outside the generalized Pareto support")
    return z


def gpd_logpdf(x, t: TailParams):
    """Log density of the GPD above ``t.u``.

    The lower endpoint ``x == u`` is accepted (density ``1/sigma``); points
    outside the support raise ``ValueError``.
    """
    z = _gpd_excess(x, t)
    if abs(t.xi) < XI_SWITCH:
        out = -math.log(t.sigma) - z
    else:
        with np.errstate(divide="ignore"):
            out = -math.log(t.sigma) - (1.0 + 1.0 / t.xi) * np.log1p(t.xi * z)
    return _scalar_or_array(out)


def gpd_cdf(x, t: TailParams):
    z = _gpd_excess(x, t)
    if abs(t.xi) < XI_SWITCH:
        out = -np.expm1(-z)
    else:
        with np.errstate(divide="ignore"):
            out = -np.expm1(-np.log1p(t.xi * z) / t.xi)
    return _scalar_or_array(out)


def gpd_quantile(p, t: TailParams):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p >= 1)):
        raise ValueError("gpd_quantile requires 0 <= p < 1")
    log_surv = np.log1p(-p)
    if abs(t.xi) < XI_SWITCH:
        out = t.u - t.sigma * log_surv
    else:
        out = t.u + t.sigma * np.expm1(-t.xi * log_surv) / t.xi
    return _scalar_or_array(out)


def std_normal_cdf(z):
    return _scalar_or_array(special.ndtr(z))


def std_normal_logcdf(z):
    return _scalar_or_array(special.log_ndtr(z))


def normal_logpdf(x, mean: float, variance: float):
    x = np.asarray(x, dtype=float)
    out = -0.5 * (math.log(2.0 * math.pi * variance) + (x - mean) ** 2 / variance)
    return _scalar_or_array(out)


def truncated_normal_logpdf(x: float, spec: TruncatedNormalSpec) -> float:
    if x <= spec.lower:
        return -math.inf
    sd = math.sqrt(spec.variance)
    return normal_logpdf(x, spec.mean, spec.variance) - special.log_ndtr((spec.mean - spec.lower) / sd)


def sample_truncated_normal(spec: TruncatedNormalSpec, rng: np.random.Generator) -> float:
    """Draw from N(mean, variance) conditioned on exceeding ``spec.lower``.

    Inverse CDF on the upper tail for moderate truncation; Robert's
    exponential rejection once the bound is more than 5 sd above the mean,
    where the tail mass is too small to invert accurately.
    """
    sd = math.sqrt(spec.variance)
    a = (spec.lower - spec.mean) / sd
    if a <= 5.0:
        # P(Z > a) = ndtr(-a) is accurate even for large negative a
        tail = special.ndtr(-a)
        z = -special.ndtri(rng.random() * tail)
        # guard against rounding when tail is ~1 and a is far below zero
        if z <= a:
            z = np.nextafter(a, math.inf)
    else:
        lam = 0.5 * (a + math.sqrt(a * a + 4.0))
        while True:
            z = a + rng.exponential(1.0 / lam)
            if rng.random() <= math.exp(-0.5 * (z - lam) ** 2):
                break
    return spec.mean + sd * float(z)


def sample_gamma(p: GammaParams, rng: np.random.Generator, size=None):
    return rng.gamma(p.shape, 1.0 / p.rate, size=size)


def sample_exponential(rate: float, rng: np.random.Generator, size=None):
    if not rate > 0:
        raise ValueError("exponential rate must be positive")
    return rng.exponential(1.0 / rate, size=size)
