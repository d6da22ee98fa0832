"""Dirichlet process mixture of gamma kernels for the bulk of the data.

The DP is handled through its Polya-urn (marginal) representation. Kernel
parameters are ``theta = (shape, rate)`` with base measure
``G0 = Exp(a_lambda) x Exp(a_gamma)`` and gamma hyperpriors on both rates.

Cluster bookkeeping lives in :class:`ClusterState`, which indexes *all*
observations; entries of ``memberships`` equal to ``-1`` mark points that
currently sit above the threshold and therefore belong to no cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from dpgpd.distributions import GammaParams

TAIL = -1


@dataclass(frozen=True)
class BaseMeasureParams:
    a_lambda: float = 1.0
    a_gamma: float = 1.0
    b_lambda: float = 0.001
    c_lambda: float = 0.001
    b_gamma: float = 0.001
    c_gamma: float = 0.001
    alpha: float = 0.1

    def __post_init__(self):
        for name in ("a_lambda", "a_gamma", "b_lambda", "c_lambda", "b_gamma", "c_gamma", "alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class ClusterState:
    """Polya-urn configuration over the bulk observations.

    ``shapes``, ``rates`` and ``counts`` are parallel per-cluster lists; plain
    lists keep the per-observation Gibbs loop cheap.
    """

    memberships: np.ndarray
    shapes: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    counts: list = field(default_factory=list)

    @property
    def n_star(self) -> int:
        return len(self.counts)

    @property
    def n_bulk(self) -> int:
        return int(sum(self.counts))

    @property
    def uniques(self) -> list[GammaParams]:
        return [GammaParams(a, b) for a, b in zip(self.shapes, self.rates)]

    def copy(self) -> ClusterState:
        return ClusterState(self.memberships.copy(), list(self.shapes), list(self.rates), list(self.counts))

    def validate(self) -> None:
        mem = self.memberships
        k = self.n_star
        if not (len(self.shapes) == len(self.rates) == k):
            raise ValueError("cluster parameter lists out of sync")
        if np.any((mem < TAIL) | (mem >= k)):
            raise ValueError("membership references a dead cluster")
        occupied = np.bincount(mem[mem >= 0], minlength=k)
        if not np.array_equal(occupied, np.asarray(self.counts, dtype=int).reshape(-1)):
            raise ValueError("cluster counts disagree with memberships")
        if any(c < 1 for c in self.counts):
            raise ValueError("empty cluster left alive")
        if any(not (a > 0 and b > 0) for a, b in zip(self.shapes, self.rates)):
            raise ValueError("non-positive kernel parameter")

    @classmethod
    def single_cluster(cls, data, bulk_mask) -> ClusterState:
        """All bulk points in one cluster, kernel set by the method of moments."""
        return cls.from_blocks(data, bulk_mask, 1)

    @classmethod
    def from_blocks(cls, data, bulk_mask, n_blocks: int) -> ClusterState:
        """Split the sorted bulk into ``n_blocks`` contiguous runs, one cluster each.

        Kernels are moment-matched to their block; blocks never drop below two
        points, so fewer clusters may come back than were asked for.
        """
        data = np.asarray(data, dtype=float)
        bulk_mask = np.asarray(bulk_mask, dtype=bool)
        mem = np.full(data.shape[0], TAIL, dtype=np.int64)
        idx = np.flatnonzero(bulk_mask)
        if idx.size == 0:
            return cls(mem)
        n_blocks = max(1, min(n_blocks, idx.size // 2))
        order = idx[np.argsort(data[idx], kind="stable")]
        state = cls(mem)
        for j, block in enumerate(np.array_split(order, n_blocks)):
            xb = data[block]
            mean = float(xb.mean())
            var = max(float(xb.var()) if xb.size > 1 else 0.0, 1e-4 * mean * mean)
            mem[block] = j
            state.shapes.append(mean * mean / var)
            state.rates.append(mean / var)
            state.counts.append(int(block.size))
        return state


# --- base measure -----------------------------------------------------------


def _rate_for_shape(x, bm: BaseMeasureParams):
    # a_lambda - log(x / (x + a_gamma)) > a_lambda since the log term is negative
    return bm.a_lambda + np.log1p(bm.a_gamma / x)


def log_marginal_likelihood(x, bm: BaseMeasureParams):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("x must be strictly positive")
    r = _rate_for_shape(x, bm)
    out = math.log(bm.a_lambda) + math.log(bm.a_gamma) - np.log(x) - np.log(x + bm.a_gamma) - 2.0 * np.log(r)
    return float(out) if out.ndim == 0 else out


def marginal_likelihood(x, bm: BaseMeasureParams):
    """Prior predictive density of one observation, integrating the kernel over G0."""
    out = np.exp(log_marginal_likelihood(x, bm))
    return float(out) if np.ndim(out) == 0 else out


def base_predictive_cdf(x, bm: BaseMeasureParams):
    """CDF of :func:`marginal_likelihood`.

    Substituting ``s = log(1 + a_gamma / x)`` turns the density into
    ``a_lambda / (a_lambda + s)^2 ds`` so the integral is elementary.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        s = np.log1p(bm.a_gamma / np.where(x > 0, x, 0.0))
    out = np.where(x > 0, bm.a_lambda / (bm.a_lambda + s), 0.0)
    return float(out) if out.ndim == 0 else out


def base_logpdf(theta: GammaParams, bm: BaseMeasureParams) -> float:
    return (
        math.log(bm.a_lambda) - bm.a_lambda * theta.shape + math.log(bm.a_gamma) - bm.a_gamma * theta.rate
    )


def kernel_logpdf(x: float, theta: GammaParams) -> float:
    a, b = theta.shape, theta.rate
    return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(x) - b * x


def new_component_logpdf(theta: GammaParams, x: float, bm: BaseMeasureParams) -> float:
    """Log density of the exact posterior G0(theta | x) drawn by :func:`sample_new_component`."""
    r = float(_rate_for_shape(x, bm))
    lam, gam = theta.shape, theta.rate
    s = x + bm.a_gamma
    log_shape = 2.0 * math.log(r) + math.log(lam) - r * lam
    log_rate = (lam + 1.0) * math.log(s) - math.lgamma(lam + 1.0) + lam * math.log(gam) - s * gam
    return log_shape + log_rate


def _draw_new(x: float, a_lambda: float, a_gamma: float, rng: np.random.Generator):
    r = a_lambda + math.log1p(a_gamma / x)
    lam = rng.gamma(2.0, 1.0 / r)
    gam = rng.gamma(lam + 1.0, 1.0 / (x + a_gamma))
    # guard against underflow to exactly zero for extreme draws
    return max(lam, 1e-300), max(gam, 1e-300)


def sample_new_component(x: float, bm: BaseMeasureParams, rng: np.random.Generator) -> GammaParams:
    if not x > 0:
        raise ValueError("x must be strictly positive")
    lam, gam = _draw_new(float(x), bm.a_lambda, bm.a_gamma, rng)
    return GammaParams(lam, gam)


# --- Polya urn moves ---------------------------------------------------------


def urn_weights(counts, alpha: float) -> np.ndarray:
    """Prior urn probabilities of joining each cluster, last entry opens a new one."""
    w = np.append(np.asarray(counts, dtype=float), alpha)
    return w / w.sum()


@dataclass(frozen=True)
class TailCoupling:
    """The factor ``(1 - H(threshold))**n_tail`` that ties the bulk to the tail.

    Passing one to the bulk moves turns their Gibbs draws into proposals that
    are accepted with the ratio of this factor, so the chain stays invariant
    for the joint bulk-plus-tail posterior. With ``n_tail == 0`` the moves are
    plain Gibbs.
    """

    threshold: float
    n_tail: int

    @property
    def active(self) -> bool:
        return self.n_tail > 0 and self.threshold > 0


class _Moves:
    """Per-cluster caches for a run of bulk updates under fixed ``bm``."""

    def __init__(self, state: ClusterState, bm: BaseMeasureParams, rng, coupling: TailCoupling | None = None):
        self.state = state
        self.bm = bm
        self.rng = rng
        self.log_alpha = math.log(bm.alpha)
        self.consts = [a * math.log(b) - math.lgamma(a) for a, b in zip(state.shapes, state.rates)]
        self.coupled = coupling is not None and coupling.active
        if self.coupled:
            self.u = coupling.threshold
            self.n_tail = coupling.n_tail
            self.m0u = float(base_predictive_cdf(self.u, bm))
            self.cdf_u = [float(special.gammainc(a, b * self.u)) for a, b in zip(state.shapes, state.rates)]

    # tail factor -----------------------------------------------------------

    def cluster_cdf(self, shape: float, rate: float) -> float:
        return float(special.gammainc(shape, rate * self.u))

    def bulk_cdf_sum(self) -> float:
        return sum(c * p for c, p in zip(self.state.counts, self.cdf_u))

    def log_tail(self, cdf_sum: float, n: int, m0u: float | None = None) -> float:
        alpha = self.bm.alpha
        h = (cdf_sum + alpha * (self.m0u if m0u is None else m0u)) / (alpha + n)
        return self.n_tail * math.log1p(-h) if h < 1.0 else -math.inf

    # bookkeeping -----------------------------------------------------------

    def remove(self, i: int) -> None:
        st = self.state
        j = int(st.memberships[i])
        if j == TAIL:
            return
        st.memberships[i] = TAIL
        st.counts[j] -= 1
        if st.counts[j] > 0:
            return
        last = len(st.counts) - 1
        if j != last:
            st.shapes[j] = st.shapes[last]
            st.rates[j] = st.rates[last]
            st.counts[j] = st.counts[last]
            self.consts[j] = self.consts[last]
            if self.coupled:
                self.cdf_u[j] = self.cdf_u[last]
            st.memberships[st.memberships == last] = j
        st.shapes.pop()
        st.rates.pop()
        st.counts.pop()
        self.consts.pop()
        if self.coupled:
            self.cdf_u.pop()

    def append(self, i: int, lam: float, gam: float) -> None:
        st = self.state
        st.shapes.append(lam)
        st.rates.append(gam)
        st.counts.append(1)
        self.consts.append(lam * math.log(gam) - math.lgamma(lam))
        if self.coupled:
            self.cdf_u.append(self.cluster_cdf(lam, gam))
        st.memberships[i] = len(st.counts) - 1

    def set_params(self, j: int, lam: float, gam: float) -> None:
        self.state.shapes[j] = lam
        self.state.rates[j] = gam
        self.consts[j] = lam * math.log(gam) - math.lgamma(lam)
        if self.coupled:
            self.cdf_u[j] = self.cluster_cdf(lam, gam)

    # label moves -------------------------------------------------------------

    def choose(self, x: float, logx: float, log_new: float, u01: float, skip: int = TAIL):
        """Draw a label from the urn conditional; returns ``(label, log normaliser)``.

        ``skip`` names the cluster holding the point itself, whose count is
        reduced by one. Label ``n_star`` means "open a new cluster".
        """
        st = self.state
        shapes, rates, counts, consts = st.shapes, st.rates, st.counts, self.consts
        logw = []
        for j in range(len(counts)):
            c = counts[j] - (j == skip)
            logw.append(math.log(c) + consts[j] + (shapes[j] - 1.0) * logx - rates[j] * x if c > 0 else -math.inf)
        logw.append(self.log_alpha + log_new)
        top = max(logw)
        w = [math.exp(v - top) for v in logw]
        total = sum(w)
        target = u01 * total
        choice = len(w) - 1
        acc = 0.0
        for j, wj in enumerate(w):
            acc += wj
            if target < acc:
                choice = j
                break
        return choice, top + math.log(total)

    def place(self, i: int, x: float, log_new: float, u01: float) -> float:
        """Label an unlabelled point by a Gibbs draw; returns the log predictive density of ``x``."""
        st = self.state
        n = sum(st.counts)
        j, log_norm = self.choose(x, math.log(x), log_new, u01)
        if j == len(st.counts):
            lam, gam = _draw_new(x, self.bm.a_lambda, self.bm.a_gamma, self.rng)
            self.append(i, lam, gam)
        else:
            st.counts[j] += 1
            st.memberships[i] = j
        return log_norm - math.log(self.bm.alpha + n)

    def update(self, i: int, x: float, log_new: float, u_choice: float, u_accept: float) -> None:
        st = self.state
        c = int(st.memberships[i])
        k = len(st.counts)
        j, _ = self.choose(x, math.log(x), log_new, u_choice, skip=c)
        if j == c:
            return
        if j == k:
            lam, gam = _draw_new(x, self.bm.a_lambda, self.bm.a_gamma, self.rng)
        if self.coupled:
            n = sum(st.counts)
            old = self.bulk_cdf_sum()
            new = old - self.cdf_u[c] + (self.cdf_u[j] if j < k else self.cluster_cdf(lam, gam))
            log_ratio = self.log_tail(new, n) - self.log_tail(old, n)
            if log_ratio < 0 and u_accept >= math.exp(log_ratio):
                return
        self.remove(i)
        if j < k:
            if len(st.counts) < k and j == k - 1:
                # the emptied cluster c was refilled from the last slot
                j = c
            st.counts[j] += 1
            st.memberships[i] = j
        else:
            self.append(i, lam, gam)


def membership_log_weights(x: float, state: ClusterState, bm: BaseMeasureParams, exclude: int | None = None):
    """Unnormalised log weights for placing ``x``: existing clusters, then a new one.

    ``exclude`` removes one observation's contribution from its own cluster
    count (the ``n_j^-`` counts) without mutating the state.
    """
    counts = list(state.counts)
    if exclude is not None and state.memberships[exclude] != TAIL:
        counts[int(state.memberships[exclude])] -= 1
    out = []
    for a, b, c in zip(state.shapes, state.rates, counts):
        out.append(math.log(c) + kernel_logpdf(x, GammaParams(a, b)) if c > 0 else -math.inf)
    out.append(math.log(bm.alpha) + float(log_marginal_likelihood(x, bm)))
    return np.array(out)


def resample_membership(
    i: int, state: ClusterState, bm: BaseMeasureParams, data, rng, coupling: TailCoupling | None = None
) -> ClusterState:
    """Update one observation's cluster label in place.

    An unlabelled observation (one just brought into the bulk) is simply
    placed by a Gibbs draw.
    """
    x = float(data[i])
    moves = _Moves(state, bm, rng, coupling)
    log_new = float(log_marginal_likelihood(x, bm))
    if state.memberships[i] == TAIL:
        moves.place(i, x, log_new, rng.random())
    else:
        moves.update(i, x, log_new, rng.random(), rng.random())
    return state


def sweep_memberships(
    state: ClusterState, bm: BaseMeasureParams, data, rng, coupling: TailCoupling | None = None
) -> ClusterState:
    """Resample every bulk label once, in index order."""
    idx = np.flatnonzero(state.memberships != TAIL)
    if idx.size == 0:
        return state
    xs = np.asarray(data, dtype=float)[idx]
    log_new = log_marginal_likelihood(xs, bm)
    u_choice = rng.random(idx.size)
    u_accept = rng.random(idx.size)
    moves = _Moves(state, bm, rng, coupling)
    for k, i in enumerate(idx.tolist()):
        moves.update(i, float(xs[k]), float(log_new[k]), float(u_choice[k]), float(u_accept[k]))
    return state


def _reinsertion_log_density(state: ClusterState, bm: BaseMeasureParams, data, leaving) -> float:
    """Sum of sequential urn-predictive log densities for re-adding ``leaving`` to the
    state from which they were removed, in index order, each to its current cluster."""
    mem = state.memberships
    counts = np.asarray(state.counts, dtype=float) - np.bincount(mem[leaving], minlength=state.n_star)
    shapes = np.asarray(state.shapes, dtype=float)
    rates = np.asarray(state.rates, dtype=float)
    consts = shapes * np.log(rates) - special.gammaln(shapes)
    n = counts.sum()
    total = 0.0
    for i in leaving:
        x = float(data[i])
        live = counts > 0
        terms = np.log(counts[live]) + consts[live] + (shapes[live] - 1.0) * math.log(x) - rates[live] * x
        terms = np.append(terms, math.log(bm.alpha) + float(log_marginal_likelihood(x, bm)))
        total += float(special.logsumexp(terms)) - math.log(bm.alpha + n)
        counts[mem[i]] += 1
        n += 1
    return total


def threshold_move(state: ClusterState, bm: BaseMeasureParams, data, threshold: float, rng) -> float:
    """Bring labels in line with the bulk set ``{x <= threshold}``, in place.

    Points that left the bulk lose their label; points that entered it are
    placed one at a time by Gibbs draws. Returns the log of the bulk part of
    the Metropolis-Hastings ratio for the move: the sequential predictive
    densities of entering points, minus those of leaving points.
    """
    data = np.asarray(data, dtype=float)
    in_bulk = data <= threshold
    labelled = state.memberships != TAIL
    leaving = np.flatnonzero(labelled & ~in_bulk)
    entering = np.flatnonzero(in_bulk & ~labelled)
    log_ratio = 0.0
    moves = _Moves(state, bm, rng)
    if leaving.size:
        log_ratio -= _reinsertion_log_density(state, bm, data, leaving)
        for i in leaving.tolist():
            moves.remove(i)
    if entering.size:
        log_new = log_marginal_likelihood(data[entering], bm)
        uniforms = rng.random(entering.size)
        for k, i in enumerate(entering.tolist()):
            log_ratio += moves.place(i, float(data[i]), float(log_new[k]), float(uniforms[k]))
    return log_ratio


def repartition(state: ClusterState, bm: BaseMeasureParams, data, threshold: float, rng) -> ClusterState:
    threshold_move(state, bm, data, threshold, rng)
    return state


def cluster_sufficient_stats(state: ClusterState, data):
    """Per-cluster (count, sum x, sum log x)."""
    data = np.asarray(data, dtype=float)
    mem = state.memberships
    live = mem != TAIL
    k = state.n_star
    n = np.bincount(mem[live], minlength=k)
    s = np.bincount(mem[live], weights=data[live], minlength=k)
    ls = np.bincount(mem[live], weights=np.log(data[live]), minlength=k)
    return n, s, ls


def _kernel_log_target(lam, gam, n, s, ls, bm):
    """Log full conditional of one cluster's (shape, rate), up to a constant."""
    return -bm.a_lambda * lam - bm.a_gamma * gam + n * (lam * math.log(gam) - math.lgamma(lam)) + (lam - 1.0) * ls - gam * s


def refresh_cluster_params(
    state: ClusterState, bm: BaseMeasureParams, data, rng, coupling: TailCoupling | None = None
) -> ClusterState:
    """Update every live kernel given its members, leaving labels untouched.

    Per cluster: a draw of the rate from its gamma full conditional, a
    log-scale random-walk Metropolis step on the shape, and a joint rescaling
    of (shape, rate) that preserves the kernel mean.
    """
    if state.n_star == 0:
        return state
    moves = _Moves(state, bm, rng, coupling)
    n_bulk = state.n_bulk
    ns, ss, lss = cluster_sufficient_stats(state, data)

    def tail_delta(j, lam, gam):
        if not moves.coupled:
            return 0.0
        old = moves.bulk_cdf_sum()
        new = old + state.counts[j] * (moves.cluster_cdf(lam, gam) - moves.cdf_u[j])
        return moves.log_tail(new, n_bulk) - moves.log_tail(old, n_bulk)

    for j in range(state.n_star):
        n, s, ls = int(ns[j]), float(ss[j]), float(lss[j])
        lam, gam = state.shapes[j], state.rates[j]

        prop = max(rng.gamma(1.0 + n * lam, 1.0 / (bm.a_gamma + s)), 1e-300)
        if not moves.coupled or math.log(rng.random()) < tail_delta(j, lam, prop):
            gam = prop
            moves.set_params(j, lam, gam)

        cur = _kernel_log_target(lam, gam, n, s, ls, bm)
        prop = lam * math.exp(0.7 / math.sqrt(n) * rng.standard_normal())
        new = _kernel_log_target(prop, gam, n, s, ls, bm)
        if math.log(rng.random()) < new - cur + math.log(prop / lam) + tail_delta(j, prop, gam):
            lam, cur = prop, new
            moves.set_params(j, lam, gam)

        z = 1.5 / math.sqrt(n) * rng.standard_normal()
        lam_p, gam_p = lam * math.exp(z), gam * math.exp(z)
        new = _kernel_log_target(lam_p, gam_p, n, s, ls, bm)
        if math.log(rng.random()) < new - cur + 2.0 * z + tail_delta(j, lam_p, gam_p):
            moves.set_params(j, lam_p, gam_p)
    return state


def update_base_measure(
    state: ClusterState, bm: BaseMeasureParams, rng, coupling: TailCoupling | None = None
) -> BaseMeasureParams:
    """Conjugate gamma draws for the two exponential rates of G0; alpha is fixed."""
    k = state.n_star
    a_l = rng.gamma(bm.b_lambda + k, 1.0 / (bm.c_lambda + float(sum(state.shapes))))
    a_g = rng.gamma(bm.b_gamma + k, 1.0 / (bm.c_gamma + float(sum(state.rates))))
    prop = BaseMeasureParams(
        a_lambda=max(a_l, 1e-300),
        a_gamma=max(a_g, 1e-300),
        b_lambda=bm.b_lambda,
        c_lambda=bm.c_lambda,
        b_gamma=bm.b_gamma,
        c_gamma=bm.c_gamma,
        alpha=bm.alpha,
    )
    if coupling is not None and coupling.active:
        moves = _Moves(state, bm, rng, coupling)
        total = moves.bulk_cdf_sum()
        n = state.n_bulk
        log_ratio = moves.log_tail(total, n, float(base_predictive_cdf(coupling.threshold, prop))) - moves.log_tail(total, n)
        if math.log(rng.random()) >= log_ratio:
            return bm
    return prop


# --- mixture density ------------------------------------------------------------


def _mixture_weights(clusters, alpha: float):
    counts = np.asarray(clusters.counts, dtype=float)
    total = alpha + counts.sum()
    return counts / total, alpha / total


def mixture_logpdf(x, clusters, bm: BaseMeasureParams):
    """Urn-predictive bulk log density.

    ``clusters`` is anything with ``shapes``, ``rates`` and ``counts``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("x must be strictly positive")
    w, w_new = _mixture_weights(clusters, bm.alpha)
    xs = np.atleast_1d(x)
    terms = [math.log(w_new) + log_marginal_likelihood(xs, bm)]
    if w.size:
        a = np.asarray(clusters.shapes, dtype=float)[:, None]
        b = np.asarray(clusters.rates, dtype=float)[:, None]
        logk = a * np.log(b) - special.gammaln(a) + (a - 1.0) * np.log(xs) - b * xs
        terms.extend(np.log(w)[:, None] + logk)
    out = special.logsumexp(np.vstack(terms), axis=0)
    return float(out[0]) if x.ndim == 0 else out


def mixture_pdf(x, clusters, bm: BaseMeasureParams):
    out = np.exp(mixture_logpdf(x, clusters, bm))
    return float(out) if np.ndim(out) == 0 else out


def mixture_cdf(x, clusters, bm: BaseMeasureParams):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    w, w_new = _mixture_weights(clusters, bm.alpha)
    xs = np.atleast_1d(x)
    out = w_new * base_predictive_cdf(xs, bm)
    if w.size:
        a = np.asarray(clusters.shapes, dtype=float)[:, None]
        b = np.asarray(clusters.rates, dtype=float)[:, None]
        out = out + (w[:, None] * special.gammainc(a, b * xs)).sum(axis=0)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if x.ndim == 0 else out


def expected_cluster_count(alpha: float, n: int) -> float:
    i = np.arange(1, n + 1)
    return float(np.sum(alpha / (alpha + i - 1)))


def simulate_urn_cluster_count(alpha: float, n: int, rng: np.random.Generator) -> int:
    """Seat ``n`` customers by the Polya urn and return the number of tables."""
    counts: list[int] = []
    for _ in range(n):
        p = urn_weights(counts, alpha)
        j = int(rng.choice(p.size, p=p))
        if j == len(counts):
            counts.append(1)
        else:
            counts[j] += 1
    return len(counts)
