"""Fully Bayesian GPCM estimation with Hamiltonian Monte Carlo.

Model
-----
    theta_i ~ N(0, 1)
    log a_j ~ N(0, 1)                (lognormal(0, 1) on a_j)
    b_jk    ~ N(mu_b, sigma_b)       one (mu_b, sigma_b) shared by every step
    mu_b    ~ N(0, 5)
    sigma_b ~ half-Cauchy(0, 5)

The sampler works on the unconstrained vector
``(log a_1..J, steps (item-major), theta_1..N, mu_b, log sigma_b)`` with an
identity mass matrix, a leapfrog count drawn uniformly per iteration, and
dual-averaging step-size adaptation during warmup. Convergence is checked
with the (non-split) Gelman-Rubin PSRF on the reported parameters; a fit with
any PSRF at or above the cutoff is rerun from a new seed derived from
``(seed, retry)``.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DiagnosticError, InvalidInputError, NonConvergenceError
from .model import ItemBank, ItemParams, ResponseMatrix

log = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    theta_mean: float = 0.0
    theta_sd: float = 1.0
    log_a_mean: float = 0.0
    log_a_sd: float = 1.0
    mu_mean: float = 0.0
    mu_sd: float = 5.0
    sigma_scale: float = 5.0

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_mean, self.theta_sd, self.log_a_mean, self.log_a_sd,
                         self.mu_mean, self.mu_sd, self.sigma_scale])


@dataclass(frozen=True)
class HmcConfig:
    n_chains: int = 3
    iters_per_chain: int = 600
    warmup: int = 300
    target_accept: float = 0.8
    leapfrog_range: tuple[int, int] = (10, 30)
    seed: int = 0
    psrf_cutoff: float = 1.05
    max_retries: int = 5
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_chains < 2:
            raise InvalidInputError("PSRF needs at least 2 chains")
        if not 0 <= self.warmup < self.iters_per_chain:
            raise InvalidInputError("warmup must be smaller than iters_per_chain")
        if not 0 < self.target_accept < 1:
            raise InvalidInputError("target_accept must lie in (0, 1)")
        lo, hi = self.leapfrog_range
        if not 1 <= lo <= hi:
            raise InvalidInputError("leapfrog_range must satisfy 1 <= lo <= hi")

    @property
    def n_retained(self) -> int:
        return self.iters_per_chain - self.warmup


class Layout:
    """Index bookkeeping for the unconstrained state vector."""

    def __init__(self, n_persons: int, n_categories):
        self.n_persons = int(n_persons)
        self.n_categories = np.asarray(n_categories, dtype=np.int64).reshape(-1)
        self.n_items = self.n_categories.size
        self.offsets = np.concatenate([[0], np.cumsum(self.n_categories - 1)]).astype(np.int64)
        self.n_steps = int(self.offsets[-1])
        J, S, N = self.n_items, self.n_steps, self.n_persons
        self.log_a = slice(0, J)
        self.steps = slice(J, J + S)
        self.theta = slice(J + S, J + S + N)
        self.mu = J + S + N
        self.log_sigma = J + S + N + 1
        self.size = J + S + N + 2

    def names(self) -> list[str]:
        out = [f"a[{j + 1}]" for j in range(self.n_items)]
        for j, m in enumerate(self.n_categories):
            out += [f"b[{j + 1},{k}]" for k in range(2, m + 1)]
        out += [f"theta[{i + 1}]" for i in range(self.n_persons)]
        return out + ["mu_b", "sigma_b"]

    def constrain(self, x: np.ndarray) -> np.ndarray:
        """Map unconstrained states (last axis) to reported parameters."""
        y = np.array(x, dtype=float, copy=True)
        y[..., self.log_a] = np.exp(y[..., self.log_a])
        y[..., self.log_sigma] = np.exp(y[..., self.log_sigma])
        return y

    def bank(self, y: np.ndarray) -> ItemBank:
        """Item bank from a constrained vector."""
        steps = y[self.steps]
        return ItemBank([
            ItemParams(y[j], steps[self.offsets[j]:self.offsets[j + 1]])
            for j in range(self.n_items)
        ])


@numba.njit(cache=True, nogil=True)
def _logpost_grad(x, ut, ncat, offsets, n_persons, prior, grad):
    """Log posterior and its gradient; ``ut`` is the (items, persons) response array."""
    n_items = ncat.shape[0]
    n_steps = offsets[n_items]
    th0 = n_items + n_steps
    mu_i = th0 + n_persons
    for v in range(x.shape[0]):
        grad[v] = 0.0
    for v in range(x.shape[0]):
        if not np.isfinite(x[v]):
            return -np.inf
    max_m = 1
    for j in range(n_items):
        if ncat[j] > max_m:
            max_m = ncat[j]
    s = np.empty(max_m)
    p = np.empty(max_m)
    c = np.empty(max_m)
    ad = np.empty(max_m)
    acc = np.empty(max_m)
    lp = 0.0
    for j in range(n_items):
        a = math.exp(x[j])
        m = ncat[j]
        o = n_items + offsets[j]
        # s_k = a (k theta - D_k) with D_k the cumulative step sum; then
        # exp(s_k) = exp(a theta)^k * exp(-a D_k) needs one exp per person
        ad[0] = 0.0
        c[0] = 1.0
        fast = True
        for k in range(1, m):
            ad[k] = ad[k - 1] + a * x[o + k - 1]
            c[k] = math.exp(-a * x[o + k - 1])
            if not (c[k] > 1e-100 and c[k] < 1e100):
                fast = False
            acc[k] = 0.0
        g_la = 0.0
        for i in range(n_persons):
            at = a * x[th0 + i]
            ok = False
            if fast and -100.0 < at < 100.0:
                e = math.exp(at)
                p[0] = 1.0
                tot = 1.0
                for k in range(1, m):
                    p[k] = p[k - 1] * e * c[k]
                    tot += p[k]
                if tot < 1e300 and p[m - 1] > 1e-300:
                    lse = math.log(tot)
                    ok = True
            for k in range(m):
                s[k] = k * at - ad[k]
            if not ok:
                mx = 0.0
                for k in range(1, m):
                    if s[k] > mx:
                        mx = s[k]
                tot = 0.0
                for k in range(m):
                    p[k] = math.exp(s[k] - mx)
                    tot += p[k]
                lse = mx + math.log(tot)
            u = ut[j, i]
            lp += s[u] - lse
            inv = 1.0 / tot
            ek = 0.0
            es = 0.0
            tail = 0.0
            for h in range(m - 1, 0, -1):
                q = p[h] * inv
                ek += h * q
                es += q * s[h]
                tail += q
                acc[h] += tail
            grad[th0 + i] += a * (u - ek)
            g_la += s[u] - es
            for h in range(1, u + 1):
                acc[h] -= 1.0
        grad[j] = g_la
        for h in range(1, m):
            grad[o + h - 1] = a * acc[h]
    th_mean, th_sd, la_mean, la_sd, mu_mean, mu_sd, sig_scale = (
        prior[0], prior[1], prior[2], prior[3], prior[4], prior[5], prior[6])
    half_log_2pi = 0.9189385332046727
    for i in range(n_persons):
        z = (x[th0 + i] - th_mean) / th_sd
        lp += -0.5 * z * z - math.log(th_sd) - half_log_2pi
        grad[th0 + i] -= z / th_sd
    for j in range(n_items):
        z = (x[j] - la_mean) / la_sd
        lp += -0.5 * z * z - math.log(la_sd) - half_log_2pi
        grad[j] -= z / la_sd
    mu = x[mu_i]
    log_sig = x[mu_i + 1]
    sig = math.exp(log_sig)
    g_mu = 0.0
    g_ls = 0.0
    for v in range(n_steps):
        z = (x[n_items + v] - mu) / sig
        lp += -0.5 * z * z - log_sig - half_log_2pi
        grad[n_items + v] -= z / sig
        g_mu += z / sig
        g_ls += z * z - 1.0
    z = (mu - mu_mean) / mu_sd
    lp += -0.5 * z * z - math.log(mu_sd) - half_log_2pi
    g_mu -= z / mu_sd
    r = sig / sig_scale
    # half-Cauchy density plus the log-Jacobian of sigma = exp(log_sig)
    lp += math.log(2.0 / (math.pi * sig_scale)) - math.log1p(r * r) + log_sig
    g_ls += 1.0 - 2.0 * r * r / (1.0 + r * r)
    grad[mu_i] = g_mu
    grad[mu_i + 1] = g_ls
    if not np.isfinite(lp):
        for v in range(x.shape[0]):
            grad[v] = 0.0
        return -np.inf
    return lp


class Posterior:
    """Log posterior of the GPCM under :class:`PriorSpec` for one dataset."""

    def __init__(self, data: ResponseMatrix, prior: PriorSpec | None = None):
        self.data = data
        self.prior = prior or PriorSpec()
        self.layout = Layout(data.n_persons, data.n_categories)
        self._ut = np.ascontiguousarray(data.responses.T, dtype=np.int64)
        self._prior = self.prior.as_array()

    def logp_grad(self, x: np.ndarray):
        grad = np.empty(self.layout.size)
        lp = _logpost_grad(np.asarray(x, dtype=float), self._ut, self.layout.n_categories,
                           self.layout.offsets, self.layout.n_persons, self._prior, grad)
        return lp, grad


def log_posterior(state, data: ResponseMatrix, prior: PriorSpec | None = None) -> float:
    return Posterior(data, prior).logp_grad(state)[0]


def grad_log_posterior(state, data: ResponseMatrix, prior: PriorSpec | None = None) -> np.ndarray:
    return Posterior(data, prior).logp_grad(state)[1]


# -- sampler ---------------------------------------------------------------------

@dataclass
class ChainResult:
    draws: np.ndarray  # (n_retained, P), unconstrained
    accept_prob: np.ndarray  # per retained iteration
    step_size: float
    n_divergent: int


def _leapfrog(logp_grad, x, r, grad, eps, n_steps):
    r = r + 0.5 * eps * grad
    for step in range(n_steps):
        x = x + eps * r
        lp, grad = logp_grad(x)
        if not np.isfinite(lp):
            return x, r, lp, grad
        if step < n_steps - 1:
            r = r + eps * grad
    r = r + 0.5 * eps * grad
    return x, r, lp, grad


def _initial_step_size(logp_grad, x, lp, grad, rng):
    eps = 0.1
    r = rng.standard_normal(x.size)
    h0 = lp - 0.5 * r @ r

    def log_ratio(e):
        _, r1, lp1, _ = _leapfrog(logp_grad, x, r, grad, e, 1)
        return (lp1 - 0.5 * r1 @ r1) - h0 if np.isfinite(lp1) else -np.inf

    direction = 1 if log_ratio(eps) > math.log(0.5) else -1
    for _ in range(50):
        new = eps * (2.0 ** direction)
        if (log_ratio(new) > math.log(0.5)) != (direction == 1):
            break
        eps = new
    return eps


def hmc_chain(logp_grad, x0, n_iter: int, n_warmup: int, rng: np.random.Generator,
              target_accept: float = 0.8, leapfrog_range=(10, 30)) -> ChainResult:
    """One HMC chain with jittered path length and dual-averaging step size."""
    x = np.array(x0, dtype=float)
    lp, grad = logp_grad(x)
    if not np.isfinite(lp):
        raise InvalidInputError("initial state has zero posterior density")
    eps = _initial_step_size(logp_grad, x, lp, grad, rng)
    # dual averaging constants
    gamma, t0, kappa = 0.05, 10.0, 0.75
    mu_da = math.log(10 * eps)
    h_bar = 0.0
    log_eps_bar = 0.0
    lo, hi = leapfrog_range
    draws = np.empty((n_iter - n_warmup, x.size))
    accept = np.empty(n_iter - n_warmup)
    n_div = 0
    for it in range(n_iter):
        n_leap = int(rng.integers(lo, hi + 1))
        r0 = rng.standard_normal(x.size)
        h0 = lp - 0.5 * r0 @ r0
        x1, r1, lp1, g1 = _leapfrog(logp_grad, x, r0, grad, eps, n_leap)
        with np.errstate(over="ignore"):  # diverged trajectory: h1 = -inf, rejected below
            h1 = lp1 - 0.5 * r1 @ r1 if np.isfinite(lp1) else -np.inf
        log_alpha = h1 - h0 if np.isfinite(h1) else -np.inf
        alpha = 1.0 if log_alpha >= 0 else math.exp(log_alpha)
        if log_alpha < -1000 and it >= n_warmup:
            n_div += 1
        if math.log(rng.random()) < log_alpha:
            x, lp, grad = x1, lp1, g1
        if it < n_warmup:
            m = it + 1
            h_bar = (1 - 1 / (m + t0)) * h_bar + (target_accept - alpha) / (m + t0)
            log_eps = mu_da - math.sqrt(m) / gamma * h_bar
            w = m ** (-kappa)
            log_eps_bar = w * log_eps + (1 - w) * log_eps_bar
            eps = math.exp(log_eps)
            if m == n_warmup:
                eps = math.exp(log_eps_bar)
        else:
            draws[it - n_warmup] = x
            accept[it - n_warmup] = alpha
    return ChainResult(draws, accept, eps, n_div)


# -- diagnostics and summaries ----------------------------------------------------------

def psrf(draws) -> float:
    """Gelman-Rubin potential scale reduction factor for one parameter.

    ``draws`` has shape ``(chains, n)``; chains are not split.
    """
    draws = np.asarray(draws, dtype=float)
    return float(psrf_all(draws[:, :, None])[0])


def psrf_all(draws: np.ndarray) -> np.ndarray:
    """PSRF for every parameter of a ``(chains, n, P)`` array."""
    draws = np.asarray(draws, dtype=float)
    n_chains, n = draws.shape[:2]
    if n_chains < 2 or n < 2:
        raise DiagnosticError("PSRF needs at least 2 chains of at least 2 draws")
    w = draws.var(axis=1, ddof=1).mean(axis=0)
    b = n * draws.mean(axis=1).var(axis=0, ddof=1)
    if np.any(w <= 0):
        raise DiagnosticError(f"zero within-chain variance for parameter index {int(np.argmax(w <= 0))}")
    return np.sqrt(((n - 1) / n * w + b / n) / w)


@dataclass
class Summary:
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def posterior_summaries(draws) -> Summary:
    """Mean, SD (divisor n - 1) and central 90% interval over all pooled draws.

    ``draws`` is ``(n,)``, ``(chains, n)`` or ``(chains, n, P)``.
    """
    d = np.asarray(draws, dtype=float)
    if d.ndim == 1:
        flat = d[:, None]
    elif d.ndim == 2:
        flat = d.reshape(-1, 1)
    else:
        flat = d.reshape(-1, d.shape[-1])
    mean = flat.mean(axis=0)
    sd = flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.zeros(flat.shape[1])
    lower, upper = np.quantile(flat, [0.05, 0.95], axis=0)
    # keep the mean inside the interval against rounding for constant draws
    lower = np.minimum(lower, mean)
    upper = np.maximum(upper, mean)
    if d.ndim < 3:
        return Summary(mean[0], sd[0], lower[0], upper[0])
    return Summary(mean, sd, lower, upper)


@dataclass
class PosteriorDraws:
    """Retained draws of the reported parameters, shape ``(chains, n, P)``."""

    values: np.ndarray
    names: list[str]

    def __post_init__(self):
        self._index = {name: k for k, name in enumerate(self.names)}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, :, self._index[name]]

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_retained(self) -> int:
        return self.values.shape[1]

    def write_csv(self, path) -> None:
        """Long-format dump: chain, iteration, parameter, value."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iteration", "parameter", "value"])
            for c in range(self.n_chains):
                for t in range(self.n_retained):
                    for k, name in enumerate(self.names):
                        w.writerow([c + 1, t + 1, name, repr(float(self.values[c, t, k]))])


@dataclass
class McmcFit:
    bank_hat: ItemBank
    theta_hat: np.ndarray
    draws: PosteriorDraws
    psrf: np.ndarray
    n_retries: int
    accept_rate: np.ndarray
    step_size: np.ndarray = field(default_factory=lambda: np.empty(0))
    theta_sd: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def max_psrf(self) -> float:
        return float(np.max(self.psrf)) if self.psrf.size else 1.0


def initial_state(post: Posterior, rng: np.random.Generator) -> np.ndarray:
    """Dispersed but data-informed starting point for one chain."""
    lay = post.layout
    data = post.data
    x = np.empty(lay.size)
    x[lay.log_a] = rng.uniform(-0.5, 0.5, lay.n_items)
    steps = []
    for c in (data.category_counts() if data.n_persons else [np.ones(m) for m in lay.n_categories]):
        tail = np.cumsum(c[::-1])[::-1][1:]
        pr = (tail + 0.5) / (c.sum() + 1.0)
        steps.append(-np.log(pr / (1 - pr)))
    steps = np.concatenate(steps) if steps else np.empty(0)
    x[lay.steps] = steps + rng.uniform(-0.5, 0.5, steps.size)
    if data.n_persons and data.n_items:
        score = data.responses.sum(axis=1).astype(float)
        sd = score.std()
        z = (score - score.mean()) / sd if sd > 0 else np.zeros_like(score)
    else:
        z = np.zeros(lay.n_persons)
    x[lay.theta] = z + rng.uniform(-0.5, 0.5, lay.n_persons)
    x[lay.mu] = (steps.mean() if steps.size else 0.0) + rng.uniform(-0.5, 0.5)
    spread = steps.std() if steps.size > 1 else 1.0
    x[lay.log_sigma] = math.log(max(spread, 0.1)) + rng.uniform(-0.5, 0.5)
    return x


def _run_chains(post: Posterior, cfg: HmcConfig, seed_seq: np.random.SeedSequence):
    children = seed_seq.spawn(cfg.n_chains)

    def one(child):
        rng = np.random.default_rng(child)
        return hmc_chain(post.logp_grad, initial_state(post, rng), cfg.iters_per_chain,
                         cfg.warmup, rng, cfg.target_accept, cfg.leapfrog_range)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            return list(pool.map(one, children))
    return [one(c) for c in children]


def fit_mcmc(data: ResponseMatrix, m_per_item=None, prior: PriorSpec | None = None,
             cfg: HmcConfig | None = None) -> McmcFit:
    cfg = cfg or HmcConfig()
    if m_per_item is not None and tuple(m_per_item) != data.n_categories:
        data = ResponseMatrix(data.responses, tuple(m_per_item))
    post = Posterior(data, prior)
    lay = post.layout
    names = lay.names()
    worst = (np.inf, "")
    for retry in range(cfg.max_retries + 1):
        seq = np.random.SeedSequence(cfg.seed, spawn_key=(retry,))
        chains = _run_chains(post, cfg, seq)
        values = lay.constrain(np.stack([c.draws for c in chains]))
        try:
            r = psrf_all(values)
        except DiagnosticError as exc:
            log.warning("retry %d: %s", retry, exc)
            worst = (np.inf, str(exc))
            continue
        k = int(np.argmax(r))
        if r[k] < cfg.psrf_cutoff:
            summary = posterior_summaries(values)
            return McmcFit(
                bank_hat=lay.bank(summary.mean),
                theta_hat=summary.mean[lay.theta],
                draws=PosteriorDraws(values, names),
                psrf=r,
                n_retries=retry,
                accept_rate=np.array([c.accept_prob.mean() for c in chains]),
                step_size=np.array([c.step_size for c in chains]),
                theta_sd=summary.sd[lay.theta],
            )
        worst = (float(r[k]), names[k])
        log.info("retry %d: PSRF %.4f for %s >= %.2f", retry, r[k], names[k], cfg.psrf_cutoff)
    raise NonConvergenceError(worst[0], worst[1], cfg.max_retries)
