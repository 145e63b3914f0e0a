"""Marginal maximum likelihood for the GPCM by Bock-Aitkin EM, plus EAP scoring.

The latent density is a standard normal discretized on a fixed grid. Each EM
cycle computes per-person posterior weights over the grid, turns them into
expected category counts per item and node, then maximizes each item's
expected complete-data log-likelihood by Newton-Raphson on
``(log a, steps...)``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateItemError, InvalidInputError, SingularHessianError
from .model import ItemBank, ItemParams, ResponseMatrix, log_prob_table

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size < 2:
            raise InvalidInputError("grid needs matching 1-D nodes and weights (>= 2)")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidInputError("grid nodes must be strictly increasing")
        if np.any(weights <= 0) or abs(weights.sum() - 1) > 1e-12:
            raise InvalidInputError("grid weights must be positive and sum to 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def normal(cls, n_nodes: int = 61, lower: float = -5.0, upper: float = 5.0) -> "QuadratureGrid":
        """Equally spaced nodes with renormalized standard-normal density weights."""
        nodes = np.linspace(lower, upper, n_nodes)
        w = np.exp(-0.5 * nodes**2)
        return cls(nodes, w / w.sum())


@dataclass(frozen=True)
class EmConfig:
    grid: QuadratureGrid = field(default_factory=QuadratureGrid.normal)
    max_cycles: int = 500
    outer_tol: float = 1e-4
    newton_max_iter: int = 20
    newton_tol: float = 1e-8

    def __post_init__(self):
        if self.outer_tol <= 0 or self.newton_tol <= 0:
            raise InvalidInputError("tolerances must be positive")
        if self.max_cycles < 1 or self.newton_max_iter < 1:
            raise InvalidInputError("iteration caps must be >= 1")


@dataclass
class MmleFit:
    bank_hat: ItemBank
    loglik_trace: list[float]
    converged: bool
    n_cycles: int
    theta_hat: np.ndarray
    theta_sd: np.ndarray
    # item index -> fitted category for each original category; only items that collapsed
    collapse_maps: dict[int, tuple[int, ...]] = field(default_factory=dict)


@dataclass
class EStep:
    posterior: np.ndarray  # (N, Q)
    counts: list[np.ndarray]  # per item, (Q, m_j)
    loglik: float


def _person_node_loglik(data: ResponseMatrix, bank: ItemBank, nodes: np.ndarray) -> np.ndarray:
    if data.n_items == 0:
        return np.zeros((data.n_persons, nodes.size))
    table = log_prob_table(bank, nodes)  # (J, Q, M)
    j_idx = np.arange(data.n_items)[None, :]
    return table[j_idx, :, data.responses].sum(axis=1)  # (N, J, Q) -> (N, Q)


def e_step(data: ResponseMatrix, bank: ItemBank, grid: QuadratureGrid, freq=None) -> EStep:
    """Posterior node weights per row and expected category counts per item.

    ``freq`` optionally gives each row a multiplicity, so ``data`` may hold
    unique response patterns instead of persons.
    """
    if len(bank) != data.n_items:
        raise InvalidInputError("bank and data disagree on the number of items")
    freq = np.ones(data.n_persons) if freq is None else np.asarray(freq, dtype=float)
    joint = _person_node_loglik(data, bank, grid.nodes) + np.log(grid.weights)[None, :]
    marginal = logsumexp(joint, axis=1, keepdims=True)
    post = np.exp(joint - marginal)
    post /= post.sum(axis=1, keepdims=True)
    weighted = post * freq[:, None]
    counts = []
    for j, m in enumerate(data.n_categories):
        r = np.zeros((grid.nodes.size, m))
        u = data.responses[:, j]
        for k in range(m):
            r[:, k] = weighted[u == k].sum(axis=0)
        counts.append(r)
    return EStep(post, counts, float(freq @ marginal[:, 0]))


def eap_abilities(data: ResponseMatrix, bank_hat: ItemBank, grid: QuadratureGrid):
    """Posterior means and SDs of ability on the grid."""
    post = e_step(data, bank_hat, grid).posterior
    mean = post @ grid.nodes
    var = post @ grid.nodes**2 - mean**2
    return mean, np.sqrt(np.maximum(var, 0.0))


def _item_objective(x, counts, nodes, derivs=True):
    """Expected complete-data log-likelihood of one item, with gradient and Hessians."""
    a = np.exp(x[0])
    m = counts.shape[1]
    k = np.arange(m)
    cum = np.concatenate([[0.0], np.cumsum(x[1:])])
    s = a * (k[None, :] * nodes[:, None] - cum[None, :])
    lse = logsumexp(s, axis=1, keepdims=True)
    value = float(np.sum(counts * (s - lse)))
    if not derivs:
        return value
    p = np.exp(s - lse)
    n = counts.sum(axis=1)
    # ds_k/dx: column 0 is d/dlog a = s_k, column h is -a [k >= h]
    ds = np.empty((nodes.size, m, m))
    ds[:, :, 0] = s
    ds[:, :, 1:] = -a * (k[:, None] >= np.arange(1, m)[None, :])[None, :, :]
    resid = counts - n[:, None] * p
    grad = np.einsum("qk,qkp->p", resid, ds)
    mean = np.einsum("qk,qkp->qp", p, ds)
    second = np.einsum("qk,qkp,qkr->qpr", p, ds, ds) - mean[:, :, None] * mean[:, None, :]
    fisher = -np.einsum("q,qpr->pr", n, second)
    # curvature of s itself only involves the log a row/column
    exact = fisher.copy()
    exact[0, :] += grad
    exact[:, 0] += grad
    exact[0, 0] -= grad[0]
    return value, grad, exact, fisher


def _newton_direction(grad, exact, fisher):
    for h in (exact, fisher):
        try:
            np.linalg.cholesky(-h)
            return np.linalg.solve(-h, grad)
        except np.linalg.LinAlgError:
            continue
    ridge = 1e-8 * max(1.0, float(np.abs(np.diag(fisher)).max()))
    try:
        neg = -fisher + ridge * np.eye(grad.size)
        np.linalg.cholesky(neg)
        return np.linalg.solve(neg, grad)
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError("item Hessian singular after ridge regularization") from exc


MAX_STEP = 1.0


def m_step_item(counts: np.ndarray, grid: QuadratureGrid, start: ItemParams, cfg: EmConfig) -> ItemParams:
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise InvalidInputError("expected counts must be non-negative")
    if counts.shape != (grid.nodes.size, start.n_categories):
        raise InvalidInputError("counts must be (n_nodes, n_categories)")
    x = start.unconstrained()
    value, grad, exact, fisher = _item_objective(x, counts, grid.nodes)
    for _ in range(cfg.newton_max_iter):
        if np.max(np.abs(grad)) < cfg.newton_tol:
            break
        step = _newton_direction(grad, exact, fisher)
        # boundary optima (a -> 0 with diverging steps) otherwise draw huge jumps
        t = min(1.0, MAX_STEP / float(np.max(np.abs(step))))
        for _ in range(40):
            trial = x + t * step
            trial_value = _item_objective(trial, counts, grid.nodes, derivs=False)
            if np.isfinite(trial_value) and trial_value >= value:
                break
            t *= 0.5
        else:
            break  # no ascent possible at working precision
        x = trial
        value, grad, exact, fisher = _item_objective(x, counts, grid.nodes)
    return ItemParams.from_unconstrained(x)


def start_values(data: ResponseMatrix) -> ItemBank:
    """a = 1 and steps from empirical cumulative category logits."""
    items = []
    for c in data.category_counts():
        n = c.sum()
        tail = np.cumsum(c[::-1])[::-1][1:]
        p = (tail + 0.5) / (n + 1.0)
        items.append(ItemParams(1.0, tuple(-np.log(p / (1 - p)))))
    return ItemBank(items)


def collapse_empty_categories(data: ResponseMatrix):
    """Merge categories observed zero times into an adjacent observed category.

    Returns the remapped data and ``{item: map}`` for items that changed.
    """
    maps = {}
    u = data.responses.copy()
    ncat = list(data.n_categories)
    for j, c in enumerate(data.category_counts()):
        observed = np.flatnonzero(c)
        if observed.size < 2:
            raise DegenerateItemError(j + 1, int(observed[0]) if observed.size else 0)
        if observed.size == c.size:
            continue
        # each category goes to the nearest observed category at or below it, else the lowest
        rank = np.searchsorted(observed, np.arange(c.size), side="right") - 1
        mapping = tuple(int(r) for r in np.maximum(rank, 0))
        warnings.warn(
            f"item {j + 1}: categories {np.flatnonzero(c == 0).tolist()} never observed; "
            f"collapsed to {observed.size} categories",
            stacklevel=3,
        )
        maps[j] = mapping
        u[:, j] = np.asarray(mapping)[u[:, j]]
        ncat[j] = observed.size
    return ResponseMatrix(u, tuple(ncat)), maps


def fit_mmle(data: ResponseMatrix, m_per_item=None, config: EmConfig | None = None,
             start: ItemBank | None = None) -> MmleFit:
    """Fit item parameters by EM and score abilities by EAP.

    Persons are reduced to unique response patterns (in ``np.unique`` order)
    before fitting, which makes the result independent of row order.
    """
    config = config or EmConfig()
    if m_per_item is not None and tuple(m_per_item) != data.n_categories:
        data = ResponseMatrix(data.responses, tuple(m_per_item))
    data, maps = collapse_empty_categories(data)
    grid = config.grid
    if start is not None and not maps:
        bank = start
    else:
        bank = start_values(data)
    persons = data
    patterns, inverse, freq = np.unique(
        data.responses, axis=0, return_inverse=True, return_counts=True
    )
    data = ResponseMatrix(patterns, data.n_categories)
    inverse = inverse.reshape(-1)
    trace = []
    converged = False
    cycle = 0
    for cycle in range(1, config.max_cycles + 1):
        es = e_step(data, bank, grid, freq)
        if trace and es.loglik < trace[-1] - 1e-8:
            log.warning("EM log-likelihood decreased at cycle %d: %.10g -> %.10g",
                        cycle, trace[-1], es.loglik)
        trace.append(es.loglik)
        new = ItemBank([
            m_step_item(es.counts[j], grid, bank[j], config) for j in range(data.n_items)
        ])
        change = max(
            max(abs(n.discrimination - o.discrimination),
                float(np.max(np.abs(np.subtract(n.steps, o.steps)))))
            for n, o in zip(new, bank)
        ) if len(new) else 0.0
        bank = new
        if change < config.outer_tol:
            converged = True
            break
    final = e_step(data, bank, grid, freq)
    trace.append(final.loglik)
    theta = final.posterior @ grid.nodes
    sd = np.sqrt(np.maximum(final.posterior @ grid.nodes**2 - theta**2, 0.0))
    theta, sd = theta[inverse], sd[inverse]
    assert theta.shape == (persons.n_persons,)
    if not converged:
        log.info("EM stopped after %d cycles without meeting outer_tol", cycle)
    return MmleFit(bank, trace, converged, cycle, theta, sd, maps)
