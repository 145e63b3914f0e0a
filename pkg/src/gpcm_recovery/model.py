"""GPCM and NRM category probabilities, log-likelihoods and gradients.

Conventions
-----------
Categories are 0-based: an item with ``m`` categories takes responses
``0..m-1``. The first transition location is fixed at zero and never stored,
so ``ItemParams.steps[h-1]`` is the location of the transition from category
``h-1`` to ``h``. The cumulative logit of category ``k`` is

    s_k = sum_{h=1..k} a * (theta - steps[h-1]),   s_0 = 0,

and the category probabilities are ``softmax(s)``. Gradients are taken with
respect to ``(log a, steps...)`` so that ``a > 0`` holds without bounds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidInputError


def _finite(x, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{what} must be finite")


@dataclass(frozen=True)
class ItemParams:
    """Discrimination and step locations of one GPCM item."""

    discrimination: float
    steps: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "discrimination", float(self.discrimination))
        object.__setattr__(self, "steps", tuple(float(s) for s in self.steps))
        if not np.isfinite(self.discrimination) or self.discrimination <= 0:
            raise InvalidInputError(
                f"discrimination must be positive and finite, got {self.discrimination}"
            )
        if len(self.steps) < 1:
            raise InvalidInputError("an item needs at least 2 categories (1 step)")
        _finite(self.steps, "steps")

    @property
    def n_categories(self) -> int:
        return len(self.steps) + 1

    @classmethod
    def from_unconstrained(cls, x: Sequence[float]) -> "ItemParams":
        """Build from ``(log a, steps...)``."""
        return cls(float(np.exp(x[0])), tuple(x[1:]))

    def unconstrained(self) -> np.ndarray:
        return np.array([np.log(self.discrimination), *self.steps])


@dataclass(frozen=True)
class ItemBank:
    items: tuple[ItemParams, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[ItemParams]:
        return iter(self.items)

    def __getitem__(self, j):
        if isinstance(j, slice):
            return ItemBank(self.items[j])
        return self.items[j]

    @property
    def n_categories(self) -> np.ndarray:
        return np.array([it.n_categories for it in self.items], dtype=np.int64)

    @property
    def discriminations(self) -> np.ndarray:
        return np.array([it.discrimination for it in self.items], dtype=float)

    @property
    def max_categories(self) -> int:
        return int(self.n_categories.max()) if self.items else 1

    def step_matrix(self) -> np.ndarray:
        """Steps padded with zeros to shape ``(J, M-1)``."""
        out = np.zeros((len(self), self.max_categories - 1))
        for j, it in enumerate(self.items):
            out[j, : len(it.steps)] = it.steps
        return out


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Persons x items matrix of 0-based category responses, no missing cells."""

    responses: np.ndarray
    n_categories: tuple[int, ...] = field(default=())

    def __post_init__(self):
        u = np.asarray(self.responses)
        if u.ndim != 2:
            raise InvalidInputError("responses must be a 2-D array")
        if u.size and not np.issubdtype(u.dtype, np.integer):
            if not np.all(np.isfinite(u)) or np.any(u != np.round(u)):
                raise InvalidInputError("responses must be integer categories")
        u = np.array(u, dtype=np.int64)
        ncat = tuple(int(m) for m in self.n_categories) if self.n_categories else tuple(
            int(c) + 1 for c in (u.max(axis=0) if u.shape[0] else np.ones(u.shape[1]))
        )
        if len(ncat) != u.shape[1]:
            raise InvalidInputError(
                f"{u.shape[1]} item columns but {len(ncat)} category counts"
            )
        if any(m < 2 for m in ncat):
            raise InvalidInputError("every item needs at least 2 categories")
        bad = (u < 0) | (u >= np.array(ncat, dtype=np.int64)[None, :])
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise InvalidInputError(
                f"response {u[i, j]} out of range for item {j + 1} (person {i + 1})"
            )
        u.setflags(write=False)
        object.__setattr__(self, "responses", u)
        object.__setattr__(self, "n_categories", ncat)

    @property
    def n_persons(self) -> int:
        return self.responses.shape[0]

    @property
    def n_items(self) -> int:
        return self.responses.shape[1]

    def category_counts(self) -> list[np.ndarray]:
        return [
            np.bincount(self.responses[:, j], minlength=m)
            for j, m in enumerate(self.n_categories)
        ]


@dataclass(frozen=True)
class NrmParams:
    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
        object.__setattr__(self, "intercepts", tuple(float(s) for s in self.intercepts))
        if len(self.slopes) != len(self.intercepts):
            raise InvalidInputError("slopes and intercepts differ in length")
        if self.slopes[0] != 0.0 or self.intercepts[0] != 0.0:
            raise InvalidInputError("reference category must have zero slope and intercept")


def _softmax(s: np.ndarray) -> np.ndarray:
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cumulative_logits(theta, item: ItemParams) -> np.ndarray:
    """``s_k`` for every category; broadcasts over an array of thetas."""
    theta = np.asarray(theta, dtype=float)
    steps = np.asarray(item.steps)
    inc = item.discrimination * (theta[..., None] - steps)
    s = np.zeros(theta.shape + (item.n_categories,))
    s[..., 1:] = np.cumsum(inc, axis=-1)
    return s


def gpcm_category_probs(theta: float, item: ItemParams) -> np.ndarray:
    _finite(theta, "theta")
    return _softmax(cumulative_logits(theta, item))


def gpcm_log_probs(theta, item: ItemParams) -> np.ndarray:
    s = cumulative_logits(theta, item)
    mx = s.max(axis=-1, keepdims=True)
    return s - mx - np.log(np.exp(s - mx).sum(axis=-1, keepdims=True))


def log_prob_table(bank: ItemBank, nodes: np.ndarray) -> np.ndarray:
    """Log category probabilities at each node, shape ``(J, Q, M)``.

    Categories beyond an item's range are ``-inf``.
    """
    nodes = np.asarray(nodes, dtype=float)
    out = np.full((len(bank), nodes.size, bank.max_categories), -np.inf)
    for j, item in enumerate(bank):
        out[j, :, : item.n_categories] = gpcm_log_probs(nodes, item)
    return out


def gpcm_log_likelihood(data: ResponseMatrix, bank: ItemBank, thetas) -> float:
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape != (data.n_persons,) or len(bank) != data.n_items:
        raise InvalidInputError(
            f"dimension mismatch: data {data.responses.shape}, "
            f"{len(bank)} items, {thetas.shape} thetas"
        )
    _finite(thetas, "thetas")
    total = 0.0
    rows = np.arange(data.n_persons)
    for j, item in enumerate(bank):
        if item.n_categories != data.n_categories[j]:
            raise InvalidInputError(f"item {j + 1}: category count mismatch")
        lp = gpcm_log_probs(thetas, item)
        total += lp[rows, data.responses[:, j]].sum()
    return float(total)


def gpcm_to_nrm(item: ItemParams) -> NrmParams:
    a = item.discrimination
    k = np.arange(item.n_categories)
    intercepts = np.concatenate([[0.0], -a * np.cumsum(item.steps)])
    return NrmParams(tuple(a * k), tuple(intercepts))


def nrm_category_probs(theta: float, params: NrmParams) -> np.ndarray:
    _finite(theta, "theta")
    slopes = np.asarray(params.slopes)
    intercepts = np.asarray(params.intercepts)
    _finite(slopes, "slopes")
    _finite(intercepts, "intercepts")
    return _softmax(slopes * theta + intercepts)


def grad_item_loglik(theta: float, item: ItemParams, response: int) -> np.ndarray:
    """Gradient of ``log p(response)`` over ``(log a, steps...)``."""
    m = item.n_categories
    if not 0 <= response < m:
        raise InvalidInputError(f"response {response} outside 0..{m - 1}")
    _finite(theta, "theta")
    s = cumulative_logits(theta, item)
    p = _softmax(s)
    a = item.discrimination
    g = np.empty(m)
    g[0] = s[response] - p @ s
    # P(K >= h) for h = 1..m-1
    tail = np.cumsum(p[::-1])[::-1][1:]
    g[1:] = a * (tail - (response >= np.arange(1, m)))
    return g


def grad_theta_loglik(theta: float, items: ItemBank, responses: Sequence[int]) -> float:
    _finite(theta, "theta")
    if len(items) != len(responses):
        raise InvalidInputError("one response per item required")
    total = 0.0
    for item, u in zip(items, responses):
        p = gpcm_category_probs(theta, item)
        if not 0 <= u < item.n_categories:
            raise InvalidInputError(f"response {u} out of range")
        total += item.discrimination * (u - p @ np.arange(item.n_categories))
    return float(total)
