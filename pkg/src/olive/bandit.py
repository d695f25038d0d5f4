"""Bayesian reward statistics per (node, action) and best-arm selection rules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

STRATEGIES = ("uniform", "max", "ucb1", "ttts")
TTTS_MAX_RESAMPLES = 10_000


@dataclass
class BanditConfig:
    sigma0: float = 0.2
    alpha: float = 0.5
    strategy: str = "ttts"

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")


@dataclass
class NodeStats:
    """Rollout count, mean return, pseudo-count regularized variance, best return."""

    n: int = 0
    mean: float = 0.0
    var: float = 0.2
    q_max: float = -math.inf

    @classmethod
    def initial(cls, sigma0: float = 0.2) -> "NodeStats":
        return cls(0, 0.0, sigma0, -math.inf)


def update_stats(s: NodeStats, q: float) -> NodeStats:
    """Fold one more return ``q`` into the statistics.

    The variance divisor is n+2 because the prior sigma0 counts as one
    extra pseudo-sample.
    """
    n = s.n
    mean = (n * s.mean + q) / (n + 1)
    var = (n + 1) * s.var / (n + 2) + (q - s.mean) * (q - mean) / (n + 2)
    return NodeStats(n + 1, mean, var, max(s.q_max, q))


def batch_stats(qs: Sequence[float], sigma0: float = 0.2) -> tuple[float, float]:
    """Direct (mean, regularized variance) of a return sequence."""
    qs = np.asarray(qs, dtype=np.float64)
    if qs.size == 0:
        return 0.0, sigma0
    mean = qs.mean()
    return float(mean), float((sigma0 + ((qs - mean) ** 2).sum()) / (qs.size + 1))


def sample_posterior(s: NodeStats, rng: np.random.Generator) -> float:
    """Draw Q from the hierarchical Normal / scaled-inverse-chi^2 posterior."""
    return float(sample_posteriors([s], rng)[0])


def _arrays(stats):
    n = np.array([s.n for s in stats], dtype=np.float64)
    mean = np.array([s.mean for s in stats], dtype=np.float64)
    var = np.array([s.var for s in stats], dtype=np.float64)
    return n, mean, var


def sample_variance(stats: Sequence[NodeStats], rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """sigma^2 ~ Scaled-Inv-chi^2(n + 1, var), drawn as nu * var / chi^2_nu."""
    n, _, var = _arrays(stats)
    shape = n.shape if size is None else (size, n.size)
    nu = n + 1
    return nu * var / rng.chisquare(np.broadcast_to(nu, shape))


def sample_posteriors(stats: Sequence[NodeStats], rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Vectorized ``sample_posterior`` over several arms.

    Returns one draw per arm, or a ``(size, n_arms)`` block of independent
    draws when ``size`` is given.
    """
    n, mean, _ = _arrays(stats)
    sigma2 = sample_variance(stats, rng, size)
    mu = rng.normal(mean, np.sqrt(sigma2 / np.maximum(n, 1)))
    return rng.normal(mu, np.sqrt(sigma2))


def _unvisited(stats, candidates):
    for a in candidates:
        if stats[a].n == 0:
            return a
    return None


def _all(stats, candidates):
    return list(range(len(stats))) if candidates is None else list(candidates)


def select_uniform(stats: Sequence[NodeStats], rng: np.random.Generator, candidates=None) -> int:
    cand = _all(stats, candidates)
    return int(cand[rng.integers(len(cand))])


def select_max(stats: Sequence[NodeStats], candidates=None) -> int:
    cand = _all(stats, candidates)
    first = _unvisited(stats, cand)
    if first is not None:
        return first
    return int(cand[int(np.argmax([stats[a].mean for a in cand]))])


def select_ucb1(stats: Sequence[NodeStats], candidates=None) -> int:
    cand = _all(stats, candidates)
    first = _unvisited(stats, cand)
    if first is not None:
        return first
    total = sum(s.n for s in stats)
    index = [stats[a].mean + math.sqrt(2 * math.log(total) / stats[a].n) for a in cand]
    return int(cand[int(np.argmax(index))])


def select_ttts(stats: Sequence[NodeStats], alpha: float, rng: np.random.Generator, candidates=None) -> int:
    """Top-two Thompson sampling.

    Unvisited arms are tried first (lowest index).  Otherwise the Thompson
    winner is returned with probability 1 - alpha; with probability alpha
    Thompson sampling is rerun until a different arm wins.
    """
    cand = _all(stats, candidates)
    first = _unvisited(stats, cand)
    if first is not None:
        return first
    arms = [stats[a] for a in cand]
    best = int(np.argmax(sample_posteriors(arms, rng)))
    if len(cand) == 1 or rng.random() >= alpha:
        return int(cand[best])
    # rerun TS in blocks; the first winner different from `best` is returned
    drawn, block = 0, 16
    while drawn < TTTS_MAX_RESAMPLES:
        block = min(block, TTTS_MAX_RESAMPLES - drawn)
        winners = np.argmax(sample_posteriors(arms, rng, size=block), axis=1)
        other = np.flatnonzero(winners != best)
        if other.size:
            return int(cand[winners[other[0]]])
        drawn += block
        block *= 4
    # degenerate posteriors: best remaining arm by posterior mean
    means = [s.mean if i != best else -math.inf for i, s in enumerate(arms)]
    return int(cand[int(np.argmax(means))])


def select(stats: Sequence[NodeStats], config: BanditConfig, rng: np.random.Generator, candidates=None) -> int:
    if config.strategy == "uniform":
        return select_uniform(stats, rng, candidates)
    if config.strategy == "max":
        return select_max(stats, candidates)
    if config.strategy == "ucb1":
        return select_ucb1(stats, candidates)
    return select_ttts(stats, config.alpha, rng, candidates)
