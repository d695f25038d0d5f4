"""Rank-sum tests, win/loss tables and score summaries."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def u_statistic(a: Sequence[float], b: Sequence[float]) -> tuple[float, np.ndarray]:
    """U of sample ``a`` (count of a>b pairs plus half the ties) and the pooled midranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ranks = _midranks(np.concatenate([a, b]))
    n1 = len(a)
    return float(ranks[:n1].sum() - n1 * (n1 + 1) / 2), ranks


def _exact_distribution(ranks: np.ndarray, n1: int) -> dict[float, int]:
    """Counts of U over all C(n, n1) relabelings of the pooled midranks.

    Subset sums of doubled midranks (integers) are tracked with a DP over
    (items chosen, sum), which stays small for the n <= 8 range it serves.
    """
    doubled = np.rint(2 * ranks).astype(np.int64)
    table: list[dict[int, int]] = [dict() for _ in range(n1 + 1)]
    table[0][0] = 1
    for r in doubled:
        for k in range(n1, 0, -1):
            for s, c in table[k - 1].items():
                table[k][s + int(r)] = table[k].get(s + int(r), 0) + c
    offset = n1 * (n1 + 1) / 2
    return {s / 2 - offset: c for s, c in table[n1].items()}


def mann_whitney_u(a: Sequence[float], b: Sequence[float], exact: bool | None = None) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test.  Returns ``(U_a, p)``.

    By default the exact permutation distribution (midranks, ties allowed) is
    used when both samples have at most 8 elements and the normal
    approximation with tie-corrected variance and continuity correction
    otherwise.
    """
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    u, ranks = u_statistic(a, b)
    center = n1 * n2 / 2
    if exact is None:
        exact = n1 <= 8 and n2 <= 8
    if exact:
        dist = _exact_distribution(ranks, n1)
        total = sum(dist.values())
        dev = abs(u - center)
        hits = sum(c for v, c in dist.items() if abs(v - center) >= dev - 1e-9)
        return u, min(1.0, hits / total)
    n = n1 + n2
    _, counts = np.unique(ranks, return_counts=True)
    tie = float(((counts**3 - counts).sum()))
    var = n1 * n2 / 12 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return u, 1.0
    z = (abs(u - center) - 0.5) / math.sqrt(var)
    if z <= 0:
        return u, 1.0
    return u, min(1.0, math.erfc(z / math.sqrt(2)))


@dataclass(frozen=True)
class Comparison:
    a: str
    b: str
    env: str
    u: float
    p: float
    outcome: str  # "win", "loss", "tie" from a's point of view


def compare(a_scores, b_scores, alpha: float = 0.05) -> tuple[float, float, str]:
    u, p = mann_whitney_u(a_scores, b_scores)
    ma, mb = statistics.median(a_scores), statistics.median(b_scores)
    if p < alpha and ma > mb:
        return u, p, "win"
    if p < alpha and mb > ma:
        return u, p, "loss"
    return u, p, "tie"


@dataclass
class WinLossTable:
    configs: list
    envs: list
    comparisons: list
    gaps: list
    portfolio: dict | None = None

    def count(self, a: str, b: str) -> tuple[int, int, int]:
        """(wins, losses, ties) of ``a`` against ``b`` over all envs."""
        res = [c.outcome for c in self.comparisons if c.a == a and c.b == b]
        return res.count("win"), res.count("loss"), res.count("tie")


def build_win_loss(scores: Mapping[tuple[str, str], Sequence[float]], alpha: float = 0.05,
                   portfolio: tuple[str, str] | None = ("active-olive", "passive-olive")) -> WinLossTable:
    """Pairwise comparisons from ``{(config, env): scores}``.

    Missing (config, env) cells are reported as gaps.  The portfolio row wins
    on an env against a third config iff either member of the pair wins there.
    """
    configs = sorted({c for c, _ in scores})
    envs = sorted({e for _, e in scores})
    comps, gaps = [], []
    for a, b in combinations(configs, 2):
        for env in envs:
            if (a, env) not in scores or (b, env) not in scores:
                gaps.append((a, b, env))
                continue
            u, p, out = compare(scores[(a, env)], scores[(b, env)], alpha)
            n1, n2 = len(scores[(a, env)]), len(scores[(b, env)])
            flip = {"win": "loss", "loss": "win", "tie": "tie"}[out]
            comps.append(Comparison(a, b, env, u, p, out))
            comps.append(Comparison(b, a, env, n1 * n2 - u, p, flip))
    table = WinLossTable(configs, envs, comps, gaps)
    if portfolio and all(p in configs for p in portfolio):
        row = {}
        for other in configs:
            if other in portfolio:
                continue
            wins = losses = 0
            for env in envs:
                outs = {c.outcome for c in comps if c.a in portfolio and c.b == other and c.env == env}
                if "win" in outs:
                    wins += 1
                elif "loss" in outs:
                    losses += 1
            row[other] = (wins, losses)
        table.portfolio = row
    return table


def summarize(scores: Sequence[float]) -> dict:
    """mean, stderr = stdev / sqrt(n) (sample stdev), max, n."""
    n = len(scores)
    if n == 0:
        raise ValueError("no scores")
    mean = math.fsum(scores) / n
    sd = statistics.stdev(scores) if n > 1 else 0.0
    return {"n": n, "mean": mean, "stderr": sd / math.sqrt(n), "max": max(scores)}
