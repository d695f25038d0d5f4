"""Budgeted rollout planning with novelty pruning and best-arm action selection.

The search tree persists across decisions (it is truncated at the chosen
child), while the CLOSE lists and the pruned/solved labels are rebuilt at
the start of every decision.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bandit import BanditConfig, NodeStats, select, update_stats
from .novelty import CloseList


@dataclass
class PlannerConfig:
    gamma: float = 0.99
    budget: int = 100
    max_train_actions: int = 200
    max_eval_actions: int = 18000
    width: int = 1
    bandit: BanditConfig = field(default_factory=BanditConfig)

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        if self.budget < 1 or self.max_train_actions < 1 or self.max_eval_actions < 1:
            raise ValueError("budgets and action caps must be positive")


class BudgetCounter:
    def __init__(self, limit: int):
        self.remaining = limit
        self.consumed = 0

    def spend(self) -> None:
        if self.remaining <= 0:
            raise RuntimeError("simulator budget exhausted")
        self.remaining -= 1
        self.consumed += 1


class Node:
    __slots__ = ("state", "screen", "features", "reward", "terminal", "children", "stats",
                 "epoch", "pruned", "solved")

    def __init__(self, state, screen, features, reward, terminal, n_actions, sigma0):
        self.state = state
        self.screen = screen
        self.features = features
        self.reward = reward
        self.terminal = terminal
        self.children = [None] * n_actions
        self.stats = [NodeStats.initial(sigma0) for _ in range(n_actions)]
        self.epoch = -1
        self.pruned = False
        self.solved = False


class Planner:
    """Owns the environment, search tree, CLOSE lists and the planning RNG."""

    def __init__(self, env, extractor, config: PlannerConfig, rng: np.random.Generator):
        self.env = env
        self.extractor = extractor
        self.config = config
        self.rng = rng
        self.n_actions = env.spec.action_count
        self.close = CloseList(extractor.size, config.width)
        self.epoch = 0
        self.budget = BudgetCounter(0)
        self.observed: list[np.ndarray] = []
        self.root: Node | None = None

    def reset(self) -> Node:
        res = self.env.reset()
        self.root = self._make_node(self.env.save(), res.screen, 0.0, res.terminal)
        self.observed.append(res.screen)
        return self.root

    def _make_node(self, state, screen, reward, terminal) -> Node:
        return Node(state, screen, self.extractor(screen), reward, terminal,
                    self.n_actions, self.config.bandit.sigma0)

    def _visit(self, node: Node, depth: int) -> None:
        """Novelty bookkeeping on entering ``node`` at ``depth`` during a rollout."""
        if node.epoch != self.epoch:
            node.epoch = self.epoch
            node.solved = False
            if depth == 0:
                self.close.add(node.features, 0)
                node.pruned = False
            else:
                novel = self.close.is_novel(node.features, depth)
                if novel:
                    self.close.add(node.features, depth)
                node.pruned = not novel
        elif depth > 0 and not node.pruned:
            # its own registration sits at C^depth, so compare against shallower depths
            node.pruned = not self.close.is_novel(node.features, depth, strict=True)

    def _solved(self, child: Node | None) -> bool:
        return child is not None and child.epoch == self.epoch and child.solved

    def rollout(self, node: Node, depth: int = 0) -> float:
        """One rollout from ``node``; returns the discounted return it observed."""
        self._visit(node, depth)
        if node.terminal or node.pruned:
            node.solved = True
            return 0.0
        if self.budget.remaining <= 0:
            return 0.0
        candidates = [a for a in range(self.n_actions) if not self._solved(node.children[a])]
        if not candidates:
            node.solved = True
            return 0.0
        a = select(node.stats, self.config.bandit, self.rng, candidates)
        child = node.children[a]
        if child is None:
            self.env.restore(node.state)
            res = self.env.step(a)
            self.budget.spend()
            child = self._make_node(self.env.save(), res.screen, res.reward, res.terminal)
            node.children[a] = child
            self.observed.append(res.screen)
        q = child.reward + self.config.gamma * self.rollout(child, depth + 1)
        node.stats[a] = update_stats(node.stats[a], q)
        if all(self._solved(c) for c in node.children):
            node.solved = True
        return q

    def plan(self) -> int:
        """Spend the per-decision budget on rollouts from the root; returns sim calls used."""
        root = self.root
        if root is None or root.terminal:
            raise RuntimeError("planning needs a non-terminal root")
        self.epoch += 1
        self.close.clear()
        self.budget = BudgetCounter(self.config.budget)
        while self.budget.remaining > 0:
            self.rollout(root, 0)
            if root.solved:
                break
        return self.budget.consumed

    def best_action(self) -> int:
        """argmax_a of the best return seen from the root; unvisited actions excluded.

        Ties on the best return go to the most-visited action (keeps the
        larger subtree), then to the lowest index.
        """
        stats = self.root.stats
        visited = [a for a in range(self.n_actions) if stats[a].n > 0 and self.root.children[a] is not None]
        if not visited:
            return int(self.rng.integers(self.n_actions))
        return max(visited, key=lambda a: (stats[a].q_max, stats[a].n, -a))

    def act(self, action: int):
        """Move the root to the chosen child, discarding its siblings."""
        child = self.root.children[action]
        extra = 0
        if child is None:
            self.env.restore(self.root.state)
            res = self.env.step(action)
            extra = 1
            child = self._make_node(self.env.save(), res.screen, res.reward, res.terminal)
            self.observed.append(res.screen)
        self.root = child
        return child.reward, child.terminal, extra

    def plan_and_act(self):
        """Returns ``(action, reward, terminal, sim_calls)`` for one decision."""
        used = self.plan()
        action = self.best_action()
        reward, terminal, extra = self.act(action)
        return action, reward, terminal, used + extra


@dataclass
class EpisodeLog:
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    sim_calls: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    screens: list = field(default_factory=list)
    truncated: bool = False

    @property
    def score(self) -> float:
        return float(math.fsum(self.rewards))

    @property
    def total_sim_calls(self) -> int:
        return int(sum(self.sim_calls))

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i, (a, r, c) in enumerate(zip(self.actions, self.rewards, self.sim_calls)):
                fh.write(json.dumps({"step": i, "action": a, "reward": r, "sim_calls": c}) + "\n")


def run_episode(env, config: PlannerConfig, extractor, rng: np.random.Generator, *,
                training: bool = True, total_budget: int | None = None) -> EpisodeLog:
    """Play one episode: reset, then plan-and-act until terminal or the action cap.

    ``total_budget`` (training only) stops the episode once fewer than one
    decision's worth of simulator calls remain.
    """
    planner = Planner(env, extractor, config, rng)
    root = planner.reset()
    log = EpisodeLog()
    cap = config.max_train_actions if training else config.max_eval_actions
    spent = 0
    terminal = root.terminal
    while not terminal and len(log.actions) < cap:
        if total_budget is not None and total_budget - spent < config.budget:
            log.truncated = True
            break
        start = time.perf_counter()
        action, reward, terminal, used = planner.plan_and_act()
        log.wall_times.append(time.perf_counter() - start)
        spent += used
        log.actions.append(action)
        log.rewards.append(reward)
        log.sim_calls.append(used)
    log.screens = planner.observed
    return log
