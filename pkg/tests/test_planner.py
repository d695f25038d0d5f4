import json

import numpy as np
import pytest

from helpers import BanditEnv, PathEnv, TerminalEnv, optimal_return
from olive.bandit import BanditConfig, NodeStats
from olive.env import ChainMDP, GemRooms
from olive.features import TileExtractor
from olive.planner import BudgetCounter, Planner, PlannerConfig, run_episode

STRATEGIES = ("uniform", "max", "ucb1", "ttts")


def planner(env, strategy="uniform", budget=100, gamma=0.99, seed=0):
    cfg = PlannerConfig(gamma=gamma, budget=budget, bandit=BanditConfig(strategy=strategy))
    p = Planner(env, TileExtractor(), cfg, np.random.default_rng(seed))
    p.reset()
    return p


def test_rollout_at_terminal_returns_zero():
    p = planner(BanditEnv([5.0]))
    p.plan()
    child = p.root.children[0]
    before = [NodeStats(s.n, s.mean, s.var, s.q_max) for s in child.stats]
    assert p.rollout(child, 1) == 0.0
    assert child.stats == before


def test_single_step_hand_trace():
    p = planner(BanditEnv([5.0]), budget=1)
    used = p.plan()
    s = p.root.stats[0]
    assert used == 1
    assert (s.n, s.mean, s.var, s.q_max) == (1, 5.0, 0.2 / 2 + (5 - 0) * (5 - 5) / 2, 5.0)


def test_gamma_zero_immediate_reward_only():
    p = planner(PathEnv([1.0, 2.0, 4.0], n_actions=1), gamma=0.0)
    p.plan()
    assert p.root.stats[0].q_max == 1.0


def test_discounted_return_of_single_path():
    rewards = [0.5, -1.0, 2.0, 0.0, 3.0]
    p = planner(PathEnv(rewards, n_actions=1), gamma=0.9)
    p.plan()
    expected = sum(0.9**t * r for t, r in enumerate(rewards))
    assert abs(p.root.stats[0].q_max - expected) < 1e-12


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_two_armed_bandit(strategy):
    p = planner(BanditEnv([0.0, 1.0]), strategy)
    assert p.plan_and_act()[0] == 1


def test_budget_one_consumes_one_call():
    env = GemRooms(6, 1)
    p = planner(env, budget=1)
    before = env.sim_calls
    assert p.plan() == 1 and env.sim_calls - before == 1


def test_budget_counter():
    b = BudgetCounter(2)
    b.spend()
    b.spend()
    assert (b.remaining, b.consumed) == (0, 2)
    with pytest.raises(RuntimeError):
        b.spend()


def test_truncation_keeps_child_stats():
    p = planner(GemRooms(6, 1), "ttts")
    p.plan()
    action = p.best_action()
    child = p.root.children[action]
    kept = list(child.stats)
    grandchildren = list(child.children)
    p.act(action)
    assert p.root is child and p.root.stats == kept and p.root.children == grandchildren


def test_best_action_uses_q_max_and_excludes_unvisited():
    p = planner(BanditEnv([0.0, 0.0, 0.0]))
    p.root.children = [None, object(), object()]
    p.root.stats = [NodeStats.initial(), NodeStats(3, 0.1, 0.2, 0.5), NodeStats(9, 0.3, 0.2, 0.4)]
    assert p.best_action() == 1
    # equal best returns: the more explored action wins, then the lower index
    p.root.stats = [NodeStats.initial(), NodeStats(3, 0.0, 0.2, 0.5), NodeStats(9, 0.0, 0.2, 0.5)]
    assert p.best_action() == 2
    p.root.stats = [NodeStats.initial(), NodeStats(4, 0.0, 0.2, 0.5), NodeStats(4, 0.0, 0.2, 0.5)]
    assert p.best_action() == 1


def test_all_unvisited_uniform_choice():
    p = planner(BanditEnv([0.0, 0.0, 0.0]))
    picks = {p.best_action() for _ in range(60)}
    assert picks == {0, 1, 2}


def test_pruned_nodes_stay_frozen_within_epoch():
    p = planner(GemRooms(6, 1), "uniform", budget=400)
    p.epoch += 1
    p.close.clear()
    p.budget = BudgetCounter(400)
    frozen = {}
    while p.budget.remaining and not p.root.solved:
        p.rollout(p.root, 0)
        stack = [p.root]
        while stack:
            node = stack.pop()
            if node.pruned and node.epoch == p.epoch:
                snap = (list(node.stats), [id(c) for c in node.children])
                assert frozen.setdefault(id(node), snap) == snap
            stack.extend(c for c in node.children if c is not None)
    assert frozen


def test_close_list_reset_each_decision():
    p = planner(GemRooms(6, 1))
    p.plan()
    assert p.close.layers
    epoch = p.epoch
    p.act(p.best_action())
    p.plan()
    assert p.epoch == epoch + 1 and p.root.epoch == p.epoch


def test_plan_rejects_terminal_root():
    p = planner(BanditEnv([1.0]))
    p.plan_and_act()
    with pytest.raises(RuntimeError):
        p.plan()


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_chain5_any_strategy(strategy):
    log = run_episode(ChainMDP(5), PlannerConfig(bandit=BanditConfig(strategy=strategy)), TileExtractor(),
                      np.random.default_rng(0))
    assert log.score == 1.0


def test_action_cap_and_accounting():
    env = GemRooms(6, 1, gems=3)
    cfg = PlannerConfig(budget=5, max_train_actions=7)
    before = env.sim_calls
    log = run_episode(env, cfg, TileExtractor(), np.random.default_rng(1))
    assert len(log.actions) <= 7
    assert log.total_sim_calls == env.sim_calls - before
    assert all(c <= cfg.budget for c in log.sim_calls)


def test_total_budget_stops_episode():
    env = GemRooms(6, 2)
    cfg = PlannerConfig(budget=50)
    log = run_episode(env, cfg, TileExtractor(), np.random.default_rng(1), total_budget=420)
    assert log.total_sim_calls <= 420
    assert log.truncated or env.terminal


def test_terminal_at_reset():
    log = run_episode(TerminalEnv([1.0]), PlannerConfig(), TileExtractor(), np.random.default_rng(0))
    assert log.actions == [] and log.score == 0.0


def test_screens_include_planning_observations():
    log = run_episode(ChainMDP(5), PlannerConfig(), TileExtractor(), np.random.default_rng(0))
    assert len(log.screens) >= len(log.actions) + 1
    assert len(log.screens) == 1 + log.total_sim_calls


def test_gem_rooms_matches_oracle():
    best = optimal_return(GemRooms(6, 1))
    scores = [run_episode(GemRooms(6, 1), PlannerConfig(), TileExtractor(), np.random.default_rng(s)).score
              for s in range(5)]
    assert sum(s == best for s in scores) >= 4


def test_jsonl(tmp_path):
    log = run_episode(ChainMDP(4), PlannerConfig(), TileExtractor(), np.random.default_rng(0))
    path = tmp_path / "ep.jsonl"
    log.to_jsonl(path)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert [x["action"] for x in lines] == log.actions
    assert [x["step"] for x in lines] == list(range(len(log.actions)))
    assert sum(x["sim_calls"] for x in lines) == log.total_sim_calls


def test_config_validation():
    for bad in (dict(gamma=1.5), dict(gamma=-0.1), dict(budget=0), dict(max_train_actions=0)):
        with pytest.raises(ValueError):
            PlannerConfig(**bad)
