import csv
import functools
import itertools
import math
import statistics
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from olive.bandit import BanditConfig
from olive.dataset import DatasetConfig
from olive.env import make_env
from olive.harness import (
    ConfigError, EpisodeRecord, ExperimentConfig, RngStreams, build_win_loss, dump_config, emit_reports,
    mann_whitney_u, parse_agent, parse_config, read_scores, run_agent, summarize,
)
from olive.harness.cli import main
from olive.harness.report import write_scores
from olive.planner import PlannerConfig
from olive.vae import VaeConfig, save_checkpoint


def tiny_config(**kw):
    base = ExperimentConfig(
        envs=["gem_rooms:G=6,N=1"], agents=["rollout-iw"], budget=600, max_episodes=4, seeds=1,
        eval_episodes=2,
        planner=PlannerConfig(budget=50, max_train_actions=6, max_eval_actions=6),
        vae=VaeConfig(latent=16, epochs=2, batch_size=16),
        dataset=DatasetConfig(k=10, cap=30),
    )
    return replace(base, **kw)


# Mann-Whitney U ---------------------------------------------------------------

def brute_force(a, b):
    """Two-sided p by enumerating every relabeling of the pooled sample."""
    pooled = list(a) + list(b)
    n1 = len(a)

    def u_of(x, y):
        return sum((xi > yi) + 0.5 * (xi == yi) for xi in x for yi in y)

    center = n1 * len(b) / 2
    u = u_of(a, b)
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), n1):
        chosen = set(idx)
        x = [pooled[i] for i in idx]
        y = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        total += 1
        hits += abs(u_of(x, y) - center) >= abs(u - center) - 1e-9
    return u, hits / total


def test_identical_samples_p_one():
    assert mann_whitney_u([3.0] * 50, [3.0] * 50)[1] == 1.0
    assert mann_whitney_u(list(range(50)), list(range(50)))[1] == 1.0


def test_complete_separation():
    u, p = mann_whitney_u(range(1, 51), range(51, 101))
    assert u == 0 and p < 1e-9


def test_exact_matches_enumeration_n5():
    a, b = [1, 2, 3, 4, 5], [2, 3, 4, 5, 6]
    u, p = mann_whitney_u(a, b)
    u_ref, p_ref = brute_force(a, b)
    assert u == u_ref and abs(p - p_ref) < 1e-6


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=6), st.lists(st.integers(0, 4), min_size=1, max_size=6))
def test_exact_matches_enumeration_random(a, b):
    u, p = mann_whitney_u(a, b)
    u_ref, p_ref = brute_force(a, b)
    assert u == u_ref and abs(p - p_ref) < 1e-9


def test_normal_approximation_hand_value():
    # no ties: var = n1 n2 (n+1) / 12
    a, b = list(range(0, 40, 2)), list(range(1, 41, 2))
    u, p = mann_whitney_u(a, b)
    z = (abs(u - 200) - 0.5) / math.sqrt(20 * 20 * 41 / 12)
    assert u == 190 and abs(p - math.erfc(z / math.sqrt(2))) < 1e-15


def test_u_rejects_empty():
    with pytest.raises(ValueError):
        mann_whitney_u([], [1.0])


# win/loss tables ------------------------------------------------------------

def test_dominating_single_env():
    table = build_win_loss({("A", "e"): list(range(50, 100)), ("B", "e"): list(range(50))})
    assert table.count("A", "B")[:2] == (1, 0) and table.count("B", "A")[:2] == (0, 1)


def test_median_rule_needs_both():
    # same median, different spread: significant or not, never a win
    table = build_win_loss({("A", "e"): [0] * 20 + [5] * 10 + [10] * 20, ("B", "e"): [5] * 50})
    assert table.count("A", "B")[:2] == (0, 0)


score_lists = st.lists(st.integers(0, 6), min_size=3, max_size=12)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.tuples(st.sampled_from(["active-olive", "passive-olive", "vae-iw", "rollout-iw"]),
                                 st.sampled_from(["e1", "e2", "e3"])), score_lists, min_size=2))
def test_antisymmetry_portfolio_and_gaps(scores):
    table = build_win_loss(scores)
    for a in table.configs:
        for b in table.configs:
            if a != b:
                w, l, t = table.count(a, b)
                assert (l, w, t) == table.count(b, a)
    cells = set(scores)
    for a, b, env in table.gaps:
        assert (a, env) not in cells or (b, env) not in cells
    if table.portfolio is not None:
        for other, (w, _) in table.portfolio.items():
            assert w >= max(table.count("active-olive", other)[0], table.count("passive-olive", other)[0])


def test_summary():
    s = summarize([4.0] * 50)
    assert (s["mean"], s["stderr"], s["max"]) == (4.0, 0.0, 4.0)
    xs = list(np.random.default_rng(0).normal(size=50))
    s = summarize(xs)
    direct = math.sqrt(sum((x - statistics.fmean(xs)) ** 2 for x in xs) / 49) / math.sqrt(50)
    assert abs(s["stderr"] - direct) < 1e-12


# records and reports --------------------------------------------------------

def sample_records():
    return [EpisodeRecord(c, "gem_rooms:G=6,N=1", s, "eval", i, float((i * 7 + s) % 5) + (c == "B"), 100 * i, i, 0.01)
            for c in ("A", "B") for s in range(2) for i in range(5)]


def test_csv_roundtrip(tmp_path):
    recs = sample_records()
    write_scores(recs, tmp_path / "scores.csv")
    back = read_scores(tmp_path / "scores.csv")
    assert [replace(r, wall_time=0.0) for r in recs] == back


def test_emit_reports_files(tmp_path):
    table = emit_reports(sample_records(), tmp_path, figures=True)
    for name in ("scores.csv", "timing.csv", "summary.csv", "winloss.csv", "report.txt", "scores.png"):
        assert (tmp_path / name).exists(), name
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["config"] for r in rows} == {"A", "B"} and all(r["n"] == "10" for r in rows)
    assert table.configs == ["A", "B"]


def test_emit_reports_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_reports(sample_records(), blocker / "out", figures=False)


# config ---------------------------------------------------------------------

def test_parse_agent_variants():
    assert parse_agent("vae-iw") == parse_agent("vae-iw")
    a = parse_agent("vae-iw+ann+ttts")
    assert (a.kind, a.anneal, a.strategy) == ("vae-iw", True, "ttts")
    a = parse_agent("vae-iw")
    assert (a.anneal, a.strategy) == (False, "uniform")
    a = parse_agent("active-olive")
    assert (a.anneal, a.strategy, a.online) == (True, "ttts", True)
    assert not parse_agent("rollout-iw").learns
    for bad in ("dqn", "vae-iw+fast"):
        with pytest.raises(ConfigError):
            parse_agent(bad)


def test_config_roundtrip():
    cfg = tiny_config(agents=["vae-iw+ann", "active-olive"],
                      planner=PlannerConfig(budget=77, bandit=BanditConfig(sigma0=0.3, strategy="ucb1")))
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "[experiment]\nseeds = 0\n",
    "[experiment]\nbudget = -5\n",
    "[experiment]\nagents = rollout-iw; dqn\n",
    "[experiment]\nenvs = pong\n",
    "[experiment]\nfoo = 1\n",
    "[planner]\ngamma = 2\n",
    "[vae]\nlatent = many\n",
    "[dataset]\nk = 10\ncap = 5\n",
    "[mystery]\n",
    "no section header",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_vae_annealing_per_mode():
    cfg = ExperimentConfig()
    ann = cfg.vae_for(parse_agent("vae-iw+ann"))
    plain = cfg.vae_for(parse_agent("vae-iw"))
    assert (ann.tau_max, ann.tau_min) == (5.0, 0.5)
    assert (plain.tau_max, plain.tau_min) == (0.5, 0.5)


def test_rng_streams_independent():
    s = RngStreams(3)
    assert s("bandit", 1).integers(1 << 30) == RngStreams(3)("bandit", 1).integers(1 << 30)
    draws = {int(s(name).integers(1 << 62)) for name in ("env", "bandit", "vae-init", "vae-noise", "dataset")}
    assert len(draws) == 5


# runs -----------------------------------------------------------------------

def test_olive_budget_accounting_and_frozen_eval():
    cfg = tiny_config(max_episodes=30)
    r = run_agent("gem_rooms:G=6,N=1", "passive-olive", cfg, seed=0)
    assert r.train_calls <= cfg.budget and r.train_calls + cfg.planner.budget > cfg.budget
    train = [e for e in r.episodes if e.phase == "train"]
    assert sum(e.sim_calls for e in train) == r.train_calls
    assert len(r.scores()) == cfg.eval_episodes and r.checksum == r.model.checksum()
    assert len(r.dataset) <= cfg.dataset.cap and not r.degenerate


def test_olive_stops_at_max_episodes():
    cfg = tiny_config(budget=10_000, max_episodes=2)
    r = run_agent("gem_rooms:G=6,N=1", "active-olive", cfg, seed=0, evaluate_after=False)
    assert len([e for e in r.episodes if e.phase == "train"]) == 2
    assert {ep for ep, _, _, _ in r.losses} == {0, 1}


def test_olive_degenerate_budget():
    cfg = tiny_config(budget=10)
    r = run_agent("gem_rooms:G=6,N=1", "active-olive", cfg, seed=0)
    assert r.degenerate and r.model is None and len(r.scores()) == cfg.eval_episodes


def test_vae_iw_reservoir_dataset():
    cfg = tiny_config(dataset=DatasetConfig(k=10, cap=10_000))
    r = run_agent("gem_rooms:G=6,N=1", "vae-iw+ann", cfg, seed=0, evaluate_after=False)
    observed = sum(e.sim_calls + 1 for e in r.episodes if e.phase == "train")
    assert len(r.dataset) == observed
    cfg = tiny_config(dataset=DatasetConfig(k=10, cap=25))
    r = run_agent("gem_rooms:G=6,N=1", "vae-iw", cfg, seed=0, evaluate_after=False)
    assert len(r.dataset) == 25 and len(r.losses) == cfg.vae.epochs


def room_lookup(desc):
    env = make_env(desc)
    table = {}
    for room in range(env.rooms):
        for r in range(env.size):
            for c in range(env.size):
                for mask in range(1 << len(env.layouts[room].gems)):
                    table[env.render_state(room, r, c, mask).tobytes()] = env.theme(room)
    return table


@functools.lru_cache(maxsize=None)
def themed_active_runs():
    desc = "themed_rooms:G=8,N=3"
    cfg = ExperimentConfig(
        envs=[desc], agents=["active-olive"], budget=6000, max_episodes=30, seeds=5, eval_episodes=0,
        planner=PlannerConfig(budget=100, max_train_actions=200),
        vae=VaeConfig(latent=32, epochs=3, batch_size=32), dataset=DatasetConfig(k=50, cap=300),
    )
    return desc, [run_agent(desc, "active-olive", cfg, seed=s, evaluate_after=False) for s in range(5)]


def test_active_dataset_spans_themes():
    desc, runs = themed_active_runs()
    lookup = room_lookup(desc)
    themes = [len({lookup[s.tobytes()] for s in r.dataset.screens}) for r in runs]
    assert statistics.median(themes) >= 2


def test_scores_csv_reproducible(tmp_path):
    cfg = tiny_config(agents=["rollout-iw", "passive-olive"])
    outs = []
    for name in ("a", "b"):
        recs = [e for a in cfg.agents for e in run_agent(cfg.envs[0], a, cfg, seed=0).episodes]
        write_scores(recs, tmp_path / f"{name}.csv")
        outs.append((tmp_path / f"{name}.csv").read_bytes())
    assert outs[0] == outs[1]


# CLI ------------------------------------------------------------------------

def test_cli_run_report_eval(tmp_path, capsys):
    cfg = tiny_config(agents=["rollout-iw", "vae-iw"])
    (tmp_path / "exp.ini").write_text(dump_config(cfg))
    out = tmp_path / "out"
    assert main(["run", "--config", str(tmp_path / "exp.ini"), "--out", str(out)]) == 0
    for name in ("scores.csv", "summary.csv", "winloss.csv", "report.txt", "training.csv", "config.ini",
                 "scores.png", "training.png"):
        assert (out / name).exists(), name
    first = (out / "scores.csv").read_bytes()
    assert main(["report", "--in", str(out), "--no-figures"]) == 0
    assert (out / "scores.csv").read_bytes() == first
    ckpts = sorted((out / "checkpoints").iterdir())
    assert ckpts
    assert main(["eval", "--checkpoint", str(ckpts[0]), "--config", str(tmp_path / "exp.ini"),
                 "--env", "gem_rooms:G=6,N=1", "--episodes", "1", "--max-actions", "3"]) == 0
    assert "episode 0" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nseeds = 0\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 3
    assert main(["report", "--in", str(tmp_path / "nowhere")]) == 3
    junk = tmp_path / "junk.olv"
    junk.write_bytes(b"garbage")
    assert main(["eval", "--checkpoint", str(junk)]) == 3
