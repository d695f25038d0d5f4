"""Training/evaluation drivers for the online agent and the offline baselines."""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..dataset import ScreenDataset, reservoir_update
from ..env import make_env
from ..features import TileExtractor, VaeExtractor
from ..planner import run_episode
from ..vae import BinaryVAE, train
from .config import AgentSpec, ExperimentConfig, parse_agent
from .rng import RngStreams


@dataclass(frozen=True)
class EpisodeRecord:
    config: str
    env: str
    seed: int
    phase: str  # "train" or "eval"
    episode: int
    score: float
    sim_calls: int
    actions: int
    wall_time: float  # mean seconds per action; informational only


@dataclass
class RunResult:
    agent: str
    env: str
    seed: int
    model: BinaryVAE | None
    episodes: list = field(default_factory=list)
    losses: list = field(default_factory=list)  # (episode, epoch, loss, dataset size)
    dataset: ScreenDataset | None = None
    train_calls: int = 0
    degenerate: bool = False
    checksum: int | None = None

    def scores(self, phase: str = "eval") -> list[float]:
        return [r.score for r in self.episodes if r.phase == phase]


def _record(agent, env, seed, phase, episode, log) -> EpisodeRecord:
    wall = statistics.fmean(log.wall_times) if log.wall_times else 0.0
    return EpisodeRecord(agent, env, seed, phase, episode, log.score, log.total_sim_calls,
                         len(log.actions), wall)


def evaluate(env, model, cfg: ExperimentConfig, agent: AgentSpec, streams: RngStreams,
             result: RunResult) -> None:
    """Play ``cfg.eval_episodes`` episodes with frozen features; no dataset or weight updates."""
    if model is None:
        extractor = TileExtractor(cfg.grid, cfg.levels)
    else:
        extractor = VaeExtractor(model, cfg.vae.threshold)
    pcfg = cfg.planner_for(agent)
    before = model.checksum() if model is not None else None
    for i in range(cfg.eval_episodes):
        log = run_episode(env, pcfg, extractor, streams("eval", i), training=False)
        result.episodes.append(_record(agent.name, result.env, result.seed, "eval", i, log))
    if model is not None:
        after = model.checksum()
        if after != before:
            raise RuntimeError("VAE weights changed during evaluation")
        result.checksum = after


def run_olive(env_desc: str, agent: AgentSpec, cfg: ExperimentConfig, seed: int,
              evaluate_after: bool = True) -> RunResult:
    """Online loop: plan an episode, add k screens, retrain, switch to learned features.

    The first episode uses tile features.  Training stops when the remaining
    budget cannot pay for one more decision or after ``max_episodes``; the
    dataset is then topped up from the final episode and the model retrained.
    """
    streams = RngStreams(seed)
    env = make_env(env_desc)
    vcfg, pcfg, dcfg = cfg.vae_for(agent), cfg.planner_for(agent), cfg.dataset
    if agent.kind == "active-olive":
        dcfg = type(dcfg)(dcfg.k, dcfg.cap, "active", streams.seed_int("score"))
    else:
        dcfg = type(dcfg)(dcfg.k, dcfg.cap, "passive", dcfg.score_seed)
    model = BinaryVAE(vcfg.latent, streams("vae-init"))
    result = RunResult(agent.name, env_desc, seed, model, dataset=ScreenDataset(dcfg.cap))
    ds = result.dataset
    extractor = TileExtractor(cfg.grid, cfg.levels)
    trained = False
    episode = 0
    while episode < cfg.max_episodes and cfg.budget - result.train_calls >= pcfg.budget:
        log = run_episode(env, pcfg, extractor, streams("bandit", episode), training=True,
                          total_budget=cfg.budget - result.train_calls)
        result.train_calls += log.total_sim_calls
        result.episodes.append(_record(agent.name, env_desc, seed, "train", episode, log))
        scorer = model if trained else None
        ds.add_episode(log.screens, episode, dcfg, streams("dataset", episode), scorer,
                       vcfg.tau_min, vcfg.beta)
        last = episode + 1 >= cfg.max_episodes or cfg.budget - result.train_calls < pcfg.budget
        if last:
            ds.top_up(log.screens, episode, dcfg, streams("dataset-tail"), scorer, vcfg.tau_min, vcfg.beta)
        curve = train(ds.array(), model, vcfg, streams("vae-noise", episode))
        result.losses += [(episode, i, loss, len(ds)) for i, loss in enumerate(curve)]
        trained = True
        extractor = VaeExtractor(model, vcfg.threshold)
        episode += 1
    if not trained:
        result.degenerate = True
        result.model = None
    if evaluate_after:
        evaluate(env, result.model, cfg, agent, streams, result)
    return result


def run_vae_iw(env_desc: str, agent: AgentSpec, cfg: ExperimentConfig, seed: int,
               evaluate_after: bool = True) -> RunResult:
    """Offline baseline: play with tile features until the budget is spent,
    reservoir-sample ``cap`` of all observed screens, train once, evaluate."""
    streams = RngStreams(seed)
    env = make_env(env_desc)
    vcfg, pcfg = cfg.vae_for(agent), cfg.planner_for(agent)
    result = RunResult(agent.name, env_desc, seed, None)
    extractor = TileExtractor(cfg.grid, cfg.levels)
    reservoir, seen = [], 0
    res_rng = streams("dataset")
    episode = 0
    while cfg.budget - result.train_calls >= pcfg.budget:
        log = run_episode(env, pcfg, extractor, streams("bandit", episode), training=True,
                          total_budget=cfg.budget - result.train_calls)
        if log.total_sim_calls == 0:
            break
        result.train_calls += log.total_sim_calls
        result.episodes.append(_record(agent.name, env_desc, seed, "train", episode, log))
        reservoir, seen = reservoir_update(
            ((episode, i, s) for i, s in enumerate(log.screens)), cfg.dataset.cap, res_rng, reservoir, seen)
        episode += 1
    ds = ScreenDataset(cfg.dataset.cap)
    for ep, step, s in reservoir:
        ds.extend([s], ep, [step])
    result.dataset = ds
    if len(ds):
        model = BinaryVAE(vcfg.latent, streams("vae-init"))
        curve = train(ds.array(), model, vcfg, streams("vae-noise", 0))
        result.losses += [(0, i, loss, len(ds)) for i, loss in enumerate(curve)]
        result.model = model
    else:
        result.degenerate = True
    if evaluate_after:
        evaluate(env, result.model, cfg, agent, streams, result)
    return result


def run_rollout_iw(env_desc: str, agent: AgentSpec, cfg: ExperimentConfig, seed: int,
                   evaluate_after: bool = True) -> RunResult:
    """No learning: evaluate the planner with tile features."""
    result = RunResult(agent.name, env_desc, seed, None)
    if evaluate_after:
        evaluate(make_env(env_desc), None, cfg, agent, RngStreams(seed), result)
    return result


def run_agent(env_desc: str, agent: AgentSpec | str, cfg: ExperimentConfig, seed: int,
              evaluate_after: bool = True) -> RunResult:
    agent = parse_agent(agent) if isinstance(agent, str) else agent
    if agent.online:
        return run_olive(env_desc, agent, cfg, seed, evaluate_after)
    if agent.kind == "vae-iw":
        return run_vae_iw(env_desc, agent, cfg, seed, evaluate_after)
    return run_rollout_iw(env_desc, agent, cfg, seed, evaluate_after)


def _job(args):
    env_desc, agent, cfg, seed = args
    return run_agent(env_desc, agent, cfg, seed)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, progress=None) -> list[RunResult]:
    """Every (env, agent, seed) run; seeds are ``master_seed + i``.  Output order is fixed."""
    tasks = [(e, a, cfg, cfg.master_seed + s) for e in cfg.envs for a in cfg.agents for s in range(cfg.seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_job, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_job(t))
            if progress:
                progress(results[-1])
    return results


def heldout_screens(env_desc: str, min_room: int = 1) -> np.ndarray:
    """Every (room >= min_room, position, gem mask) rendering of a rooms environment."""
    env = make_env(env_desc)
    out = []
    for room in range(min_room, env.rooms):
        layout = env.layouts[room]
        blocked = set(layout.hazards)
        for r in range(env.size):
            for c in range(env.size):
                if (r, c) in blocked:
                    continue
                for mask in range(1 << len(layout.gems)):
                    out.append(env.render_state(room, r, c, mask))
    return np.stack(out) if out else np.zeros((0, 32, 32), dtype=np.uint8)
