"""Experiment configuration: INI-style ``key = value`` files with section headers."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from ..bandit import STRATEGIES, BanditConfig
from ..dataset import DatasetConfig
from ..env import make_env
from ..planner import PlannerConfig
from ..vae import VaeConfig

AGENT_KINDS = ("rollout-iw", "vae-iw", "passive-olive", "active-olive")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    """Parsed agent string such as ``vae-iw+ann+ttts`` or ``active-olive``."""

    name: str
    kind: str
    anneal: bool
    strategy: str

    @property
    def learns(self) -> bool:
        return self.kind != "rollout-iw"

    @property
    def online(self) -> bool:
        return self.kind.endswith("olive")


def parse_agent(name: str) -> AgentSpec:
    """``kind[+ann][+<strategy>]``.

    Olive variants always anneal and default to TTTS; the baselines default
    to uniform rollouts and anneal only with ``+ann``.
    """
    parts = [p.strip() for p in name.strip().split("+")]
    kind, mods = parts[0], parts[1:]
    if kind not in AGENT_KINDS:
        raise ConfigError(f"unknown agent {kind!r}; choose from {AGENT_KINDS}")
    online = kind.endswith("olive")
    anneal, strategy = online, "ttts" if online else "uniform"
    for m in mods:
        if m == "ann":
            anneal = True
        elif m in STRATEGIES:
            strategy = m
        else:
            raise ConfigError(f"unknown agent modifier {m!r} in {name!r}")
    return AgentSpec(name.strip(), kind, anneal, strategy)


@dataclass
class ExperimentConfig:
    envs: list = field(default_factory=lambda: ["themed_rooms:G=8,N=4"])
    agents: list = field(default_factory=lambda: ["vae-iw+ann+ttts", "active-olive"])
    budget: int = 100_000
    max_episodes: int = 30
    seeds: int = 5
    master_seed: int = 0
    eval_episodes: int = 10
    alpha: float = 0.05
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    grid: int = 8
    levels: int = 8

    def __post_init__(self):
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.budget < 1 or self.max_episodes < 1 or self.eval_episodes < 0:
            raise ConfigError("budget and max_episodes must be positive, eval_episodes >= 0")
        for a in self.agents:
            parse_agent(a)
        for e in self.envs:
            try:
                make_env(e)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc

    def agent_specs(self) -> list[AgentSpec]:
        return [parse_agent(a) for a in self.agents]

    def planner_for(self, agent: AgentSpec) -> PlannerConfig:
        return replace(self.planner, bandit=replace(self.planner.bandit, strategy=agent.strategy))

    def vae_for(self, agent: AgentSpec) -> VaeConfig:
        # without annealing tau stays at its final value for the whole run
        return self.vae if agent.anneal else replace(self.vae, tau_max=self.vae.tau_min)


def _coerce(cls, section: configparser.SectionProxy, skip=()):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in known:
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        default = getattr(cls(), key) if key not in ("bandit",) else None
        try:
            if isinstance(default, bool):
                kwargs[key] = section.getboolean(key)
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {key}: {exc}") from exc
    return kwargs


def parse_config(text: str) -> ExperimentConfig:
    """Build an ``ExperimentConfig`` from INI text.

    Sections: ``experiment``, ``planner``, ``features``, ``vae``, ``dataset``.
    ``envs`` and ``agents`` are ``;``-separated lists.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(cp.sections()) - {"experiment", "planner", "features", "vae", "dataset"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    try:
        kw = {}
        if cp.has_section("experiment"):
            sec = cp["experiment"]
            for key in sec:
                if key in ("envs", "agents"):
                    kw[key] = [x.strip() for x in sec[key].split(";") if x.strip()]
                elif key == "alpha":
                    kw[key] = float(sec[key])
                elif key in ("budget", "max_episodes", "seeds", "master_seed", "eval_episodes"):
                    kw[key] = int(float(sec[key]))
                else:
                    raise ConfigError(f"[experiment] unknown key {key!r}")
        if cp.has_section("planner"):
            sec = cp["planner"]
            bandit_keys = {"sigma0", "alpha", "strategy"}
            pk = _coerce(PlannerConfig, sec, skip=bandit_keys)
            bk = {}
            for key in bandit_keys & set(sec):
                bk[key] = sec[key].strip() if key == "strategy" else float(sec[key])
            kw["planner"] = PlannerConfig(**pk, bandit=BanditConfig(**bk))
        if cp.has_section("features"):
            sec = cp["features"]
            for key in sec:
                if key not in ("grid", "levels"):
                    raise ConfigError(f"[features] unknown key {key!r}")
                kw[key] = int(sec[key])
        if cp.has_section("vae"):
            kw["vae"] = VaeConfig(**_coerce(VaeConfig, cp["vae"]))
        if cp.has_section("dataset"):
            kw["dataset"] = DatasetConfig(**_coerce(DatasetConfig, cp["dataset"]))
        return ExperimentConfig(**kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: ExperimentConfig) -> str:
    """Inverse of ``parse_config`` (used to store the resolved config next to results)."""
    p, b, v, d = cfg.planner, cfg.planner.bandit, cfg.vae, cfg.dataset
    lines = [
        "[experiment]",
        f"envs = {'; '.join(cfg.envs)}",
        f"agents = {'; '.join(cfg.agents)}",
        f"budget = {cfg.budget}",
        f"max_episodes = {cfg.max_episodes}",
        f"seeds = {cfg.seeds}",
        f"master_seed = {cfg.master_seed}",
        f"eval_episodes = {cfg.eval_episodes}",
        f"alpha = {cfg.alpha!r}",
        "",
        "[planner]",
        *(f"{f.name} = {getattr(p, f.name)!r}" for f in fields(p) if f.name != "bandit"),
        f"sigma0 = {b.sigma0!r}",
        f"alpha = {b.alpha!r}",
        f"strategy = {b.strategy}",
        "",
        "[features]",
        f"grid = {cfg.grid}",
        f"levels = {cfg.levels}",
        "",
        "[vae]",
        *(f"{f.name} = {getattr(v, f.name)!r}" for f in fields(v)),
        "",
        "[dataset]",
        *(f"{f.name} = {getattr(d, f.name)}" for f in fields(d)),
    ]
    return "\n".join(lines) + "\n"
