"""Command-line entry point: ``olive run | eval | report``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from ..env import make_env
from ..vae import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, dump_config, load_config, parse_agent
from .experiment import RunResult, evaluate, run_experiment
from .report import emit_reports, read_scores
from .rng import RngStreams

log = logging.getLogger("olive")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        cfg = replace(cfg, seeds=args.seeds)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.ini"), "w") as fh:
        fh.write(dump_config(cfg))

    def progress(r: RunResult):
        scores = r.scores()
        mean = sum(scores) / len(scores) if scores else float("nan")
        log.info("%s %s seed=%d train_calls=%d eval_mean=%.3f", r.agent, r.env, r.seed, r.train_calls, mean)

    results = run_experiment(cfg, jobs=args.jobs, progress=progress)
    ckpt_dir = os.path.join(args.out, "checkpoints")
    for r in results:
        if r.model is not None:
            os.makedirs(ckpt_dir, exist_ok=True)
            save_checkpoint(r.model, os.path.join(ckpt_dir, f"{_safe(r.agent)}__{_safe(r.env)}__{r.seed}.olv"))
        if r.degenerate:
            log.warning("%s %s seed=%d: budget too small for one training episode", r.agent, r.env, r.seed)
    records = [e for r in results for e in r.episodes]
    emit_reports(records, args.out, results, cfg.alpha, figures=not args.no_figures)
    print(open(os.path.join(args.out, "report.txt")).read(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = replace(cfg, eval_episodes=args.episodes,
                  planner=replace(cfg.planner, max_eval_actions=args.max_actions or cfg.planner.max_eval_actions))
    if model.latent != cfg.vae.latent:
        cfg = replace(cfg, vae=replace(cfg.vae, latent=model.latent))
    agent = parse_agent(f"vae-iw+{args.strategy}")
    try:
        env = make_env(args.env)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = RunResult(agent.name, args.env, args.seed, model)
    evaluate(env, model, cfg, agent, RngStreams(args.seed), result)
    for r in result.episodes:
        print(f"episode {r.episode}: score {r.score:g}  actions {r.actions}  sim_calls {r.sim_calls}")
    scores = result.scores()
    if scores:
        print(f"mean {sum(scores) / len(scores):.3f} over {len(scores)} episodes")
    return EXIT_OK


def cmd_report(args) -> int:
    path = os.path.join(args.indir, "scores.csv")
    records = read_scores(path)
    training = os.path.join(args.indir, "training.csv")
    emit_reports(records, args.indir, None, args.alpha, figures=not args.no_figures, write_raw=False)
    if not os.path.exists(training):
        log.info("no training.csv in %s; skipping loss curves", args.indir)
    print(open(os.path.join(args.indir, "report.txt")).read(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="olive", description="Online representation learning for width-based planning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate every configured agent")
    run.add_argument("--config", required=True)
    run.add_argument("--seeds", type=int, default=None, help="override the number of seeds")
    run.add_argument("--out", default="results")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.add_argument("--no-figures", action="store_true")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="evaluate a saved VAE checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--config", default=None)
    ev.add_argument("--env", default="themed_rooms:G=8,N=4")
    ev.add_argument("--episodes", type=int, default=10)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--strategy", default="ttts", choices=("uniform", "max", "ucb1", "ttts"))
    ev.add_argument("--max-actions", type=int, default=None)
    ev.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="rebuild summaries, tables and figures from a run directory")
    rep.add_argument("--in", dest="indir", required=True)
    rep.add_argument("--alpha", type=float, default=0.05)
    rep.add_argument("--no-figures", action="store_true")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed checkpoint or score files are input errors too
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
