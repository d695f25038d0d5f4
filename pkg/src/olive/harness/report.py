"""CSV and plain-text outputs of an experiment."""

from __future__ import annotations

import csv
import os
from collections import defaultdict

from .experiment import EpisodeRecord
from .stats import WinLossTable, build_win_loss, summarize

SCORE_FIELDS = ("config", "env", "seed", "phase", "episode", "score", "sim_calls", "actions")
TIMING_FIELDS = ("config", "env", "seed", "phase", "episode", "wall_time")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_scores(records, path) -> None:
    """Deterministic per-episode table.  Wall time goes to a separate file."""
    _write_csv(path, SCORE_FIELDS, [
        (r.config, r.env, r.seed, r.phase, r.episode, repr(float(r.score)), r.sim_calls, r.actions)
        for r in records
    ])


def write_timing(records, path) -> None:
    _write_csv(path, TIMING_FIELDS, [
        (r.config, r.env, r.seed, r.phase, r.episode, f"{r.wall_time:.6f}") for r in records
    ])


def read_scores(path) -> list[EpisodeRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EpisodeRecord(row["config"], row["env"], int(row["seed"]), row["phase"],
                                     int(row["episode"]), float(row["score"]), int(row["sim_calls"]),
                                     int(row["actions"]), 0.0))
    return out


def eval_scores(records) -> dict:
    """``{(config, env): [scores]}`` over evaluation episodes."""
    groups = defaultdict(list)
    for r in records:
        if r.phase == "eval":
            groups[(r.config, r.env)].append(r.score)
    return dict(groups)


def write_summary(records, path) -> list:
    rows = []
    for (config, env), scores in sorted(eval_scores(records).items()):
        s = summarize(scores)
        rows.append((config, env, s["n"], repr(s["mean"]), repr(s["stderr"]), repr(float(s["max"]))))
    _write_csv(path, ("config", "env", "n", "mean", "stderr", "max"), rows)
    return rows


def write_winloss(table: WinLossTable, path) -> None:
    rows = [(c.a, c.b, c.env, c.outcome, repr(c.u), repr(c.p)) for c in table.comparisons]
    for a, b, env in table.gaps:
        rows.append((a, b, env, "gap", "", ""))
    _write_csv(path, ("config_a", "config_b", "env", "outcome", "u", "p"), rows)


def write_training(results, path) -> None:
    rows = []
    for r in results:
        for episode, epoch, loss, size in r.losses:
            rows.append((r.agent, r.env, r.seed, episode, epoch, repr(float(loss)), size))
    _write_csv(path, ("config", "env", "seed", "episode", "epoch", "loss", "dataset_size"), rows)


def render_text(table: WinLossTable, summary_rows) -> str:
    lines = ["Evaluation scores (mean +- stderr, max)", ""]
    for config, env, n, mean, stderr, mx in summary_rows:
        lines.append(f"  {config:<24} {env:<28} n={n:<3} {float(mean):8.3f} +- {float(stderr):.3f}  max {float(mx):g}")
    lines += ["", "Wins/losses over environments (row vs column, Mann-Whitney U, two-sided)", ""]
    configs = table.configs
    width = max([len(c) for c in configs] + [8])
    lines.append(" " * (width + 2) + "  ".join(f"{c:>{width}}" for c in configs))
    for a in configs:
        cells = []
        for b in configs:
            if a == b:
                cells.append(f"{'-':>{width}}")
            else:
                w, l, _ = table.count(a, b)
                cells.append(f"{f'{w}/{l}':>{width}}")
        lines.append(f"{a:<{width}}  " + "  ".join(cells))
    if table.portfolio:
        lines += ["", "Portfolio (either Olive variant wins):"]
        for other, (w, l) in sorted(table.portfolio.items()):
            lines.append(f"  vs {other}: {w} wins, {l} losses")
    if table.gaps:
        lines += ["", f"Missing comparisons: {len(table.gaps)}"]
    return "\n".join(lines) + "\n"


def emit_reports(records, out_dir, results=None, alpha: float = 0.05, figures: bool = True,
                 write_raw: bool = True) -> WinLossTable:
    """Write scores/timing/summary/winloss CSVs, report.txt and (optionally) figures.

    With ``write_raw=False`` the per-episode files already in ``out_dir`` are
    left alone and only the derived outputs are regenerated.
    """
    os.makedirs(out_dir, exist_ok=True)
    if write_raw:
        write_scores(records, os.path.join(out_dir, "scores.csv"))
        write_timing(records, os.path.join(out_dir, "timing.csv"))
    if results is not None:
        write_training(results, os.path.join(out_dir, "training.csv"))
    summary = write_summary(records, os.path.join(out_dir, "summary.csv"))
    table = build_win_loss(eval_scores(records), alpha)
    write_winloss(table, os.path.join(out_dir, "winloss.csv"))
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(render_text(table, summary))
    if figures:
        from .plotting import plot_all

        plot_all(out_dir)
    return table
