"""Report generation from trace directories: tables, CSVs and figures.

Reads the per-seed trace files written by the runner, recomputes the
seed-averaged regret series with 95% confidence bands, writes them as a
plot-ready CSV, prints a summary table, and renders the per-round and
cumulative regret curves to PNG files next to the CSV.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .runner import load_traces, write_aggregate
from .simenv import bayes_regret

__all__ = ["make_report"]


def _summary_lines(summaries) -> list[str]:
    width = max(len("agent"), max(len(s.agent) for s in summaries))
    lines = [
        f"{'agent':<{width}}  {'seeds':>5}  {'final cum. regret':>18}  {'mean/round':>10}"
    ]
    for s in sorted(summaries, key=lambda s: s.mean_cumulative[-1]):
        lines.append(
            f"{s.agent:<{width}}  {s.n_seeds:>5}  "
            f"{s.mean_cumulative[-1]:>18.4f}  {s.mean_regret.mean():>10.4f}"
        )
    return lines


def _plot_series(summaries, out_dir: str) -> list[str]:
    written = []

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for s in summaries:
        ax.plot(s.t, s.mean_regret, label=s.agent)
        ax.fill_between(s.t, s.ci_low, s.ci_high, alpha=0.2)
    ax.set_xlabel("round")
    ax.set_ylabel("mean per-round regret")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "regret_per_round.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for s in summaries:
        ax.plot(s.t, s.mean_cumulative, label=s.agent)
    ax.set_xlabel("round")
    ax.set_ylabel("mean cumulative regret")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "regret_cumulative.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written


def make_report(trace_dir: str, out_dir: str | None = None) -> dict:
    """Aggregate a trace directory into CSV, figures and a printed table.

    Returns a dict with the summary lines and written file paths.  Raises on
    empty directories and on traces from mixed experiment settings.
    """
    out = out_dir or trace_dir
    os.makedirs(out, exist_ok=True)
    by_agent = load_traces(trace_dir)
    summaries = [bayes_regret(traces) for _, traces in sorted(by_agent.items())]

    aggregate_path = os.path.join(out, "aggregate.csv")
    write_aggregate(aggregate_path, by_agent)
    figures = _plot_series(summaries, out)
    lines = _summary_lines(summaries)
    return {
        "summary": lines,
        "aggregate_csv": aggregate_path,
        "figures": figures,
        "agents": {s.agent: float(s.mean_cumulative[-1]) for s in summaries},
    }
