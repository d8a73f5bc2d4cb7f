"""Experiment runner: replications, trace files, aggregates and manifest.

Randomness derives from one replication seed through a fixed split: the
environment stream is ``SeedSequence(seed, spawn_key=(0,))``, agent ``i``'s
decision stream is ``spawn_key=(1, i)`` and its observation-noise stream
``spawn_key=(2, i)``, with ``i`` the agent's position in the config.  All
agents of a replication share one environment draw, so comparisons are
paired across agents.  Replications may run in separate processes; the merge
is deterministic (sorted by seed), and rerunning a (config, seed) pair
reproduces every output byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .agents import make_agent
from .config import ExperimentConfig
from .simenv import (
    TRACE_COLUMNS,
    RegretTrace,
    bayes_regret,
    gen_linear_env,
    gen_nonlinear_env,
    run_concurrent,
    run_sequential,
)

__all__ = ["run_experiment", "run_replication", "write_aggregate", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.json"


def _env_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def _agent_rng(seed: int, agent_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, agent_index)))


def _obs_rng(seed: int, agent_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, agent_index)))


def make_env(config: ExperimentConfig, seed: int):
    gen = gen_linear_env if config.env == "linear" else gen_nonlinear_env
    return gen(
        M=config.M,
        K=config.K,
        N=config.N,
        d_m=config.d_m,
        d_k=config.d_k,
        sigma_m=config.sigma_m,
        sigma_eps=config.sigma_eps,
        rng=_env_rng(seed),
    )


def run_replication(config: ExperimentConfig, seed: int) -> list[RegretTrace]:
    """Run every configured agent once against the seed's environment."""
    env = make_env(config, seed)
    traces = []
    for i, agent_cfg in enumerate(config.agents):
        agent = make_agent(agent_cfg, env, _agent_rng(seed, i), config.default_schedule)
        driver = run_concurrent if config.setting == "concurrent" else run_sequential
        trace = driver(env, agent, config.T, _obs_rng(seed, i), seed=seed)
        trace.validate()
        traces.append(trace)
    return traces


def _replication_worker(args: tuple[str, int]) -> tuple[int, list[RegretTrace]]:
    text, seed = args
    config = ExperimentConfig.from_text(text)
    return seed, run_replication(config, seed)


def _trace_filename(seed: int) -> str:
    return f"trace_seed{seed}.csv"


def _write_trace_file(path, traces: list[RegretTrace]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for trace in traces:
            writer.writerows(trace.to_csv_rows())


def write_aggregate(path, traces_by_agent: dict[str, list[RegretTrace]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "t", "mean_regret", "ci_low", "ci_high"])
        for agent in sorted(traces_by_agent):
            summary = bayes_regret(traces_by_agent[agent])
            for j, t in enumerate(summary.t):
                writer.writerow(
                    [
                        agent,
                        int(t),
                        repr(float(summary.mean_regret[j])),
                        repr(float(summary.ci_low[j])),
                        repr(float(summary.ci_high[j])),
                    ]
                )


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | None = None,
    seeds: tuple[int, ...] | None = None,
    threads: int = 1,
) -> dict:
    """Run all replications and write traces, aggregate and manifest.

    Returns the manifest dictionary.  Output files: one trace CSV per seed,
    ``aggregate.csv``, and ``manifest.json`` recording the config text, its
    hash, the seed list and package versions.
    """
    out = out_dir or config.output_dir
    os.makedirs(out, exist_ok=True)
    seed_list = tuple(seeds) if seeds is not None else config.seeds
    config_text = config.to_text()

    results: dict[int, list[RegretTrace]] = {}
    if threads > 1 and len(seed_list) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for seed, traces in pool.map(
                _replication_worker, [(config_text, s) for s in seed_list]
            ):
                results[seed] = traces
    else:
        for seed in seed_list:
            results[seed] = run_replication(config, seed)

    traces_by_agent: dict[str, list[RegretTrace]] = {}
    for seed in sorted(results):
        _write_trace_file(os.path.join(out, _trace_filename(seed)), results[seed])
        for trace in results[seed]:
            traces_by_agent.setdefault(trace.agent, []).append(trace)
    write_aggregate(os.path.join(out, "aggregate.csv"), traces_by_agent)

    manifest = {
        "schema_version": 1,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "config_text": config_text,
        "seeds": list(seed_list),
        "trace_files": [_trace_filename(s) for s in sorted(seed_list)],
        "versions": {"mcmab": __version__, "numpy": np.__version__},
    }
    with open(os.path.join(out, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_traces(trace_dir: str) -> dict[str, list[RegretTrace]]:
    """Read every trace CSV in a directory, grouped by agent.

    Rejects directories whose traces mix experiment settings.
    """
    files = sorted(
        f for f in os.listdir(trace_dir)
        if f.startswith("trace_seed") and f.endswith(".csv")
    )
    if not files:
        raise FileNotFoundError(f"no trace files in {trace_dir!r}")
    by_agent: dict[str, list[RegretTrace]] = {}
    settings = set()
    for fname in files:
        rows_by_agent: dict[str, list[list[str]]] = {}
        with open(os.path.join(trace_dir, fname), newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
                raise ValueError(f"{fname}: unexpected columns {reader.fieldnames}")
            for row in reader:
                settings.add(row["setting"])
                rows_by_agent.setdefault(row["agent"], []).append(row)
        for agent, rows in rows_by_agent.items():
            trace = RegretTrace(
                seed=int(rows[0]["seed"]),
                setting=rows[0]["setting"],
                agent=agent,
                m=np.array([int(r["m"]) for r in rows], dtype=np.int64),
                t=np.array([int(r["t"]) for r in rows], dtype=np.int64),
                k=np.array([int(r["k"]) for r in rows], dtype=np.int64),
                level_units=np.array([int(r["level_units"]) for r in rows], dtype=np.int64),
                reward=np.array([float(r["reward"]) for r in rows]),
                opt_value=np.array([float(r["opt_value"]) for r in rows]),
                regret=np.array([float(r["regret"]) for r in rows]),
            )
            by_agent.setdefault(agent, []).append(trace)
    if len(settings) > 1:
        raise ValueError(f"trace directory mixes settings: {sorted(settings)}")
    return by_agent
