"""Synthetic environments, experiment drivers and regret accounting.

Ground-truth environments draw campaign metadata, a shared coefficient
vector, and per-arm random effects, then tabulate every arm's expected
reward (clipped at zero; the zero-budget level is identically zero).  The
linear environment makes the mean reward linear in the transformed features;
the nonlinear one passes a squared-feature projection through ``log | . |``.

Two drivers replay a policy against an environment: ``run_concurrent`` steps
all campaigns together one round at a time with end-of-round batch updates,
and ``run_sequential`` runs campaigns one after another on a shared clock.
Both emit a :class:`RegretTrace` holding one record per (campaign, round,
ad line) with the realized reward and the gap to the campaign's exact
optimal allocation, computed by the knapsack solver on the true table.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import Allocation, ArmSpace, CampaignMeta, Observation, make_grid
from .mckp import ValueTable, solve

__all__ = [
    "EnvTruth",
    "RegretTrace",
    "RegretSummary",
    "gen_linear_env",
    "gen_nonlinear_env",
    "observe",
    "bayes_regret",
    "run_concurrent",
    "run_sequential",
]

_LOG_FLOOR = 1e-8  # guards log(0) in the nonlinear mean


@dataclass(frozen=True)
class EnvTruth:
    """A fully specified environment: metadata, true rewards and noise.

    ``theta`` has shape (M, K, N+1) with the zero-budget column identically
    zero; ``delta`` holds the per-arm random effects for levels 1..N.  The
    exact optimal allocation of each campaign (levels and per-ad-line
    expected values) is tabulated at construction for regret scoring.
    """

    campaigns: tuple[CampaignMeta, ...]
    n_levels: int
    env_kind: str
    transform_id: str
    gamma_star: np.ndarray
    delta: np.ndarray
    theta: np.ndarray
    sigma_m: float
    noise_sd: float
    opt_levels: np.ndarray
    opt_values: np.ndarray

    @property
    def n_campaigns(self) -> int:
        return len(self.campaigns)

    @property
    def n_adlines(self) -> int:
        return self.campaigns[0].n_adlines

    def armspace(self, transform_id: str | None = None) -> ArmSpace:
        """Arm space over this environment's campaigns and grid."""
        return ArmSpace(
            self.campaigns,
            make_grid(self.n_levels),
            transform_id or self.transform_id,
        )

    def campaign_table(self, m: int) -> ValueTable:
        """True expected-reward table of campaign ``m`` for the solver."""
        return ValueTable(self.theta[m - 1], self.n_levels)


def _draw_campaigns(
    M: int, K: int, d_m: int, d_k: int, rng: np.random.Generator
) -> tuple[CampaignMeta, ...]:
    campaigns = []
    for m in range(1, M + 1):
        budget = float(rng.uniform(20.0, 30.0))
        z_m = rng.standard_normal(d_m)
        features = []
        for _ in range(K):
            z_k = rng.standard_normal(d_k)
            features.append(np.concatenate(([budget], z_m, z_k)))
        campaigns.append(
            CampaignMeta(m, K, budget, duration=1, adline_features=tuple(features))
        )
    return tuple(campaigns)


def _finalize_env(
    campaigns: tuple[CampaignMeta, ...],
    N: int,
    env_kind: str,
    transform_id: str,
    gamma_star: np.ndarray,
    g_table: np.ndarray,
    sigma_m: float,
    noise_sd: float,
    rng: np.random.Generator,
) -> EnvTruth:
    M, K = len(campaigns), campaigns[0].n_adlines
    delta = rng.normal(0.0, sigma_m, size=(M, K, N)) if sigma_m > 0 else np.zeros((M, K, N))
    theta = np.zeros((M, K, N + 1))
    theta[:, :, 1:] = np.maximum(0.0, g_table + delta)
    opt_levels = np.zeros((M, K), dtype=np.int64)
    opt_values = np.zeros((M, K))
    for m in range(1, M + 1):
        units = solve(ValueTable(theta[m - 1], N))
        opt_levels[m - 1] = units
        opt_values[m - 1] = theta[m - 1, np.arange(K), units]
    return EnvTruth(
        campaigns,
        N,
        env_kind,
        transform_id,
        gamma_star,
        delta,
        theta,
        sigma_m,
        noise_sd,
        opt_levels,
        opt_values,
    )


def gen_linear_env(
    M: int = 50,
    K: int = 5,
    N: int = 50,
    d_m: int = 3,
    d_k: int = 3,
    sigma_m: float = 0.75,
    sigma_eps: float = 1.0,
    rng: np.random.Generator | None = None,
) -> EnvTruth:
    """Environment whose mean reward is linear in the transformed features.

    Budgets are uniform on (20, 30); campaign and ad-line metadata are
    standard normal; the shared coefficient vector is standard normal over
    the ``(1, budget*share, metadata)`` transform.  Expected rewards are
    clipped at zero and the zero-budget level is exactly zero.
    """
    if min(M, K, N, d_m, d_k) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = rng or np.random.default_rng()
    campaigns = _draw_campaigns(M, K, d_m, d_k, rng)
    space = ArmSpace(campaigns, make_grid(N), "linear_with_intercept")
    gamma_star = rng.standard_normal(space.feature_dim)
    g_table = (space.features @ gamma_star).reshape(M, K, N)
    return _finalize_env(
        campaigns, N, "linear", "linear_with_intercept", gamma_star, g_table,
        sigma_m, sigma_eps, rng,
    )


def gen_nonlinear_env(
    M: int = 50,
    K: int = 5,
    N: int = 50,
    d_m: int = 1,
    d_k: int = 1,
    sigma_m: float = 0.75,
    sigma_eps: float = 1.0,
    rng: np.random.Generator | None = None,
) -> EnvTruth:
    """Environment with mean reward ``log |phi^2 . gamma|`` over squared
    intercept-free features, the setting used for the kernel-based models."""
    if min(M, K, N, d_m, d_k) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = rng or np.random.default_rng()
    campaigns = _draw_campaigns(M, K, d_m, d_k, rng)
    space = ArmSpace(campaigns, make_grid(N), "linear_no_intercept")
    gamma_star = rng.standard_normal(space.feature_dim)
    proj = np.abs(space.features**2 @ gamma_star)
    g_table = np.log(np.maximum(proj, _LOG_FLOOR)).reshape(M, K, N)
    return _finalize_env(
        campaigns, N, "nonlinear", "linear_no_intercept", gamma_star, g_table,
        sigma_m, sigma_eps, rng,
    )


def observe(
    env: EnvTruth, alloc: Allocation, t: int, rng: np.random.Generator
) -> list[Observation]:
    """Realize one round of rewards for an allocation.

    Ad lines at level zero yield no observation (their reward is known to be
    zero); the rest receive ``max(0, theta + noise)``.
    """
    if alloc.n_levels != env.n_levels:
        raise ValueError("allocation grid does not match the environment")
    out = []
    for arm in alloc.arms():
        if arm.level == 0:
            continue
        mean = env.theta[arm.campaign - 1, arm.adline - 1, arm.level]
        y = mean + rng.normal(0.0, env.noise_sd) if env.noise_sd > 0 else mean
        out.append(Observation(arm, t, float(max(0.0, y))))
    return out


# ---------------------------------------------------------------------------
# Regret traces
# ---------------------------------------------------------------------------

TRACE_COLUMNS = (
    "seed", "setting", "agent", "m", "t", "k", "level_units",
    "reward", "opt_value", "regret",
)


@dataclass
class RegretTrace:
    """Per-(campaign, round, ad line) records of one replication.

    ``opt_value`` is the ad line's true expected reward under the campaign's
    exact optimal allocation and ``regret`` the per-ad-line gap to the chosen
    level; sums over ad lines give the campaign's instantaneous regret, which
    is non-negative by optimality.
    """

    seed: int
    setting: str
    agent: str
    m: np.ndarray
    t: np.ndarray
    k: np.ndarray
    level_units: np.ndarray
    reward: np.ndarray
    opt_value: np.ndarray
    regret: np.ndarray

    def __len__(self) -> int:
        return int(self.m.shape[0])

    def per_round(self) -> tuple[np.ndarray, np.ndarray]:
        """Round indices and total instantaneous regret per round."""
        ts = np.unique(self.t)
        totals = np.array([self.regret[self.t == tv].sum() for tv in ts])
        return ts, totals

    def cumulative(self) -> tuple[np.ndarray, np.ndarray]:
        ts, totals = self.per_round()
        return ts, np.cumsum(totals)

    def total_regret(self) -> float:
        return float(self.regret.sum())

    def validate(self, tol: float = 1e-9) -> None:
        """Check regret non-negativity per (campaign, round) and cumulative
        monotonicity; raises on violation."""
        for (m, t) in {(int(a), int(b)) for a, b in zip(self.m, self.t)}:
            inst = self.regret[(self.m == m) & (self.t == t)].sum()
            if inst < -tol:
                raise AssertionError(f"negative regret {inst} at campaign {m} round {t}")
        _, cum = self.cumulative()
        if np.any(np.diff(cum) < -tol):
            raise AssertionError("cumulative regret is not non-decreasing")

    def to_csv_rows(self) -> list[list]:
        rows = []
        for i in range(len(self)):
            rows.append(
                [
                    self.seed, self.setting, self.agent,
                    int(self.m[i]), int(self.t[i]), int(self.k[i]),
                    int(self.level_units[i]),
                    repr(float(self.reward[i])),
                    repr(float(self.opt_value[i])),
                    repr(float(self.regret[i])),
                ]
            )
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            writer.writerows(self.to_csv_rows())


class _TraceBuilder:
    def __init__(self, seed: int, setting: str, agent: str):
        self.seed, self.setting, self.agent = seed, setting, agent
        self.rows: list[tuple] = []

    def add_round(self, env: EnvTruth, m: int, t: int, alloc: Allocation,
                  observations: list[Observation]) -> None:
        rewards = {o.arm.adline: o.reward for o in observations if o.arm.campaign == m}
        for k, units in enumerate(alloc.levels, start=1):
            chosen = env.theta[m - 1, k - 1, units]
            opt = env.opt_values[m - 1, k - 1]
            self.rows.append(
                (m, t, k, units, rewards.get(k, 0.0), opt, opt - chosen)
            )

    def build(self) -> RegretTrace:
        cols = list(zip(*self.rows)) if self.rows else [[]] * 7
        return RegretTrace(
            self.seed, self.setting, self.agent,
            np.array(cols[0], dtype=np.int64),
            np.array(cols[1], dtype=np.int64),
            np.array(cols[2], dtype=np.int64),
            np.array(cols[3], dtype=np.int64),
            np.array(cols[4], dtype=float),
            np.array(cols[5], dtype=float),
            np.array(cols[6], dtype=float),
        )


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def run_concurrent(
    env: EnvTruth, agent, T: int, obs_rng: np.random.Generator,
    seed: int = 0, agent_name: str | None = None,
) -> RegretTrace:
    """Run all campaigns simultaneously for ``T`` rounds.

    Each round the agent recommends for every campaign before any of the
    round's rewards are revealed; observations then arrive as one batch.
    """
    builder = _TraceBuilder(seed, "concurrent", agent_name or agent.name)
    for t in range(1, T + 1):
        agent.begin_round(t)
        allocs = [agent.recommend(m) for m in range(1, env.n_campaigns + 1)]
        batch: list[Observation] = []
        for m, alloc in enumerate(allocs, start=1):
            obs = observe(env, alloc, t, obs_rng)
            batch.extend(obs)
            builder.add_round(env, m, t, alloc, obs)
        agent.observe(batch)
    return builder.build()


def run_sequential(
    env: EnvTruth, agent, T: int, obs_rng: np.random.Generator,
    seed: int = 0, agent_name: str | None = None,
) -> RegretTrace:
    """Run campaigns one after another, ``T`` rounds each, on a shared clock.

    Campaign ``m`` occupies global rounds ``(m-1)*T + 1 .. m*T``; knowledge
    accumulated from earlier campaigns carries over, and no campaign ever
    observes data from later ones.
    """
    builder = _TraceBuilder(seed, "sequential", agent_name or agent.name)
    for m in range(1, env.n_campaigns + 1):
        agent.begin_campaign(m)
        for local_t in range(1, T + 1):
            t = (m - 1) * T + local_t
            agent.begin_round(t)
            alloc = agent.recommend(m)
            obs = observe(env, alloc, t, obs_rng)
            builder.add_round(env, m, t, alloc, obs)
            agent.observe(obs)
    return builder.build()


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegretSummary:
    """Seed-averaged per-round regret with 95% normal confidence bands."""

    agent: str
    t: np.ndarray
    mean_regret: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    mean_cumulative: np.ndarray
    n_seeds: int


def bayes_regret(traces: list[RegretTrace]) -> RegretSummary:
    """Average instantaneous and cumulative regret over replications.

    All traces must come from the same agent and share a round grid.
    """
    if not traces:
        raise ValueError("no traces to aggregate")
    agents = {tr.agent for tr in traces}
    if len(agents) != 1:
        raise ValueError(f"traces mix agents: {sorted(agents)}")
    grids = [tr.per_round()[0] for tr in traces]
    for g in grids[1:]:
        if not np.array_equal(g, grids[0]):
            raise ValueError("traces do not share a round grid")
    ts = grids[0]
    inst = np.stack([tr.per_round()[1] for tr in traces])
    cum = np.cumsum(inst, axis=1)
    n = len(traces)
    mean = inst.mean(axis=0)
    sd = inst.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    half = 1.96 * sd / np.sqrt(n)
    return RegretSummary(
        traces[0].agent, ts, mean, mean - half, mean + half, cum.mean(axis=0), n
    )
