"""Allocation policies.

The main policy is two-step Thompson sampling over the hierarchical model:
draw a shared-function instance from its posterior, draw per-arm rewards
around it, and solve the knapsack on the drawn values.  Setting the
random-effect scale to zero degenerates it into the feature-determined
policy, which trusts the shared function completely; both run the same code
path so their traces coincide exactly at ``sigma_m = 0``.

Baselines: an independent per-arm learner that ignores features entirely; an
oracle that solves the knapsack on the true reward table; a gradient
allocator that starts even and then splits the budget proportionally to
per-ad-line reward-per-spend slopes (a reconstruction of a production
system published only as "linear relationships, allocation on estimated
gradients, no exploration" -- slopes here are through-origin least squares so
they are defined from the first round on); and a global/local log-linear
learner that augments each ad line's history with predictions from a global
linear model before fitting a local Bayesian line in log-log space.

Retrain schedules control how often the shared-function posterior is
refreshed: at every decision, once per round, or once per campaign.  Between
refreshes the sampled function instance is reused as the prior for the
per-arm step, whose counts always reflect the latest data.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .core import Allocation, ArmSpace, History, Observation, transform_features
from .kernels import Kernel, LinearKernel, NTKKernel, RBFKernel, init_mlp
from .mckp import ValueTable, solve
from .posterior import (
    GammaPosterior,
    GPosteriorState,
    HierModel,
    memory_collapse,
    posterior_g,
    posterior_g_gamma_space,
    posterior_theta,
    sample_g,
    sample_theta,
)
from .simenv import EnvTruth

__all__ = [
    "AgentConfig",
    "Agent",
    "MCMABAgent",
    "FAIndAgent",
    "OracleTSAgent",
    "HibouAgent",
    "Han2021Agent",
    "make_agent",
    "AGENT_KINDS",
    "RETRAIN_SCHEDULES",
]

AGENT_KINDS = ("mcmab", "fd", "fa_ind", "oracle_ts", "hibou", "han2021")
RETRAIN_SCHEDULES = ("every_round", "daily_batch", "per_campaign")


@dataclass(frozen=True)
class AgentConfig:
    """Declarative description of one policy instance.

    ``sigma_m``/``noise_sd`` default to the experiment's environment values
    when left unset; the ``fd`` kind forces ``sigma_m`` to zero.  Network
    hyperparameters ``nn_regularization`` and ``nn_learning_rate`` are
    recorded for provenance but unused by the frozen-linearization updates.
    """

    name: str
    kind: str
    kernel: str = "linear"
    retrain: str | None = None
    sigma_m: float | None = None
    noise_sd: float | None = None
    transform: str | None = None
    gamma_prior_sd: float = 1.0
    rbf_lengthscale: float = 1.0
    nn_depth: int = 2
    nn_width: int = 12
    nn_regularization: float = 1.0
    nn_learning_rate: float = 0.01
    ntk_refresh: bool = False
    collapse_threshold: int = 2000
    prior_var: float = 20.0
    augment_count: int = 30

    def __post_init__(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.retrain is not None and self.retrain not in RETRAIN_SCHEDULES:
            raise ValueError(f"unknown retrain schedule {self.retrain!r}")
        if self.kind == "fd" and self.sigma_m not in (None, 0.0):
            raise ValueError("fd forces sigma_m = 0")


class Agent(ABC):
    """Protocol shared by all policies.

    The drivers call ``begin_campaign`` when a campaign starts (sequential
    setting), ``begin_round`` at every round, ``recommend`` once per active
    campaign per round, and ``observe`` with the round's full batch after all
    of the round's recommendations are out.
    """

    name: str

    def begin_campaign(self, m: int) -> None:  # noqa: B027 - optional hook
        pass

    def begin_round(self, t: int) -> None:  # noqa: B027 - optional hook
        pass

    @abstractmethod
    def recommend(self, m: int) -> Allocation:
        ...

    def observe(self, batch: list[Observation]) -> None:  # noqa: B027
        pass


def _solve_values(m: int, theta: np.ndarray, K: int, N: int) -> Allocation:
    """Knapsack over sampled values; the zero level is pinned to value 0."""
    table = np.zeros((K, N + 1))
    table[:, 1:] = theta.reshape(K, N)
    units = solve(ValueTable(table, N))
    return Allocation(m, units, N)


# ---------------------------------------------------------------------------
# Two-step Thompson sampling (and its feature-determined degenerate)
# ---------------------------------------------------------------------------


class MCMABAgent(Agent):
    """Two-step Thompson sampling over the hierarchical reward model.

    Linear and network kernels run in weight space: a retrain refits the
    weight posterior from per-arm sufficient statistics and samples one
    weight vector, which defines the shared-function instance everywhere.
    The kernel path (RBF) conditions in data space, samples the instance
    jointly at the relevant arms, and collapses to a per-arm marginal table
    once the history outgrows ``collapse_threshold`` rows.
    """

    def __init__(
        self,
        name: str,
        armspace: ArmSpace,
        model: HierModel,
        rng: np.random.Generator,
        retrain: str = "daily_batch",
        collapse_threshold: int = 2000,
        ntk_refresh: bool = False,
    ) -> None:
        if retrain not in RETRAIN_SCHEDULES:
            raise ValueError(f"unknown retrain schedule {retrain!r}")
        self.name = name
        self.armspace = armspace
        self.model = model
        self.rng = rng
        self.retrain = retrain
        self.collapse_threshold = collapse_threshold
        self.ntk_refresh = ntk_refresh
        self.history = History.empty(armspace)
        self._weight_space = model.kernel.has_weight_space()
        self._gamma_post: GammaPosterior | None = None
        self._g_state: GPosteriorState | None = None
        self._g_sample: np.ndarray | None = None  # weights or all-arm values
        self._pending: list[Observation] = []

    # -- schedule hooks ------------------------------------------------------

    def begin_round(self, t: int) -> None:
        if self.retrain == "daily_batch":
            self._refit_and_sample()

    def begin_campaign(self, m: int) -> None:
        if self.retrain == "per_campaign":
            self._refit_and_sample()

    def observe(self, batch: list[Observation]) -> None:
        if not batch:
            return
        self.history = self.history.extend(batch)
        self._pending.extend(batch)

    # -- shared-function posterior --------------------------------------------

    def _maybe_refresh_linearization(self) -> None:
        if not (self.ntk_refresh and isinstance(self.model.kernel, NTKKernel)):
            return
        if self._gamma_post is not None and len(self.history):
            kernel = self.model.kernel.relinearized(self._gamma_post.mean)
            self.model = HierModel(
                kernel, self.model.sigma_m, self.model.noise_sd, self.model.block_cov
            )

    def _refit(self) -> None:
        if self._weight_space:
            self._maybe_refresh_linearization()
            self._gamma_post = posterior_g_gamma_space(self.model, self.history)
        else:
            if self._g_state is None:
                self._g_state = posterior_g(self.model, self.history)
                self._pending = []
            else:
                for t in sorted({o.round for o in self._pending}):
                    batch = [o for o in self._pending if o.round == t]
                    self._g_state = self._g_state.extend(batch)
                self._pending = []
            if self._g_state.n_rows > self.collapse_threshold:
                self._g_state = memory_collapse(self._g_state, self.armspace.all_arms())

    def _refit_and_sample(self) -> None:
        self._refit()
        if self._weight_space:
            self._g_sample = self._gamma_post.sample_weights(self.rng)
        else:
            self._g_sample = sample_g(self._g_state, self.armspace.all_arms(), self.rng)

    def _g_values(self, m: int) -> np.ndarray:
        """Shared-function instance evaluated at campaign ``m``'s arms."""
        block = self.armspace.campaign_block(m)
        if self.retrain == "every_round":
            self._refit()
            if self._weight_space:
                weights = self._gamma_post.sample_weights(self.rng)
                return self._gamma_post.g_of_weights(block.features, weights)
            return sample_g(self._g_state, block, self.rng)
        if self._g_sample is None:
            self._refit_and_sample()
        if self._weight_space:
            return self._gamma_post.g_of_weights(block.features, self._g_sample)
        return self._g_sample[block.ids - 1]

    # -- decision --------------------------------------------------------------

    def recommend(self, m: int) -> Allocation:
        g_vals = self._g_values(m)
        tp = posterior_theta(self.model, self.history, g_vals, m)
        theta = sample_theta(tp, self.rng)
        return _solve_values(m, theta, self.armspace.n_adlines, self.armspace.n_levels)


# ---------------------------------------------------------------------------
# Feature-agnostic independent learner
# ---------------------------------------------------------------------------


class FAIndAgent(Agent):
    """Independent per-arm Thompson sampling with no information sharing.

    Each arm keeps a conjugate normal posterior ``N(0, prior_var)`` prior,
    known observation noise: after ``c`` observations summing to ``s`` the
    posterior variance is ``1 / (1/prior_var + c/noise^2)``.
    """

    def __init__(
        self,
        name: str,
        armspace: ArmSpace,
        rng: np.random.Generator,
        prior_var: float = 20.0,
        noise_sd: float = 1.0,
    ) -> None:
        if not prior_var > 0:
            raise ValueError("prior_var must be positive")
        self.name = name
        self.armspace = armspace
        self.rng = rng
        self.prior_var = prior_var
        self.noise_sd = noise_sd
        self.counts = np.zeros(armspace.total)
        self.sums = np.zeros(armspace.total)

    def posterior(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        block = self.armspace.campaign_block(m)
        c = self.counts[block.ids - 1]
        s = self.sums[block.ids - 1]
        var = 1.0 / (1.0 / self.prior_var + c / self.noise_sd**2)
        mean = var * s / self.noise_sd**2
        return mean, var

    def recommend(self, m: int) -> Allocation:
        mean, var = self.posterior(m)
        theta = mean + np.sqrt(var) * self.rng.standard_normal(mean.shape[0])
        return _solve_values(m, theta, self.armspace.n_adlines, self.armspace.n_levels)

    def observe(self, batch: list[Observation]) -> None:
        for o in batch:
            idx = self.armspace.index_of(o.arm) - 1
            self.counts[idx] += 1
            self.sums[idx] += o.reward


# ---------------------------------------------------------------------------
# Oracle skyline
# ---------------------------------------------------------------------------


class OracleTSAgent(Agent):
    """Plays each campaign's exact optimal allocation from the true table."""

    def __init__(self, name: str, env: EnvTruth) -> None:
        self.name = name
        self.env = env

    def recommend(self, m: int) -> Allocation:
        units = tuple(int(u) for u in self.env.opt_levels[m - 1])
        return Allocation(m, units, self.env.n_levels)


# ---------------------------------------------------------------------------
# Gradient allocator
# ---------------------------------------------------------------------------


class HibouAgent(Agent):
    """Even start, then budget split proportional to reward-per-spend slopes.

    Slopes are through-origin least squares of reward on spend per ad line
    (zero reward at zero spend holds in this domain).  All units go out each
    round: proportional shares are floored to the grid and the remainder goes
    to the steepest ad line.  If no slope is positive the previous allocation
    is kept.
    """

    def __init__(self, name: str, armspace: ArmSpace) -> None:
        self.name = name
        self.armspace = armspace
        K, M = armspace.n_adlines, armspace.n_campaigns
        self.spend_sq = np.zeros((M, K))
        self.spend_reward = np.zeros((M, K))
        self.seen = np.zeros(M, dtype=bool)
        self.last: dict[int, Allocation] = {}

    def _even(self, m: int) -> Allocation:
        K, N = self.armspace.n_adlines, self.armspace.n_levels
        return Allocation(m, (N // K,) * K, N)

    def recommend(self, m: int) -> Allocation:
        if not self.seen[m - 1]:
            alloc = self._even(m)
        else:
            sq = self.spend_sq[m - 1]
            slopes = np.divide(
                self.spend_reward[m - 1], sq, out=np.zeros_like(sq), where=sq > 0
            )
            positive = np.maximum(slopes, 0.0)
            if positive.sum() <= 0:
                alloc = self.last.get(m, self._even(m))
            else:
                N = self.armspace.n_levels
                exact = N * positive / positive.sum()
                units = np.floor(exact).astype(np.int64)
                units[int(np.argmax(slopes))] += N - int(units.sum())
                alloc = Allocation(m, tuple(int(u) for u in units), N)
        self.last[m] = alloc
        return alloc

    def observe(self, batch: list[Observation]) -> None:
        for o in batch:
            m, k = o.arm.campaign - 1, o.arm.adline - 1
            spend = float(o.arm.level)
            self.spend_sq[m, k] += spend * spend
            self.spend_reward[m, k] += spend * o.reward
            self.seen[m] = True


# ---------------------------------------------------------------------------
# Global/local log-linear learner
# ---------------------------------------------------------------------------


class Han2021Agent(Agent):
    """Thompson sampling on per-ad-line log-log lines with global augmentation.

    A global linear model is refit on all observed data at retrain
    boundaries.  Each ad line's local Bayesian regression of log reward on
    (1, log spend) is fit on its observed history augmented with
    ``augment_count`` global predictions at log-spaced spends; with little
    history the augmented points dominate the local posterior.
    """

    _PRED_FLOOR = 1e-6
    _LOG_NOISE_SD = 1.0
    _MAX_LOG_VALUE = 50.0

    def __init__(
        self,
        name: str,
        armspace: ArmSpace,
        rng: np.random.Generator,
        augment_count: int = 30,
        prior_var: float = 20.0,
        retrain: str = "daily_batch",
    ) -> None:
        self.name = name
        self.armspace = armspace
        self.rng = rng
        self.augment_count = augment_count
        self.prior_var = prior_var
        self.retrain = retrain
        self.history = History.empty(armspace)
        self._global_coef = np.zeros(armspace.feature_dim)
        # observed (log spend, log reward) pairs per (campaign, ad line)
        self._local: dict[tuple[int, int], list[tuple[float, float]]] = {}
        N = armspace.n_levels
        self._aug_units = np.geomspace(1.0, N, augment_count) if N > 1 else np.ones(
            augment_count
        )

    def begin_round(self, t: int) -> None:
        if self.retrain in ("every_round", "daily_batch"):
            self._refit_global()

    def begin_campaign(self, m: int) -> None:
        if self.retrain == "per_campaign":
            self._refit_global()

    def _refit_global(self) -> None:
        if len(self.history) == 0:
            return
        X = self.history.design
        y = self.history.rewards
        self._global_coef = np.linalg.lstsq(X, y, rcond=None)[0]

    def _augmented_design(self, m: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        campaign = self.armspace.campaigns[m - 1]
        x = np.asarray(campaign.adline_features[k - 1], dtype=float)
        N = self.armspace.n_levels
        feats = np.array(
            [
                transform_features(x, campaign.budget, u / N, self.armspace.transform_id)
                for u in self._aug_units
            ]
        )
        preds = np.maximum(feats @ self._global_coef, self._PRED_FLOOR)
        log_u = np.log(self._aug_units)
        log_y = np.log(preds)
        observed = self._local.get((m, k), [])
        if observed:
            obs = np.array(observed)
            log_u = np.concatenate([log_u, obs[:, 0]])
            log_y = np.concatenate([log_y, obs[:, 1]])
        return np.column_stack([np.ones_like(log_u), log_u]), log_y

    def _local_posterior(self, m: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        Z, y = self._augmented_design(m, k)
        prec = np.eye(2) / self.prior_var + Z.T @ Z / self._LOG_NOISE_SD**2
        cov = np.linalg.inv(prec)
        mean = cov @ (Z.T @ y) / self._LOG_NOISE_SD**2
        return mean, 0.5 * (cov + cov.T)

    def recommend(self, m: int) -> Allocation:
        K, N = self.armspace.n_adlines, self.armspace.n_levels
        values = np.zeros((K, N))
        log_n = np.log(np.arange(1, N + 1, dtype=float))
        for k in range(1, K + 1):
            mean, cov = self._local_posterior(m, k)
            beta = self.rng.multivariate_normal(mean, cov, method="cholesky")
            log_pred = np.minimum(beta[0] + beta[1] * log_n, self._MAX_LOG_VALUE)
            values[k - 1] = np.exp(log_pred)
        return _solve_values(m, values.ravel(), K, N)

    def observe(self, batch: list[Observation]) -> None:
        if not batch:
            return
        self.history = self.history.extend(batch)
        for o in batch:
            if o.reward > 0:
                key = (o.arm.campaign, o.arm.adline)
                self._local.setdefault(key, []).append(
                    (float(np.log(o.arm.level)), float(np.log(o.reward)))
                )


# ---------------------------------------------------------------------------
# Factory
# ---------------------------------------------------------------------------


def _build_kernel(cfg: AgentConfig, armspace: ArmSpace, rng: np.random.Generator) -> Kernel:
    if cfg.kernel == "linear":
        return LinearKernel.isotropic(armspace.feature_dim, cfg.gamma_prior_sd)
    if cfg.kernel == "rbf":
        return RBFKernel(lengthscale=cfg.rbf_lengthscale)
    if cfg.kernel == "ntk":
        mlp = init_mlp(cfg.nn_depth, cfg.nn_width, armspace.feature_dim, rng)
        return NTKKernel(mlp)
    raise ValueError(f"unknown kernel {cfg.kernel!r}")


def make_agent(
    cfg: AgentConfig,
    env: EnvTruth,
    rng: np.random.Generator,
    default_schedule: str,
) -> Agent:
    """Instantiate a policy against an environment's public structure.

    Only the oracle receives the truth; every other policy sees campaign
    metadata, the grid and the noise scale it is configured with.
    """
    sigma_m = env.sigma_m if cfg.sigma_m is None else cfg.sigma_m
    noise_sd = env.noise_sd if cfg.noise_sd is None else cfg.noise_sd
    schedule = cfg.retrain or default_schedule
    if cfg.kind in ("mcmab", "fd"):
        armspace = env.armspace(cfg.transform)
        if cfg.kind == "fd":
            sigma_m = 0.0
        kernel = _build_kernel(cfg, armspace, rng)
        model = HierModel(kernel, sigma_m, noise_sd)
        return MCMABAgent(
            cfg.name, armspace, model, rng,
            retrain=schedule,
            collapse_threshold=cfg.collapse_threshold,
            ntk_refresh=cfg.ntk_refresh,
        )
    if cfg.kind == "fa_ind":
        return FAIndAgent(
            cfg.name, env.armspace(cfg.transform), rng,
            prior_var=cfg.prior_var, noise_sd=noise_sd,
        )
    if cfg.kind == "oracle_ts":
        return OracleTSAgent(cfg.name, env)
    if cfg.kind == "hibou":
        return HibouAgent(cfg.name, env.armspace(cfg.transform))
    if cfg.kind == "han2021":
        return Han2021Agent(
            cfg.name, env.armspace(cfg.transform), rng,
            augment_count=cfg.augment_count, prior_var=cfg.prior_var,
            retrain=schedule,
        )
    raise ValueError(f"unknown agent kind {cfg.kind!r}")
