"""Exact Gaussian posterior engine for the hierarchical reward model.

The generative model has three layers.  A shared function ``g`` maps
transformed arm features to mean rewards and carries a Gaussian (kernel)
prior.  Each arm's expected reward is ``theta = g(x) + delta`` with a
per-arm random effect ``delta ~ N(0, sigma_m^2)`` (or a full per-campaign
covariance block).  Observed rewards add noise: ``y = theta + eps`` with
``eps ~ N(0, noise_sd^2)``.

Inference is split in two conjugate steps.  First, the posterior of ``g``
given all history marginalizes out both ``delta`` and ``eps``: since repeated
pulls of one arm share a single ``delta`` draw, the effective observation
covariance is ``K(Psi, Psi) + S + noise_sd^2 I`` where ``S`` places the
random-effect covariance on row pairs that hit the same arm.  Second, given a
sampled ``g``, the per-campaign posterior of ``theta`` is an independent (or
block) normal-normal update driven by per-arm observation counts and reward
sums.

Two interchangeable representations are provided: a data-space engine
(``GPosteriorState``) valid for every kernel, with incremental Cholesky
updates, batch appends and a memory-check collapse to a per-arm marginal
table; and a weight-space engine (``GammaPosterior``) for the linear and
tangent-linearized network kernels, which reduces to per-arm sufficient
statistics and stays cheap as history grows.  Both agree to solver precision
and the test suite checks them against each other and against dense joint
Gaussian conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .core import ArmBlock, ArmSpace, History, Observation, flat_index_inverse
from .kernels import GRAM_JITTER, Kernel

__all__ = [
    "HierModel",
    "GPosteriorState",
    "ThetaPosterior",
    "GammaPosterior",
    "PosteriorNumericalError",
    "posterior_g",
    "posterior_g_gamma_space",
    "posterior_theta",
    "sample_g",
    "sample_theta",
    "batch_append",
    "memory_collapse",
]

_MAX_JITTER = 1e-4


class PosteriorNumericalError(RuntimeError):
    """Raised when the system matrix cannot be factorized even with jitter."""

    def __init__(self, message: str, condition_number: float | None = None):
        if condition_number is not None:
            message = f"{message} (condition number ~ {condition_number:.3e})"
        super().__init__(message)
        self.condition_number = condition_number


def _chol_with_jitter(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky of ``A + jitter*I``.

    The exact matrix is tried first so that well-conditioned systems are
    solved without perturbation; on failure the jitter starts at 1e-8 and
    escalates tenfold up to 1e-4 before reporting a numerical failure with
    condition diagnostics.
    """
    n = A.shape[0]
    jitter = 0.0
    while jitter <= _MAX_JITTER:
        try:
            if jitter == 0.0:
                return np.linalg.cholesky(A), 0.0
            return np.linalg.cholesky(A + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter = GRAM_JITTER if jitter == 0.0 else jitter * 10.0
    try:
        cond = float(np.linalg.cond(A))
    except np.linalg.LinAlgError:
        cond = float("inf")
    raise PosteriorNumericalError(
        f"system matrix of size {n} not positive definite after jitter {_MAX_JITTER}",
        condition_number=cond,
    )


@dataclass(frozen=True)
class HierModel:
    """Prior specification: kernel, random-effect covariance and noise level.

    The random effect defaults to the isotropic ``sigma_m^2 * I``; a full
    per-campaign block (of size ``K*N`` per side) can be supplied instead via
    ``block_cov``, in which case ``sigma_m`` is ignored.
    """

    kernel: Kernel
    sigma_m: float
    noise_sd: float
    block_cov: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.sigma_m < 0:
            raise ValueError("sigma_m must be >= 0")
        if not self.noise_sd > 0:
            raise ValueError("noise_sd must be positive")
        if self.block_cov is not None:
            b = np.asarray(self.block_cov, dtype=float)
            object.__setattr__(self, "block_cov", b)
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise ValueError("block_cov must be square")
            if not np.allclose(b, b.T):
                raise ValueError("block_cov must be symmetric")
            if np.linalg.eigvalsh(b).min() < -1e-10:
                raise ValueError("block_cov must be positive semi-definite")

    def random_effect_cov(
        self, armspace: ArmSpace, ids1: np.ndarray, ids2: np.ndarray
    ) -> np.ndarray:
        """Covariance induced by the random effect between two arm id lists.

        Rows that hit the same arm share one ``delta`` draw, so the isotropic
        model yields ``sigma_m^2`` exactly where the ids coincide.
        """
        if self.block_cov is None:
            return self.sigma_m**2 * (ids1[:, None] == ids2[None, :]).astype(float)
        per = armspace.n_adlines * armspace.n_levels
        m1, w1 = np.divmod(ids1 - 1, per)
        m2, w2 = np.divmod(ids2 - 1, per)
        same = (m1[:, None] == m2[None, :]).astype(float)
        return self.block_cov[np.ix_(w1, w2)] * same

    def campaign_effect_cov(self, armspace: ArmSpace) -> np.ndarray:
        """Random-effect covariance over one campaign's arms (K*N square)."""
        per = armspace.n_adlines * armspace.n_levels
        if self.block_cov is None:
            return self.sigma_m**2 * np.eye(per)
        if self.block_cov.shape[0] != per:
            raise ValueError(
                f"block_cov side {self.block_cov.shape[0]} does not match "
                f"K*N = {per}"
            )
        return self.block_cov


# ---------------------------------------------------------------------------
# Data-space engine
# ---------------------------------------------------------------------------


class GPosteriorState:
    """Immutable posterior snapshot of the shared function ``g``.

    Holds the accumulated observation rows, the Cholesky factor of the
    system matrix ``prior_gram + random_effect + noise_sd^2 I`` and, after a
    memory-check collapse, the per-arm marginal table that replaces the
    kernel prior.  Queries address arms through :class:`ArmBlock` so both
    kernel and table priors can answer them.
    """

    def __init__(
        self,
        model: HierModel,
        armspace: ArmSpace,
        rows: ArmBlock,
        y: np.ndarray,
        rounds: np.ndarray,
        table: tuple[np.ndarray, np.ndarray] | None = None,
        _factor: tuple[np.ndarray, float] | None = None,
    ) -> None:
        self.model = model
        self.armspace = armspace
        self.rows = rows
        self.y = np.asarray(y, dtype=float)
        self.rounds = np.asarray(rounds, dtype=np.int64)
        self.table = table
        if _factor is not None:
            self._chol, self.jitter = _factor
        elif len(rows):
            self._chol, self.jitter = _chol_with_jitter(self._system_matrix())
        else:
            self._chol, self.jitter = None, 0.0
        if self._chol is not None:
            resid = self.y - self._prior_mean(self.rows)
            self._alpha = cho_solve((self._chol, True), resid)
        else:
            self._alpha = None

    # -- prior plumbing ------------------------------------------------------

    def _prior_mean(self, block: ArmBlock) -> np.ndarray:
        if self.table is None:
            return self.model.kernel.mean(block.features)
        means, _ = self.table
        return means[block.ids - 1]

    def _prior_gram(self, b1: ArmBlock, b2: ArmBlock) -> np.ndarray:
        if self.table is None:
            return self.model.kernel.gram(b1.features, b2.features)
        _, variances = self.table
        eq = (b1.ids[:, None] == b2.ids[None, :]).astype(float)
        return eq * variances[b1.ids - 1][:, None]

    def _system_matrix(self) -> np.ndarray:
        n = len(self.rows)
        A = self._prior_gram(self.rows, self.rows)
        A = A + self.model.random_effect_cov(self.armspace, self.rows.ids, self.rows.ids)
        A = A + self.model.noise_sd**2 * np.eye(n)
        return A

    # -- queries ---------------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def joint(self, query: ArmBlock) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean vector and covariance matrix of ``g`` at the query arms.

        With no history this returns the prior exactly.
        """
        mu = self._prior_mean(query)
        kqq = self._prior_gram(query, query)
        if self._chol is None:
            return mu, kqq
        kqr = self._prior_gram(query, self.rows)
        v = solve_triangular(self._chol, kqr.T, lower=True)
        mean = mu + kqr @ self._alpha
        cov = kqq - v.T @ v
        return mean, cov

    def marginal(self, query: ArmBlock) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means and variances of ``g`` at the query arms."""
        mean, cov = self.joint(query)
        return mean, np.diag(cov).copy()

    # -- updates ----------------------------------------------------------------

    def extend(self, observations: list[Observation]) -> "GPosteriorState":
        """Return a new state with the observations appended.

        All observations must share one round, and (arm, round) pairs may not
        repeat across the whole history.  The Cholesky factor is extended via
        a block update; the result matches a from-scratch rebuild to solver
        precision.
        """
        if not observations:
            return self
        rounds = {o.round for o in observations}
        if len(rounds) != 1:
            raise ValueError(f"batch must share a single round, got {sorted(rounds)}")
        new_ids = np.array(
            [self.armspace.index_of(o.arm) for o in observations], dtype=np.int64
        )
        pairs = set(zip(self.rows.ids.tolist(), self.rounds.tolist()))
        t = observations[0].round
        for i in new_ids.tolist():
            if (i, t) in pairs:
                raise ValueError(
                    f"duplicate observation for arm {self.armspace.arm_of(i)} at round {t}"
                )
            pairs.add((i, t))
        new_block = ArmBlock(new_ids, self.armspace.features[new_ids - 1])
        ids = np.concatenate([self.rows.ids, new_ids])
        rows = ArmBlock(ids, self.armspace.features[ids - 1])
        y = np.concatenate([self.y, [o.reward for o in observations]])
        rnds = np.concatenate([self.rounds, np.full(len(observations), t, dtype=np.int64)])

        factor = None
        if self._chol is not None:
            factor = self._try_block_cholesky(new_block)
        elif len(self.rows) == 0:
            factor = None  # build from scratch below
        return GPosteriorState(
            self.model, self.armspace, rows, y, rnds, table=self.table, _factor=factor
        )

    def _try_block_cholesky(
        self, new_block: ArmBlock
    ) -> tuple[np.ndarray, float] | None:
        """Extend the cached factor by one block; None forces a full rebuild."""
        n_new = len(new_block)
        a12 = self._prior_gram(self.rows, new_block) + self.model.random_effect_cov(
            self.armspace, self.rows.ids, new_block.ids
        )
        a22 = (
            self._prior_gram(new_block, new_block)
            + self.model.random_effect_cov(self.armspace, new_block.ids, new_block.ids)
            + (self.model.noise_sd**2 + self.jitter) * np.eye(n_new)
        )
        l21 = solve_triangular(self._chol, a12, lower=True).T
        schur = a22 - l21 @ l21.T
        try:
            l22 = np.linalg.cholesky(schur)
        except np.linalg.LinAlgError:
            return None
        n_old = len(self.rows)
        L = np.zeros((n_old + n_new, n_old + n_new))
        L[:n_old, :n_old] = self._chol
        L[n_old:, :n_old] = l21
        L[n_old:, n_old:] = l22
        return L, self.jitter

    def collapse(self, all_arms: ArmBlock) -> "GPosteriorState":
        """Collapse to a per-arm marginal table and discard the raw history.

        The marginal mean and variance of ``g`` at every arm are identical
        before and after the collapse; cross-arm covariance is deliberately
        dropped, so the table acts as an independent per-arm prior for all
        subsequent updates.
        """
        expected = np.arange(1, self.armspace.total + 1, dtype=np.int64)
        if not np.array_equal(np.sort(all_arms.ids), expected):
            raise ValueError("collapse requires every arm of the space exactly once")
        mean, var = self.marginal(all_arms)
        means = np.empty(self.armspace.total)
        variances = np.empty(self.armspace.total)
        means[all_arms.ids - 1] = mean
        variances[all_arms.ids - 1] = np.maximum(var, 0.0)
        empty = ArmBlock(
            np.empty(0, dtype=np.int64), np.empty((0, self.armspace.feature_dim))
        )
        return GPosteriorState(
            self.model,
            self.armspace,
            empty,
            np.empty(0),
            np.empty(0, dtype=np.int64),
            table=(means, variances),
        )

    def collapse_table_to_csv(self, path) -> None:
        """Dump the per-arm collapse table as (m, k, n, mean, sd) rows."""
        if self.table is None:
            raise ValueError("state has no collapse table")
        import csv

        means, variances = self.table
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["m", "k", "n", "mean", "sd"])
            for idx in range(1, self.armspace.total + 1):
                m, k, n = flat_index_inverse(
                    idx, self.armspace.n_adlines, self.armspace.n_levels
                )
                writer.writerow(
                    [m, k, n, repr(float(means[idx - 1])),
                     repr(float(np.sqrt(variances[idx - 1])))]
                )


def posterior_g(model: HierModel, history: History) -> GPosteriorState:
    """Condition the shared-function prior on an observation history."""
    return GPosteriorState(
        model, history.armspace, history.rows_block(), history.rewards, history.rounds
    )


def batch_append(state: GPosteriorState, day_batch: list[Observation]) -> GPosteriorState:
    """Append one round's observations, leaving the old state unchanged."""
    return state.extend(day_batch)


def memory_collapse(state: GPosteriorState, all_arms: ArmBlock) -> GPosteriorState:
    """Snapshot per-arm marginals, drop history, and restart from the table."""
    return state.collapse(all_arms)


def sample_g(state: GPosteriorState, query: ArmBlock, rng: np.random.Generator) -> np.ndarray:
    """One joint draw of ``g`` at the query arms."""
    mean, cov = state.joint(query)
    L, _ = _chol_with_jitter(cov)
    return mean + L @ rng.standard_normal(len(query))


# ---------------------------------------------------------------------------
# Weight-space engine (linear and network kernels)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaPosterior:
    """Gaussian posterior over the weight vector of a weight-space kernel.

    For the linear kernel the weights are the regression coefficients; for
    the network kernel they are the full flattened weights around the frozen
    linearization point.  ``g`` values at arms follow by pushing weights
    through the gradient/identity features plus the fixed mean offset.
    """

    model: HierModel
    mean: np.ndarray
    cov: np.ndarray

    def g_joint(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        kern = self.model.kernel
        F = kern.weight_features(X)
        mean = kern.mean_offset(X) + F @ self.mean
        return mean, F @ self.cov @ F.T

    def g_marginal(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        kern = self.model.kernel
        F = kern.weight_features(X)
        mean = kern.mean_offset(X) + F @ self.mean
        var = np.einsum("ij,jk,ik->i", F, self.cov, F)
        return mean, var

    def sample_weights(self, rng: np.random.Generator) -> np.ndarray:
        """One weight draw; evaluating it at features gives a full function."""
        L, _ = _chol_with_jitter(self.cov)
        return self.mean + L @ rng.standard_normal(self.mean.shape[0])

    def g_of_weights(self, X: np.ndarray, weights: np.ndarray) -> np.ndarray:
        kern = self.model.kernel
        return kern.mean_offset(X) + kern.weight_features(X) @ weights

    def sample_g(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.g_of_weights(X, self.sample_weights(rng))


def posterior_g_gamma_space(model: HierModel, history: History) -> GammaPosterior:
    """Weight-space posterior, equivalent to :func:`posterior_g` for the
    linear and network kernels.

    With the default isotropic random effect the update collapses to per-arm
    sufficient statistics: each arm with count ``c`` and centered reward sum
    ``s`` contributes ``c / (noise^2 + sigma_m^2 c)`` times its feature outer
    product to the precision and ``s / (noise^2 + sigma_m^2 c)`` times its
    feature to the information vector.
    """
    kern = model.kernel
    if not kern.has_weight_space():
        raise ValueError(f"kernel kind {kern.kind!r} has no weight-space view")
    b0 = kern.weight_mean
    S0 = kern.weight_cov
    try:
        S0_chol = np.linalg.cholesky(S0)
    except np.linalg.LinAlgError:
        raise ValueError("weight prior covariance must be non-singular")
    p = b0.shape[0]
    S0_inv = cho_solve((S0_chol, True), np.eye(p))

    if len(history) == 0:
        return GammaPosterior(model, b0.copy(), S0.copy())

    sigma2 = model.noise_sd**2
    if model.block_cov is None:
        counts = history.counts
        observed = np.nonzero(counts)[0]
        c = counts[observed].astype(float)
        ids = observed + 1
        X = history.armspace.features[observed]
        F = kern.weight_features(X)
        offs = kern.mean_offset(X)
        # reward sums centered by the fixed mean offset of each arm
        s = history.reward_sums[observed] - c * offs
        denom = sigma2 + model.sigma_m**2 * c
        prec = S0_inv + (F * (c / denom)[:, None]).T @ F
        info = S0_inv @ b0 + F.T @ (s / denom)
    else:
        rows = history.rows_block()
        F = kern.weight_features(rows.features)
        t = history.rewards - kern.mean_offset(rows.features)
        noise = model.random_effect_cov(
            history.armspace, rows.ids, rows.ids
        ) + sigma2 * np.eye(len(rows))
        Ln, _ = _chol_with_jitter(noise)
        Wi = cho_solve((Ln, True), F)
        prec = S0_inv + F.T @ Wi
        info = S0_inv @ b0 + Wi.T @ t

    Lp, _ = _chol_with_jitter(prec)
    cov = cho_solve((Lp, True), np.eye(p))
    cov = 0.5 * (cov + cov.T)
    mean = cov @ info
    return GammaPosterior(model, mean, cov)


# ---------------------------------------------------------------------------
# Second step: per-campaign arm posteriors given g
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaPosterior:
    """Per-arm reward posterior for one campaign conditioned on ``g`` values.

    ``cov`` is populated only under a full random-effect block; the default
    isotropic model keeps arms independent and stores just the variances.
    """

    campaign: int
    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray | None = None


def posterior_theta(
    model: HierModel, history: History, g_values: np.ndarray, campaign: int
) -> ThetaPosterior:
    """Normal-normal update of one campaign's arm rewards around ``g``.

    Arms without observations recover the conditional prior ``N(g, Sigma)``;
    with ``sigma_m = 0`` the posterior degenerates to a point mass at ``g``.
    """
    space = history.armspace
    block = space.campaign_block(campaign)
    per = len(block)
    g_values = np.asarray(g_values, dtype=float)
    if g_values.shape != (per,):
        raise ValueError(f"g_values must have shape ({per},), got {g_values.shape}")
    c = history.counts[block.ids - 1].astype(float)
    s = history.reward_sums[block.ids - 1]
    sigma2 = model.noise_sd**2

    if model.block_cov is None:
        if model.sigma_m == 0.0:
            return ThetaPosterior(campaign, g_values.copy(), np.zeros(per))
        prec = 1.0 / model.sigma_m**2 + c / sigma2
        var = 1.0 / prec
        mean = var * (g_values / model.sigma_m**2 + s / sigma2)
        return ThetaPosterior(campaign, mean, var)

    Sigma = model.campaign_effect_cov(space)
    Ls, _ = _chol_with_jitter(Sigma)
    Sigma_inv = cho_solve((Ls, True), np.eye(per))
    prec = Sigma_inv + np.diag(c / sigma2)
    Lp, _ = _chol_with_jitter(prec)
    cov = cho_solve((Lp, True), np.eye(per))
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (Sigma_inv @ g_values + s / sigma2)
    return ThetaPosterior(campaign, mean, np.diag(cov).copy(), cov=cov)


def sample_theta(theta_post: ThetaPosterior, rng: np.random.Generator) -> np.ndarray:
    """One draw of the campaign's arm rewards.

    Always consumes one standard-normal vector of the arm count, so a
    degenerate posterior (zero variance) returns the mean while keeping
    random streams aligned across model variants.
    """
    z = rng.standard_normal(theta_post.mean.shape[0])
    if theta_post.cov is None:
        return theta_post.mean + np.sqrt(theta_post.var) * z
    L, _ = _chol_with_jitter(theta_post.cov)
    return theta_post.mean + L @ z
