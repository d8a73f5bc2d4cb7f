"""Domain types for discretized budget-allocation bandits.

A portfolio consists of campaigns, each holding a handful of ad lines with a
shared daily budget.  The continuous budget share assigned to an ad line is
discretized onto a uniform grid ``{0, 1/N, ..., 1}``; a *base arm* is one
(campaign, ad line, level) triple and a campaign's action is one level per ad
line with the shares summing to at most 1.

This module owns the value objects shared by every other module (grids,
campaigns, arms, allocations, observations, histories) together with the flat
arm indexing and the feature transforms that map (metadata, spend) pairs to
model inputs.  All types are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ActionGrid",
    "CampaignMeta",
    "BaseArm",
    "Allocation",
    "Observation",
    "History",
    "ArmBlock",
    "ArmSpace",
    "TRANSFORM_IDS",
    "make_grid",
    "flat_index",
    "flat_index_inverse",
    "transform_features",
]


# ---------------------------------------------------------------------------
# Grids and metadata
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionGrid:
    """Uniform discretization of the budget share interval [0, 1].

    ``n_levels`` is the number of non-zero levels N; the grid holds the N+1
    shares ``0, 1/N, ..., 1`` in increasing order.  Level ``n`` spends the
    share ``n / N`` of the campaign budget.
    """

    n_levels: int

    def __post_init__(self) -> None:
        if self.n_levels < 1:
            raise ValueError(f"n_levels must be >= 1, got {self.n_levels}")

    @property
    def shares(self) -> tuple[float, ...]:
        n = self.n_levels
        return tuple(i / n for i in range(n + 1))

    def share(self, units: int) -> float:
        """Budget share of level ``units``."""
        if not 0 <= units <= self.n_levels:
            raise ValueError(f"level {units} outside grid 0..{self.n_levels}")
        return units / self.n_levels

    def units(self, share: float) -> int:
        """Inverse of :meth:`share`; rejects off-grid values."""
        n = round(share * self.n_levels)
        if not 0 <= n <= self.n_levels or not np.isclose(n / self.n_levels, share):
            raise ValueError(f"share {share} is not on the 1/{self.n_levels} grid")
        return int(n)


def make_grid(n_levels: int) -> ActionGrid:
    """Build the share grid with ``n_levels`` non-zero levels."""
    return ActionGrid(n_levels)


@dataclass(frozen=True)
class CampaignMeta:
    """Static description of one campaign.

    ``adline_features`` holds one feature vector per ad line.  By convention
    the first coordinate of each vector is the campaign's daily budget; the
    remaining coordinates are campaign- and ad-line-specific metadata.  All
    vectors must share a dimension.
    """

    campaign_id: int
    n_adlines: int
    budget: float
    duration: int
    adline_features: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if self.campaign_id < 1:
            raise ValueError("campaign_id is 1-based and must be >= 1")
        if self.n_adlines < 1:
            raise ValueError("n_adlines must be >= 1")
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if len(self.adline_features) != self.n_adlines:
            raise ValueError("need one feature vector per ad line")
        dims = {np.asarray(x).shape for x in self.adline_features}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValueError("ad line feature vectors must be 1-D with equal dimension")

    @property
    def feature_dim(self) -> int:
        return int(np.asarray(self.adline_features[0]).shape[0])


@dataclass(frozen=True)
class BaseArm:
    """One (campaign, ad line, level) triple.  ``level`` is in grid units."""

    campaign: int
    adline: int
    level: int

    def __post_init__(self) -> None:
        if self.campaign < 1 or self.adline < 1:
            raise ValueError("campaign and adline are 1-based")
        if self.level < 0:
            raise ValueError("level must be >= 0")


@dataclass(frozen=True)
class Allocation:
    """A campaign's action: one grid level per ad line, in grid units.

    The total spend constraint is ``sum(levels) <= n_levels`` (shares sum to
    at most 1).  Level 0 parks an ad line with no budget.
    """

    campaign: int
    levels: tuple[int, ...]
    n_levels: int

    def __post_init__(self) -> None:
        if any(l < 0 or l > self.n_levels for l in self.levels):
            raise ValueError(f"levels {self.levels} outside grid 0..{self.n_levels}")
        if sum(self.levels) > self.n_levels:
            raise ValueError(
                f"levels {self.levels} spend {sum(self.levels)} units, "
                f"capacity is {self.n_levels}"
            )

    @property
    def shares(self) -> tuple[float, ...]:
        return tuple(l / self.n_levels for l in self.levels)

    def arms(self) -> tuple[BaseArm, ...]:
        """The base arms played, including zero-level ones."""
        return tuple(
            BaseArm(self.campaign, k + 1, l) for k, l in enumerate(self.levels)
        )


@dataclass(frozen=True)
class Observation:
    """A realized reward for one base arm at one round.

    Zero-level arms never produce observations: an ad line with no budget has
    a known reward of zero and carries no information for posterior updates.
    """

    arm: BaseArm
    round: int
    reward: float

    def __post_init__(self) -> None:
        if self.arm.level < 1:
            raise ValueError("zero-budget arms are not observable")
        if not np.isfinite(self.reward):
            raise ValueError(f"reward must be finite, got {self.reward}")


# ---------------------------------------------------------------------------
# Flat arm indexing
# ---------------------------------------------------------------------------


def flat_index(m: int, k: int, n: int, K: int, N: int) -> int:
    """Map a (campaign, ad line, level) triple to its 1-based flat index.

    The index runs over non-zero levels only: ``(m-1)*K*N + (k-1)*N + n``.
    The zero-budget level carries no posterior state and is not indexed.
    """
    if m < 1:
        raise ValueError(f"campaign index {m} must be >= 1")
    if not 1 <= k <= K:
        raise ValueError(f"adline index {k} outside 1..{K}")
    if not 1 <= n <= N:
        raise ValueError(f"level {n} outside 1..{N} (level 0 is not indexed)")
    return (m - 1) * K * N + (k - 1) * N + n


def flat_index_inverse(index: int, K: int, N: int) -> tuple[int, int, int]:
    """Invert :func:`flat_index`, returning the 1-based (m, k, n) triple."""
    if index < 1:
        raise ValueError(f"flat index {index} must be >= 1")
    i = index - 1
    m, rem = divmod(i, K * N)
    k, n = divmod(rem, N)
    return m + 1, k + 1, n + 1


# ---------------------------------------------------------------------------
# Feature transforms
# ---------------------------------------------------------------------------

TRANSFORM_IDS = (
    "linear_with_intercept",
    "linear_no_intercept",
    "raw_concat",
    "log_budget",
)


def transform_features(
    x: np.ndarray, budget: float, share: float, transform_id: str
) -> np.ndarray:
    """Map raw arm metadata and a budget share to a model input vector.

    ``x`` is the raw feature vector whose first coordinate is the campaign
    budget; ``budget`` is that same budget and ``share`` the grid share.

    Transforms:

    - ``linear_with_intercept``: ``(1, budget*share, x[1:])``
    - ``linear_no_intercept``:   ``(budget*share, x[1:])``
    - ``raw_concat``:            ``(x, budget*share)``
    - ``log_budget``:            ``(log(budget*share), x[1:])``; rejects
      ``share == 0`` since nothing is spent.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a 1-D vector")
    spend = budget * share
    if transform_id == "linear_with_intercept":
        return np.concatenate(([1.0, spend], x[1:]))
    if transform_id == "linear_no_intercept":
        return np.concatenate(([spend], x[1:]))
    if transform_id == "raw_concat":
        return np.concatenate((x, [spend]))
    if transform_id == "log_budget":
        if spend <= 0:
            raise ValueError("log_budget requires a positive spend")
        return np.concatenate(([np.log(spend)], x[1:]))
    raise ValueError(f"unknown transform_id {transform_id!r}")


# ---------------------------------------------------------------------------
# Arm space: every indexed arm with its transformed features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArmBlock:
    """A batch of arms addressed by flat index with their model inputs.

    ``ids`` are 1-based flat indices; ``features`` has one row per arm.
    Kernel priors read ``features``; collapsed table priors read ``ids``.
    """

    ids: np.ndarray
    features: np.ndarray

    def __post_init__(self) -> None:
        if self.ids.shape[0] != self.features.shape[0]:
            raise ValueError("ids and features must have matching length")

    def __len__(self) -> int:
        return int(self.ids.shape[0])


class ArmSpace:
    """The full set of indexed arms for a portfolio of campaigns.

    Flat indexing requires a uniform number of ad lines per campaign; the
    simulators always satisfy this.  Features are transformed once at
    construction and shared by reference afterwards.
    """

    def __init__(
        self,
        campaigns: Sequence[CampaignMeta],
        grid: ActionGrid,
        transform_id: str = "linear_with_intercept",
    ) -> None:
        ks = {c.n_adlines for c in campaigns}
        if len(ks) != 1:
            raise ValueError("flat indexing requires uniform n_adlines across campaigns")
        ids = [c.campaign_id for c in campaigns]
        if ids != list(range(1, len(campaigns) + 1)):
            raise ValueError("campaign_ids must be 1..M in order")
        self.campaigns = tuple(campaigns)
        self.grid = grid
        self.transform_id = transform_id
        self.n_campaigns = len(campaigns)
        self.n_adlines = ks.pop()
        self.n_levels = grid.n_levels
        self.total = self.n_campaigns * self.n_adlines * self.n_levels

        rows = []
        for c in campaigns:
            for k in range(1, c.n_adlines + 1):
                x = np.asarray(c.adline_features[k - 1], dtype=float)
                for n in range(1, grid.n_levels + 1):
                    rows.append(
                        transform_features(x, c.budget, grid.share(n), transform_id)
                    )
        self.features = np.array(rows, dtype=float)
        self.feature_dim = int(self.features.shape[1])

    def index_of(self, arm: BaseArm) -> int:
        return flat_index(arm.campaign, arm.adline, arm.level, self.n_adlines, self.n_levels)

    def arm_of(self, index: int) -> BaseArm:
        m, k, n = flat_index_inverse(index, self.n_adlines, self.n_levels)
        return BaseArm(m, k, n)

    def campaign_of_index(self, index: int) -> int:
        return flat_index_inverse(index, self.n_adlines, self.n_levels)[0]

    def campaign_block(self, m: int) -> ArmBlock:
        """All non-zero-level arms of campaign ``m``, ordered (k, n)."""
        if not 1 <= m <= self.n_campaigns:
            raise ValueError(f"campaign {m} outside 1..{self.n_campaigns}")
        per = self.n_adlines * self.n_levels
        lo = (m - 1) * per
        ids = np.arange(lo + 1, lo + per + 1, dtype=np.int64)
        return ArmBlock(ids, self.features[lo : lo + per])

    def all_arms(self) -> ArmBlock:
        return ArmBlock(np.arange(1, self.total + 1, dtype=np.int64), self.features)

    def block_for(self, arms: Iterable[BaseArm]) -> ArmBlock:
        ids = np.array([self.index_of(a) for a in arms], dtype=np.int64)
        return ArmBlock(ids, self.features[ids - 1])

    def features_to_csv(self, path) -> None:
        """Write the transformed feature table with named dimensions."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["m", "k", "n"] + [f"phi_{j}" for j in range(self.feature_dim)]
            )
            for idx in range(1, self.total + 1):
                m, k, n = flat_index_inverse(idx, self.n_adlines, self.n_levels)
                writer.writerow(
                    [m, k, n] + [repr(float(v)) for v in self.features[idx - 1]]
                )


# ---------------------------------------------------------------------------
# Observation history
# ---------------------------------------------------------------------------


class History:
    """An ordered record of observations over an arm space.

    Internally stores flat arm ids, rounds and rewards as arrays; the derived
    structures used by the posterior engine (feature matrix, membership
    matrix, per-arm counts and reward sums) are computed on demand.  History
    objects are immutable: :meth:`extend` returns a new instance.
    """

    def __init__(
        self,
        armspace: ArmSpace,
        arm_ids: np.ndarray | None = None,
        rounds: np.ndarray | None = None,
        rewards: np.ndarray | None = None,
    ) -> None:
        self.armspace = armspace
        self.arm_ids = np.asarray(arm_ids if arm_ids is not None else [], dtype=np.int64)
        self.rounds = np.asarray(rounds if rounds is not None else [], dtype=np.int64)
        self.rewards = np.asarray(rewards if rewards is not None else [], dtype=float)
        if not (len(self.arm_ids) == len(self.rounds) == len(self.rewards)):
            raise ValueError("arm_ids, rounds and rewards must have equal length")
        if len(self.arm_ids) and (
            self.arm_ids.min() < 1 or self.arm_ids.max() > armspace.total
        ):
            raise ValueError("arm id outside the arm space")
        self._key_set: set[tuple[int, int]] | None = None

    @classmethod
    def empty(cls, armspace: ArmSpace) -> "History":
        return cls(armspace)

    def __len__(self) -> int:
        return int(self.arm_ids.shape[0])

    @property
    def n_rows(self) -> int:
        return len(self)

    def _keys(self) -> set[tuple[int, int]]:
        if self._key_set is None:
            self._key_set = set(zip(self.arm_ids.tolist(), self.rounds.tolist()))
        return self._key_set

    def extend(self, observations: Sequence[Observation]) -> "History":
        """Append observations, returning a new History.

        Rejects duplicate (arm, round) pairs: each base arm yields at most one
        observation per round.
        """
        if not observations:
            return self
        ids = np.array([self.armspace.index_of(o.arm) for o in observations], dtype=np.int64)
        rounds = np.array([o.round for o in observations], dtype=np.int64)
        rewards = np.array([o.reward for o in observations], dtype=float)
        seen = set(self._keys())
        for i, r in zip(ids.tolist(), rounds.tolist()):
            if (i, r) in seen:
                arm = self.armspace.arm_of(i)
                raise ValueError(f"duplicate observation for arm {arm} at round {r}")
            seen.add((i, r))
        return History(
            self.armspace,
            np.concatenate([self.arm_ids, ids]),
            np.concatenate([self.rounds, rounds]),
            np.concatenate([self.rewards, rewards]),
        )

    # -- derived structures -------------------------------------------------

    @property
    def psi(self) -> np.ndarray:
        """Transformed feature matrix, one column per observation (d x rows)."""
        return self.armspace.features[self.arm_ids - 1].T

    @property
    def design(self) -> np.ndarray:
        """Row-major view of ``psi`` (rows x d)."""
        return self.armspace.features[self.arm_ids - 1]

    @property
    def membership(self) -> np.ndarray:
        """Dense 0/1 membership matrix (total_arms x rows); column sums are 1."""
        z = np.zeros((self.armspace.total, len(self)), dtype=np.int64)
        z[self.arm_ids - 1, np.arange(len(self))] = 1
        return z

    @property
    def counts(self) -> np.ndarray:
        """Observation count per flat arm index (length total)."""
        return np.bincount(self.arm_ids - 1, minlength=self.armspace.total).astype(
            np.int64
        )

    @property
    def reward_sums(self) -> np.ndarray:
        """Per-arm summed rewards (length total)."""
        return np.bincount(
            self.arm_ids - 1, weights=self.rewards, minlength=self.armspace.total
        )

    def rows_block(self) -> ArmBlock:
        """Arm block of the observation rows, in observation order."""
        return ArmBlock(self.arm_ids.copy(), self.armspace.features[self.arm_ids - 1])

    # -- serialization -------------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["m", "k", "n", "t", "y"])
            for idx, t, y in zip(self.arm_ids, self.rounds, self.rewards):
                m, k, n = flat_index_inverse(
                    int(idx), self.armspace.n_adlines, self.armspace.n_levels
                )
                writer.writerow([m, k, n, int(t), repr(float(y))])

    @classmethod
    def from_csv(cls, path, armspace: ArmSpace) -> "History":
        obs = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                obs.append(
                    Observation(
                        BaseArm(int(row["m"]), int(row["k"]), int(row["n"])),
                        int(row["t"]),
                        float(row["y"]),
                    )
                )
        return cls.empty(armspace).extend(obs)
