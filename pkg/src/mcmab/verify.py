"""Verification suites: independent oracles replayed on random instances.

Each suite compares a production path against a from-first-principles
reference built without reusing its code: the knapsack against exhaustive
enumeration, the posterior engines against dense joint-Gaussian conditioning
with explicit membership matrices, network gradients against central finite
differences, and the documented degenerate limits against closed-form
conjugate arithmetic.  Suites return a list of failure records (empty means
pass) that the CLI serializes for replay.
"""

from __future__ import annotations

import numpy as np

from .agents import AgentConfig, make_agent
from .core import ArmBlock, ArmSpace, CampaignMeta, History, Observation, make_grid
from .kernels import (
    Kernel,
    LinearKernel,
    NTKKernel,
    RBFKernel,
    init_mlp,
    ntk_features,
)
from .mckp import ValueTable, solve, solve_bruteforce
from .posterior import (
    HierModel,
    posterior_g,
    posterior_g_gamma_space,
    posterior_theta,
)
from .simenv import gen_linear_env, run_concurrent

__all__ = [
    "dense_g_oracle",
    "dense_theta_oracle",
    "clipped_normal_mean",
    "random_small_case",
    "verify_mckp",
    "verify_posterior",
    "verify_kernels",
    "verify_limits",
    "SUITES",
]


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def dense_g_oracle(
    model: HierModel, history: History, query_ids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Marginal posterior of the shared function at arms by dense conditioning.

    Builds the joint normal of [g(queries); Y] from the generative layers:
    the kernel over the union of points, an explicit dense membership matrix,
    and a dense arm-level random-effect covariance.  Conditions on Y with a
    generic solve.
    """
    space = history.armspace
    qX = space.features[query_ids - 1]
    rX = history.design
    q, n = qX.shape[0], rX.shape[0]
    union = np.vstack([qX, rX])
    kfull = model.kernel.gram(union, union)

    # dense arm-level random-effect covariance (total x total)
    total = space.total
    if model.block_cov is None:
        sigma_arms = model.sigma_m**2 * np.eye(total)
    else:
        per = space.n_adlines * space.n_levels
        sigma_arms = np.zeros((total, total))
        for m in range(space.n_campaigns):
            lo = m * per
            sigma_arms[lo : lo + per, lo : lo + per] = model.block_cov
    Z = history.membership.astype(float)  # total x n

    mean_q = model.kernel.mean(qX)
    mean_y = model.kernel.mean(rX)
    cov_qq = kfull[:q, :q]
    cov_qy = kfull[:q, q:]
    cov_yy = kfull[q:, q:] + Z.T @ sigma_arms @ Z + model.noise_sd**2 * np.eye(n)

    sol = np.linalg.solve(cov_yy, history.rewards - mean_y)
    mean = mean_q + cov_qy @ sol
    cov = cov_qq - cov_qy @ np.linalg.solve(cov_yy, cov_qy.T)
    return mean, np.diag(cov).copy()


def dense_theta_oracle(
    model: HierModel, history: History, g_values: np.ndarray, campaign: int
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior of one campaign's arm rewards given fixed ``g`` values,
    by dense conditioning of [theta; Y_campaign]."""
    space = history.armspace
    block = space.campaign_block(campaign)
    per = len(block)
    if model.block_cov is None:
        sigma = model.sigma_m**2 * np.eye(per)
    else:
        sigma = np.asarray(model.block_cov, dtype=float)
    mask = np.isin(history.arm_ids, block.ids)
    ids = history.arm_ids[mask]
    y = history.rewards[mask]
    n = ids.shape[0]
    pos = {int(a): j for j, a in enumerate(block.ids)}
    Z = np.zeros((per, n))
    for col, a in enumerate(ids):
        Z[pos[int(a)], col] = 1.0
    mean_theta = np.asarray(g_values, dtype=float)
    cov_tt = sigma
    cov_ty = sigma @ Z
    cov_yy = Z.T @ sigma @ Z + model.noise_sd**2 * np.eye(n)
    if n == 0:
        return mean_theta.copy(), np.diag(sigma).copy()
    sol = np.linalg.solve(cov_yy, y - Z.T @ mean_theta)
    mean = mean_theta + cov_ty @ sol
    cov = cov_tt - cov_ty @ np.linalg.solve(cov_yy, cov_ty.T)
    return mean, np.diag(cov).copy()


def clipped_normal_mean(mu: float, sd: float) -> float:
    """E[max(0, X)] for X ~ N(mu, sd^2), by quadrature."""
    from scipy.integrate import quad
    from scipy.stats import norm

    if sd == 0:
        return max(0.0, mu)
    val, _ = quad(lambda x: max(0.0, x) * norm.pdf(x, mu, sd), mu - 10 * sd, mu + 10 * sd)
    return float(val)


# ---------------------------------------------------------------------------
# Random case generation
# ---------------------------------------------------------------------------


def _random_campaigns(rng: np.random.Generator, M: int, K: int, d: int):
    campaigns = []
    for m in range(1, M + 1):
        budget = float(rng.uniform(20.0, 30.0))
        feats = tuple(
            np.concatenate(([budget], rng.standard_normal(d))) for _ in range(K)
        )
        campaigns.append(CampaignMeta(m, K, budget, 1, feats))
    return tuple(campaigns)


def _random_kernel(rng: np.random.Generator, kind: str, dim: int) -> Kernel:
    if kind == "linear":
        A = rng.standard_normal((dim, dim))
        sigma = A @ A.T / dim + 0.5 * np.eye(dim)
        return LinearKernel(rng.standard_normal(dim) * 0.5, sigma)
    if kind == "rbf":
        return RBFKernel(lengthscale=float(rng.uniform(0.8, 2.5)))
    if kind == "ntk":
        return NTKKernel(init_mlp(2, 3, dim, rng))
    raise ValueError(kind)


def random_small_case(
    rng: np.random.Generator, kind: str
) -> tuple[HierModel, History]:
    """A random model and history with at most 6 arms and 8 observations."""
    M = int(rng.integers(1, 3))
    K = int(rng.integers(1, 3))
    N = int(rng.integers(1, 3))
    while M * K * N > 6:
        N = max(1, N - 1)
        M = max(1, M - 1)
    d_raw = int(rng.integers(1, 3))
    campaigns = _random_campaigns(rng, M, K, d_raw)
    space = ArmSpace(campaigns, make_grid(N), "linear_with_intercept")
    # feature columns are O(budget); scale down for kernel-friendly inputs
    kernel = _random_kernel(rng, kind, space.feature_dim)
    sigma_m = float(rng.choice([0.0, rng.uniform(0.2, 1.2)]))
    noise_sd = float(rng.uniform(0.4, 1.2))
    model = HierModel(kernel, sigma_m, noise_sd)
    n_obs = int(rng.integers(0, 9))
    obs = []
    used: set[tuple[int, int]] = set()
    for _ in range(n_obs):
        arm_id = int(rng.integers(1, space.total + 1))
        t = int(rng.integers(1, 6))
        if (arm_id, t) in used:
            continue
        used.add((arm_id, t))
        obs.append(Observation(space.arm_of(arm_id), t, float(rng.normal(0.0, 2.0))))
    return model, History.empty(space).extend(obs)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def verify_mckp(rng: np.random.Generator, n_instances: int = 1000) -> list[dict]:
    """Exact agreement of the DP with the enumeration oracle."""
    failures = []
    for i in range(n_instances):
        K = int(rng.integers(1, 5))
        N = int(rng.integers(1, 9))
        values = np.zeros((K, N + 1))
        values[:, 1:] = np.round(rng.normal(0.0, 2.0, size=(K, N)), 3)
        table = ValueTable(values, N)
        got = solve(table)
        want = solve_bruteforce(table)
        if got != want:
            failures.append(
                {
                    "suite": "mckp",
                    "instance": i,
                    "values": values.tolist(),
                    "capacity": N,
                    "solve": list(got),
                    "bruteforce": list(want),
                }
            )
    return failures


def verify_posterior(
    rng: np.random.Generator, n_cases: int = 102, tol: float = 1e-8
) -> list[dict]:
    """Engine marginals vs dense conditioning; weight-space vs data-space."""
    failures = []
    kinds = ["linear", "rbf", "ntk"]
    for i in range(n_cases):
        kind = kinds[i % 3]
        model, history = random_small_case(rng, kind)
        space = history.armspace
        q = min(5, space.total)
        query_ids = 1 + rng.permutation(space.total)[:q].astype(np.int64)
        block = ArmBlock(query_ids, space.features[query_ids - 1])

        state = posterior_g(model, history)
        mean, var = state.marginal(block)
        omean, ovar = dense_g_oracle(model, history, query_ids)
        err = max(np.abs(mean - omean).max(), np.abs(var - ovar).max())
        record = {
            "suite": "posterior",
            "case": i,
            "kernel": kind,
            "n_obs": len(history),
        }
        if err > tol:
            failures.append({**record, "check": "dense_g_oracle", "max_err": float(err)})
            continue

        if model.kernel.has_weight_space():
            gp = posterior_g_gamma_space(model, history)
            gmean, gvar = gp.g_marginal(block.features)
            err = max(np.abs(mean - gmean).max(), np.abs(var - gvar).max())
            if err > tol:
                failures.append(
                    {**record, "check": "gamma_vs_kernel", "max_err": float(err)}
                )
                continue
            if len(history):
                gap = woodbury_gap(model, history)
                if gap > tol:
                    failures.append(
                        {**record, "check": "woodbury_identity", "max_err": gap}
                    )
                    continue

        m = int(rng.integers(1, space.n_campaigns + 1))
        per = space.n_adlines * space.n_levels
        g_vals = rng.standard_normal(per)
        tp = posterior_theta(model, history, g_vals, m)
        tmean, tvar = dense_theta_oracle(model, history, g_vals, m)
        err = max(np.abs(tp.mean - tmean).max(), np.abs(tp.var - tvar).max())
        if err > tol:
            failures.append(
                {**record, "check": "dense_theta_oracle", "max_err": float(err)}
            )
    return failures


def woodbury_gap(model: HierModel, history: History) -> float:
    """Max elementwise gap between the two weight-covariance formulas."""
    kern = model.kernel
    S0 = kern.weight_cov
    F = kern.weight_features(history.design)  # n x p
    n = len(history)
    noise = model.random_effect_cov(
        history.armspace, history.arm_ids, history.arm_ids
    ) + model.noise_sd**2 * np.eye(n)
    direct = np.linalg.inv(F.T @ np.linalg.solve(noise, F) + np.linalg.inv(S0))
    middle = F @ S0 @ F.T + noise
    woodbury = S0 - S0 @ F.T @ np.linalg.solve(middle, F @ S0)
    return float(np.abs(direct - woodbury).max())


def verify_kernels(rng: np.random.Generator, tol: float = 1e-5) -> list[dict]:
    """Network gradient features vs central finite differences; Gram PSD."""
    failures = []
    for i in range(20):
        depth = int(rng.integers(2, 4))
        width = int(rng.integers(2, 6))
        dim = int(rng.integers(1, 5))
        mlp = init_mlp(depth, width, dim, rng)
        x = rng.standard_normal(dim)
        analytic = ntk_features(mlp, x)
        h = 1e-5
        numeric = np.empty_like(analytic)
        for j in range(mlp.n_params):
            wp = mlp.weights.copy()
            wm = mlp.weights.copy()
            wp[j] += h
            wm[j] -= h
            fp = mlp.with_weights(wp).forward(x[None, :])[0]
            fm = mlp.with_weights(wm).forward(x[None, :])[0]
            numeric[j] = (fp - fm) / (2 * h)
        err = float(np.abs(analytic - numeric).max())
        if err > tol:
            failures.append(
                {
                    "suite": "kernels",
                    "check": "ntk_finite_difference",
                    "case": i,
                    "depth": depth,
                    "width": width,
                    "input_dim": dim,
                    "max_err": err,
                }
            )

    for kind in ("linear", "rbf", "ntk"):
        dim = 3
        kernel = _random_kernel(rng, kind, dim)
        X = rng.standard_normal((50, dim))
        gram = kernel.gram(X, X)
        lam = float(np.linalg.eigvalsh(0.5 * (gram + gram.T)).min())
        if lam < -1e-8:
            failures.append(
                {"suite": "kernels", "check": "gram_psd", "kernel": kind,
                 "min_eig": lam}
            )
    return failures


def verify_limits(rng: np.random.Generator) -> list[dict]:
    """Documented degenerate limits of the posterior and the policies."""
    failures = []

    # zero random effect: the two-step policy and its feature-determined
    # degenerate produce identical traces under identical seeds
    env = gen_linear_env(M=2, K=2, N=3, d_m=1, d_k=1, sigma_m=0.6, sigma_eps=0.8,
                         rng=np.random.default_rng(7))
    traces = []
    for kind in ("mcmab", "fd"):
        cfg = AgentConfig(name=kind, kind=kind, kernel="linear", sigma_m=0.0)
        agent = make_agent(cfg, env, np.random.default_rng(123), "daily_batch")
        traces.append(
            run_concurrent(env, agent, T=4, obs_rng=np.random.default_rng(99), seed=0)
        )
    if not (
        np.array_equal(traces[0].level_units, traces[1].level_units)
        and np.array_equal(traces[0].reward, traces[1].reward)
    ):
        failures.append({"suite": "limits", "check": "fd_equivalence"})

    # huge random-effect variance: per-arm posterior mean approaches the
    # per-arm sample mean
    model, history = random_small_case(rng, "linear")
    while len(history) < 4:
        model, history = random_small_case(rng, "linear")
    big = HierModel(model.kernel, 1e6, model.noise_sd)
    space = history.armspace
    per = space.n_adlines * space.n_levels
    for m in range(1, space.n_campaigns + 1):
        g_vals = rng.standard_normal(per)
        tp = posterior_theta(big, history, g_vals, m)
        block = space.campaign_block(m)
        c = history.counts[block.ids - 1]
        s = history.reward_sums[block.ids - 1]
        seen = c > 0
        if not np.any(seen):
            continue
        sample_mean = s[seen] / c[seen]
        rel = np.abs(tp.mean[seen] - sample_mean) / np.maximum(1.0, np.abs(sample_mean))
        if rel.max() > 1e-3:
            failures.append(
                {"suite": "limits", "check": "sigma_m_limit", "max_rel": float(rel.max())}
            )

    # empty history: prior recovered exactly
    for kind in ("linear", "rbf", "ntk"):
        model, history = random_small_case(rng, kind)
        empty = History.empty(history.armspace)
        state = posterior_g(model, empty)
        block = history.armspace.all_arms()
        mean, cov = state.joint(block)
        pm = model.kernel.mean(block.features)
        pk = model.kernel.gram(block.features, block.features)
        if not (np.array_equal(mean, pm) and np.array_equal(cov, pk)):
            failures.append(
                {"suite": "limits", "check": "prior_recovery", "kernel": kind}
            )
    return failures


SUITES = {
    "mckp": verify_mckp,
    "posterior": verify_posterior,
    "kernels": verify_kernels,
    "limits": verify_limits,
}
