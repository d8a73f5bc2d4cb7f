"""Prior mean functions and kernels for the shared reward model.

Three working models are unified behind one interface: a Bayesian linear
model, a Gaussian process with an RBF kernel, and a tangent-linearized
multilayer perceptron.  Each kernel provides a prior mean function and a
positive semi-definite covariance function over transformed feature vectors;
the linear and network kernels additionally expose a finite-dimensional
weight-space view used by the fast posterior path.

The network kernel linearizes the MLP at a fixed weight vector: with weights
``w = w0 + b`` and gradient features ``phi(x) = d out / d w |_{w0}``, the
function value is ``out(x; w0) + phi(x) . b`` exactly under the frozen
linearization, so conjugate Gaussian updates apply.  Gradients are computed
by explicit backpropagation through the tanh network.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Kernel",
    "LinearKernel",
    "RBFKernel",
    "NTKKernel",
    "MLPSpec",
    "init_mlp",
    "kernel_eval",
    "prior_mean",
    "ntk_features",
    "GRAM_JITTER",
]

# Added to Gram diagonals before any factorization.
GRAM_JITTER = 1e-8


class Kernel(ABC):
    """Prior over a real-valued function of transformed features."""

    kind: str

    @abstractmethod
    def mean(self, X: np.ndarray) -> np.ndarray:
        """Prior mean at each row of ``X``."""

    @abstractmethod
    def gram(self, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
        """Covariance matrix between the rows of ``X`` and ``X2``."""

    def has_weight_space(self) -> bool:
        """Whether this kernel admits an exact finite weight-space view."""
        return False


def _as_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


@dataclass(frozen=True)
class LinearKernel(Kernel):
    """Gaussian prior on linear weights: ``g(x) = x . gamma``.

    ``gamma ~ N(mu_gamma, sigma_gamma)`` induces mean ``x . mu_gamma`` and
    covariance ``x' Sigma x2``.
    """

    mu_gamma: np.ndarray
    sigma_gamma: np.ndarray

    kind = "linear"

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu_gamma, dtype=float)
        sig = np.asarray(self.sigma_gamma, dtype=float)
        object.__setattr__(self, "mu_gamma", mu)
        object.__setattr__(self, "sigma_gamma", sig)
        if sig.shape != (mu.shape[0], mu.shape[0]):
            raise ValueError("sigma_gamma must be square and match mu_gamma")
        if not np.allclose(sig, sig.T):
            raise ValueError("sigma_gamma must be symmetric")
        eigs = np.linalg.eigvalsh(sig)
        if eigs.min() < -1e-10 * max(1.0, eigs.max()):
            raise ValueError("sigma_gamma must be positive semi-definite")

    @classmethod
    def isotropic(cls, dim: int, prior_sd: float = 1.0, mean: float = 0.0) -> "LinearKernel":
        return cls(np.full(dim, mean), prior_sd**2 * np.eye(dim))

    def mean(self, X: np.ndarray) -> np.ndarray:
        return _as_matrix(X) @ self.mu_gamma

    def gram(self, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
        return _as_matrix(X) @ self.sigma_gamma @ _as_matrix(X2).T

    # weight-space view ------------------------------------------------------

    def has_weight_space(self) -> bool:
        return True

    @property
    def weight_dim(self) -> int:
        return int(self.mu_gamma.shape[0])

    @property
    def weight_mean(self) -> np.ndarray:
        return self.mu_gamma

    @property
    def weight_cov(self) -> np.ndarray:
        return self.sigma_gamma

    def weight_features(self, X: np.ndarray) -> np.ndarray:
        return _as_matrix(X)

    def mean_offset(self, X: np.ndarray) -> np.ndarray:
        """Part of the prior mean not explained by the weight features."""
        return np.zeros(_as_matrix(X).shape[0])


@dataclass(frozen=True)
class RBFKernel(Kernel):
    """Squared-exponential kernel with a zero prior mean by default.

    ``k(x, x2) = signal_scale^2 * exp(-|x - x2|^2 / (2 * lengthscale^2))``.
    """

    lengthscale: float = 1.0
    signal_scale: float = 1.0
    mean_const: float = 0.0

    kind = "rbf"

    def __post_init__(self) -> None:
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if not self.signal_scale > 0:
            raise ValueError("signal_scale must be positive")

    def mean(self, X: np.ndarray) -> np.ndarray:
        return np.full(_as_matrix(X).shape[0], self.mean_const)

    def gram(self, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
        A, B = _as_matrix(X), _as_matrix(X2)
        sq = (
            np.sum(A**2, axis=1)[:, None]
            + np.sum(B**2, axis=1)[None, :]
            - 2.0 * A @ B.T
        )
        np.maximum(sq, 0.0, out=sq)
        return self.signal_scale**2 * np.exp(-sq / (2.0 * self.lengthscale**2))


# ---------------------------------------------------------------------------
# Tanh MLP and its tangent kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MLPSpec:
    """A fully connected tanh network with ``depth`` weight matrices.

    Layer widths are ``input_dim -> width -> ... -> width -> 1`` with tanh on
    every hidden layer and a linear output; no bias terms.  ``weights`` is
    the flattened concatenation of the weight matrices in layer order.
    """

    depth: int
    width: int
    input_dim: int
    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.width < 1 or self.input_dim < 1:
            raise ValueError("width and input_dim must be >= 1")
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.shape != (self.n_params,):
            raise ValueError(
                f"weights must be a flat vector of length {self.n_params}, "
                f"got shape {w.shape}"
            )

    @property
    def layer_shapes(self) -> tuple[tuple[int, int], ...]:
        dims = [self.input_dim] + [self.width] * (self.depth - 1) + [1]
        return tuple((dims[i + 1], dims[i]) for i in range(self.depth))

    @property
    def n_params(self) -> int:
        return sum(r * c for r, c in self.layer_shapes)

    def unflatten(self, flat: np.ndarray | None = None) -> list[np.ndarray]:
        flat = self.weights if flat is None else np.asarray(flat, dtype=float)
        mats, pos = [], 0
        for r, c in self.layer_shapes:
            mats.append(flat[pos : pos + r * c].reshape(r, c))
            pos += r * c
        return mats

    def with_weights(self, flat: np.ndarray) -> "MLPSpec":
        return MLPSpec(self.depth, self.width, self.input_dim, np.asarray(flat, float))

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Network outputs for each row of ``X``."""
        h = _as_matrix(X).T
        mats = self.unflatten()
        for W in mats[:-1]:
            h = np.tanh(W @ h)
        return (mats[-1] @ h).ravel()

    def gradient_features(self, X: np.ndarray) -> np.ndarray:
        """Per-row gradient of the output w.r.t. the flattened weights.

        Returns an array of shape (rows, n_params).  The forward pass caches
        pre- and post-activation values, then one backward sweep accumulates
        d out / d W_l = delta_l . h_{l-1}' with delta propagated through the
        tanh derivatives.
        """
        X = _as_matrix(X)
        n = X.shape[0]
        mats = self.unflatten()
        acts = [X.T]  # post-activation inputs to each layer, d x n
        for W in mats[:-1]:
            acts.append(np.tanh(W @ acts[-1]))
        out = np.zeros((n, self.n_params))
        # delta starts as d out / d (W_L h_{L-1}) = 1 for the scalar output
        delta = np.ones((1, n))
        pos = self.n_params
        for l in range(self.depth - 1, -1, -1):
            W = mats[l]
            size = W.shape[0] * W.shape[1]
            pos -= size
            # d out / d W_l [i, j] = delta[i] * acts[l][j]
            grad = delta[:, None, :] * acts[l][None, :, :]  # (rows_l, cols_l, n)
            out[:, pos : pos + size] = grad.reshape(size, n).T
            if l > 0:
                delta = (W.T @ delta) * (1.0 - acts[l] ** 2)
        return out

    def to_file(self, path) -> None:
        """Flat weight dump with an architecture header."""
        with open(path, "w") as fh:
            fh.write(f"# depth={self.depth} width={self.width} "
                     f"input_dim={self.input_dim} activation=tanh\n")
            for w in self.weights:
                fh.write(repr(float(w)) + "\n")

    @classmethod
    def from_file(cls, path) -> "MLPSpec":
        with open(path) as fh:
            header = fh.readline().strip().lstrip("# ")
            fields = dict(kv.split("=") for kv in header.split())
            if fields.get("activation", "tanh") != "tanh":
                raise ValueError(f"unsupported activation {fields['activation']!r}")
            weights = np.array([float(line) for line in fh if line.strip()])
        return cls(int(fields["depth"]), int(fields["width"]),
                   int(fields["input_dim"]), weights)


def init_mlp(depth: int, width: int, input_dim: int, rng: np.random.Generator) -> MLPSpec:
    """Draw initial weights: hidden layers N(0, 4/width), output N(0, 2/width)."""
    if depth < 2:
        raise ValueError("depth must be >= 2")
    dims = [input_dim] + [width] * (depth - 1) + [1]
    parts = []
    for l in range(depth):
        var = 2.0 / width if l == depth - 1 else 4.0 / width
        parts.append(rng.normal(0.0, np.sqrt(var), size=dims[l + 1] * dims[l]))
    return MLPSpec(depth, width, input_dim, np.concatenate(parts))


@dataclass(frozen=True)
class NTKKernel(Kernel):
    """Tangent kernel of an MLP frozen at its linearization weights.

    The prior mean is the network forward pass at the linearization point;
    the covariance is the inner product of weight gradients, i.e. a unit
    Gaussian prior on the weight perturbation around that point.
    """

    mlp: MLPSpec

    kind = "ntk"

    def mean(self, X: np.ndarray) -> np.ndarray:
        return self.mlp.forward(X)

    def gram(self, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
        F1 = self.mlp.gradient_features(X)
        F2 = F1 if X2 is X else self.mlp.gradient_features(X2)
        return F1 @ F2.T

    # weight-space view ------------------------------------------------------

    def has_weight_space(self) -> bool:
        return True

    @property
    def weight_dim(self) -> int:
        return self.mlp.n_params

    @property
    def weight_mean(self) -> np.ndarray:
        return self.mlp.weights

    @property
    def weight_cov(self) -> np.ndarray:
        return np.eye(self.mlp.n_params)

    def weight_features(self, X: np.ndarray) -> np.ndarray:
        return self.mlp.gradient_features(X)

    def mean_offset(self, X: np.ndarray) -> np.ndarray:
        # forward(x) = offset(x) + phi(x) . w0 under the frozen linearization
        return self.mlp.forward(X) - self.mlp.gradient_features(X) @ self.mlp.weights

    def relinearized(self, weights: np.ndarray) -> "NTKKernel":
        """Same architecture linearized at new weights."""
        return NTKKernel(self.mlp.with_weights(weights))


# ---------------------------------------------------------------------------
# Functional wrappers over single points
# ---------------------------------------------------------------------------


def kernel_eval(spec: Kernel, x: np.ndarray, x2: np.ndarray) -> float:
    """Covariance between two single feature vectors."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return float(spec.gram(x[None, :], x2[None, :])[0, 0])


def prior_mean(spec: Kernel, x: np.ndarray) -> float:
    """Prior mean at a single feature vector."""
    return float(spec.mean(np.asarray(x, dtype=float)[None, :])[0])


def ntk_features(spec: MLPSpec, x: np.ndarray) -> np.ndarray:
    """Gradient of the network output w.r.t. the flattened weights at ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.input_dim,):
        raise ValueError(f"x must have shape ({spec.input_dim},), got {x.shape}")
    return spec.gradient_features(x[None, :])[0]
