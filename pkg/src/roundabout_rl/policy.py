"""Gaussian MLP policy and value networks with analytic gradients.

Networks are tanh MLPs evaluated in double precision.  The policy head
emits a state-independent diagonal Gaussian: the mean comes from the
final affine layer and the log-std is a free parameter vector.  All
gradient paths are hand-derived (no autodiff dependency) and are
checked against finite differences in the test suite.

Weight files are NumPy ``.npz`` archives with the layout::

    format_version : int, currently 1
    layer_dims     : int array, e.g. [62, 100, 50, 25, 2]
    weight_0..N    : float64 matrices, row-major (in_dim, out_dim)
    bias_0..N      : float64 vectors
    log_std        : float64 vector (policy networks only)

so an external process can reconstruct the network from the file alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class WeightFormatError(Exception):
    """Raised when a weight file is missing, corrupt, or mismatched."""


@dataclass
class MlpParameters:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    log_std: np.ndarray | None = None

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpParameters":
        return MlpParameters(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            log_std=None if self.log_std is None else self.log_std.copy(),
        )

    def flat_arrays(self) -> list[np.ndarray]:
        """All trainable arrays, in a fixed order."""
        arrays = []
        for w, b in zip(self.weights, self.biases):
            arrays.extend([w, b])
        if self.log_std is not None:
            arrays.append(self.log_std)
        return arrays


@dataclass
class GaussianPolicyOutput:
    mean: np.ndarray
    std: np.ndarray


def init_params(
    layer_dims: tuple[int, ...],
    rng: np.random.Generator,
    with_log_std: bool = True,
    log_std_init: float = 0.0,
) -> MlpParameters:
    """Scaled uniform fan-in initialization; biases start at zero."""
    if len(layer_dims) < 2 or any(d <= 0 for d in layer_dims):
        raise ValueError(f"invalid layer dims {layer_dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    log_std = np.full(layer_dims[-1], float(log_std_init)) if with_log_std else None
    return MlpParameters(tuple(layer_dims), weights, biases, log_std)


# -- forward / backward ----------------------------------------------------

def mlp_forward(params: MlpParameters, x: np.ndarray) -> np.ndarray:
    """Batched tanh MLP: hidden layers tanh, output layer linear."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != params.input_dim:
        raise ValueError(
            f"input dim {h.shape[1]} does not match network input {params.input_dim}"
        )
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = np.tanh(h)
    return h[0] if squeeze else h


def mlp_forward_cached(params: MlpParameters, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping post-activation values for backprop."""
    h = np.atleast_2d(np.asarray(x, dtype=float))
    if h.shape[1] != params.input_dim:
        raise ValueError(
            f"input dim {h.shape[1]} does not match network input {params.input_dim}"
        )
    activations = [h]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = np.tanh(h)
        activations.append(h)
    return h, activations


def mlp_backward(
    params: MlpParameters,
    activations: list[np.ndarray],
    d_out: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of sum(d_out * output) w.r.t. weights and biases."""
    d_w = [None] * len(params.weights)
    d_b = [None] * len(params.biases)
    grad = np.atleast_2d(d_out)
    for i in reversed(range(len(params.weights))):
        if i < len(params.weights) - 1:
            grad = grad * (1.0 - activations[i + 1] ** 2)
        d_w[i] = activations[i].T @ grad
        d_b[i] = grad.sum(axis=0)
        if i > 0:
            grad = grad @ params.weights[i].T
    return d_w, d_b


# -- Gaussian policy head ----------------------------------------------------

LOG_2PI = float(np.log(2.0 * np.pi))


def forward(params: MlpParameters, obs: np.ndarray) -> GaussianPolicyOutput:
    """Distribution parameters for a single observation."""
    if params.log_std is None:
        raise ValueError("network has no log_std head; not a policy network")
    mean = mlp_forward(params, obs)
    return GaussianPolicyOutput(mean=mean, std=np.exp(params.log_std))


def log_prob(out: GaussianPolicyOutput, action: np.ndarray) -> float:
    """Diagonal-Gaussian log density, summed over action dimensions."""
    action = np.asarray(action, dtype=float)
    if action.shape != out.mean.shape:
        raise ValueError("action and mean dimensions differ")
    z = (action - out.mean) / out.std
    return float(-0.5 * np.sum(z**2) - np.sum(np.log(out.std)) - 0.5 * len(z) * LOG_2PI)


def log_prob_batch(means: np.ndarray, log_std: np.ndarray, actions: np.ndarray) -> np.ndarray:
    z = (actions - means) / np.exp(log_std)
    return -0.5 * np.sum(z**2, axis=1) - np.sum(log_std) - 0.5 * means.shape[1] * LOG_2PI


def entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))


def sample_action(out: GaussianPolicyOutput, rng: np.random.Generator) -> np.ndarray:
    return out.mean + out.std * rng.standard_normal(len(out.mean))


@dataclass
class MlpGradients:
    """Parameter-shaped gradient container mirroring MlpParameters."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_log_std: np.ndarray | None = None

    def flat_arrays(self) -> list[np.ndarray]:
        arrays = []
        for w, b in zip(self.d_weights, self.d_biases):
            arrays.extend([w, b])
        if self.d_log_std is not None:
            arrays.append(self.d_log_std)
        return arrays


def weighted_log_prob_grad(
    params: MlpParameters,
    obs: np.ndarray,
    actions: np.ndarray,
    weights: np.ndarray,
) -> MlpGradients:
    """Gradient of sum_i weights[i] * log pi(actions[i] | obs[i]).

    This is the single gradient primitive the policy update needs; the
    per-sample chain through the mean network and the shared log-std
    head are both handled here.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    weights = np.asarray(weights, dtype=float).reshape(-1)
    means, cache = mlp_forward_cached(params, obs)
    std = np.exp(params.log_std)
    z = (actions - means) / std
    d_mean = weights[:, None] * z / std
    d_w, d_b = mlp_backward(params, cache, d_mean)
    d_log_std = np.sum(weights[:, None] * (z**2 - 1.0), axis=0)
    return MlpGradients(d_w, d_b, d_log_std)


def output_weighted_grad(
    params: MlpParameters,
    obs: np.ndarray,
    d_out: np.ndarray,
) -> MlpGradients:
    """Gradient of sum(d_out * network_output) w.r.t. parameters."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    _, cache = mlp_forward_cached(params, obs)
    d_w, d_b = mlp_backward(params, cache, np.atleast_2d(d_out))
    d_log_std = np.zeros_like(params.log_std) if params.log_std is not None else None
    return MlpGradients(d_w, d_b, d_log_std)


# -- serialization -----------------------------------------------------------

WEIGHT_FORMAT_VERSION = 1


def save_weights(params: MlpParameters, path) -> None:
    payload = {
        "format_version": np.array(WEIGHT_FORMAT_VERSION),
        "layer_dims": np.array(params.layer_dims, dtype=np.int64),
    }
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"weight_{i}"] = w
        payload[f"bias_{i}"] = b
    if params.log_std is not None:
        payload["log_std"] = params.log_std
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_weights(path) -> MlpParameters:
    try:
        archive = np.load(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise WeightFormatError(f"cannot read weight file {path}: {exc}") from exc
    with archive:
        try:
            version = int(archive["format_version"])
            if version != WEIGHT_FORMAT_VERSION:
                raise WeightFormatError(
                    f"weight file {path} has format version {version}, "
                    f"expected {WEIGHT_FORMAT_VERSION}"
                )
            layer_dims = tuple(int(d) for d in archive["layer_dims"])
            weights, biases = [], []
            for i, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
                w = archive[f"weight_{i}"]
                b = archive[f"bias_{i}"]
                if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                    raise WeightFormatError(
                        f"weight file {path}: layer {i} shapes {w.shape}/{b.shape} "
                        f"do not match layer_dims {layer_dims}"
                    )
                weights.append(w.astype(float))
                biases.append(b.astype(float))
            log_std = None
            if "log_std" in archive.files:
                log_std = archive["log_std"].astype(float)
                if log_std.shape != (layer_dims[-1],):
                    raise WeightFormatError(
                        f"weight file {path}: log_std shape {log_std.shape} "
                        f"does not match output dim {layer_dims[-1]}"
                    )
        except KeyError as exc:
            raise WeightFormatError(f"weight file {path} is missing array {exc}") from exc
    params = MlpParameters(layer_dims, weights, biases, log_std)
    if not all(np.all(np.isfinite(a)) for a in params.flat_arrays()):
        raise WeightFormatError(f"weight file {path} contains non-finite values")
    return params
