"""Small MLPs on flat parameter vectors, plus squashed-Gaussian policy math.

All network weights live in a single flat float64 vector ("ParamVector")
using a fixed layer-major, weights-then-bias layout. That canonical
flattening is what the gossip layer slices into segments, so it must never
change. Forward passes come in two flavours: plain numpy (fast, no
gradients) and tape-built (see :mod:`gossipsac.autodiff`) for losses.

Policies are tanh-squashed diagonal Gaussians: the network emits a mean and
a log standard deviation per action dimension, actions are
``a = tanh(mu + delta * sigma)`` for standard-normal ``delta``, and
log-densities carry the tanh change-of-variables correction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
TANH_EPS = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))

GAUSSIAN_HEAD = "gaussian_mean_logstd"
SCALAR_Q_HEAD = "scalar_q"


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a fully connected ReLU network.

    ``layer_widths`` includes the input width and the output width, e.g.
    ``(6, 64, 64, 2)``. For ``gaussian_mean_logstd`` the output width must
    be twice the action dimension (mean then log-std); for ``scalar_q`` it
    must be 1.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    output_heads: str = GAUSSIAN_HEAD

    def __post_init__(self):
        if len(self.layer_widths) < 3:
            raise ValueError("need at least one hidden layer")
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.output_heads not in (GAUSSIAN_HEAD, SCALAR_Q_HEAD):
            raise ValueError(f"unknown output head {self.output_heads!r}")
        if self.output_heads == GAUSSIAN_HEAD and self.layer_widths[-1] % 2 != 0:
            raise ValueError("gaussian head needs an even output width")
        if self.output_heads == SCALAR_Q_HEAD and self.layer_widths[-1] != 1:
            raise ValueError("scalar_q head needs output width 1")

    @property
    def param_count(self) -> int:
        ws = self.layer_widths
        return sum(ws[i] * ws[i + 1] + ws[i + 1] for i in range(len(ws) - 1))

    @property
    def dim_in(self) -> int:
        return self.layer_widths[0]

    @property
    def dim_action(self) -> int:
        if self.output_heads != GAUSSIAN_HEAD:
            raise ValueError("dim_action only defined for gaussian head")
        return self.layer_widths[-1] // 2


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-sqrt(6/(fan_in+fan_out))) weights, zero biases."""
    chunks = []
    ws = spec.layer_widths
    for i in range(len(ws) - 1):
        n_in, n_out = ws[i], ws[i + 1]
        bound = np.sqrt(6.0 / (n_in + n_out))
        chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    return np.concatenate(chunks)


def _check_params(spec: MlpSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.param_count,):
        raise ValueError(
            f"expected {spec.param_count} parameters, got shape {params.shape}")
    return params


@lru_cache(maxsize=None)
def layer_slices(spec: MlpSpec) -> tuple[tuple[int, int, int, int], ...]:
    """(w_start, w_stop, b_stop, n_in) offsets of each layer in the flat vector."""
    out, pos = [], 0
    ws = spec.layer_widths
    for i in range(len(ws) - 1):
        n_in, n_out = ws[i], ws[i + 1]
        w_stop = pos + n_in * n_out
        out.append((pos, w_stop, w_stop + n_out, n_in))
        pos = w_stop + n_out
    return tuple(out)


def forward_batch(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Plain numpy forward on a (batch, dim_in) matrix."""
    params = _check_params(spec, params)
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != spec.dim_in:
        raise ValueError(f"expected input (*, {spec.dim_in}), got {h.shape}")
    slices = layer_slices(spec)
    for li, (w0, w1, b1, n_in) in enumerate(slices):
        w = params[w0:w1].reshape(n_in, -1)
        b = params[w1:b1]
        h = h @ w + b
        if li < len(slices) - 1:
            h = np.maximum(h, 0.0)
    return h


def forward(spec: MlpSpec, params: np.ndarray, x: Sequence[float]) -> np.ndarray:
    """Single-input forward; pure function of (params, input)."""
    return forward_batch(spec, params, np.asarray(x, dtype=np.float64)[None, :])[0]


def forward_tape(spec: MlpSpec, params, x):
    """Tape forward; ``params`` may be a flat Tensor, layer leaves from
    :func:`layer_leaves`, or a constant vector. ``x`` may be a Tensor."""
    if isinstance(params, list):
        return forward_leaves(spec, params, x)
    h = x
    slices = layer_slices(spec)
    params_is_node = isinstance(params, ad.Tensor)
    raw = params.value if params_is_node else _check_params(spec, params)
    if raw.shape != (spec.param_count,):
        raise ValueError("parameter count mismatch")
    for li, (w0, w1, b1, n_in) in enumerate(slices):
        if params_is_node:
            w = ad.reshape(ad.narrow(params, w0, w1), (n_in, -1))
            b = ad.narrow(params, w1, b1)
        else:
            w = raw[w0:w1].reshape(n_in, -1)
            b = raw[w1:b1]
        h = ad.add(ad.matmul(h, w), b)
        if li < len(slices) - 1:
            h = ad.relu(h)
    return h


def grad(loss_fn: Callable[[ad.Tensor], ad.Tensor], params: np.ndarray) -> np.ndarray:
    """Reverse-mode gradient of a scalar loss built from tape primitives."""
    leaf = ad.Tensor(np.array(params, dtype=np.float64))
    loss = loss_fn(leaf)
    ad.backward(loss)
    if leaf.grad is None:
        return np.zeros_like(leaf.value)
    return leaf.grad


def layer_leaves(spec: MlpSpec, params: np.ndarray) -> list[tuple[ad.Tensor, ad.Tensor]]:
    """Per-layer (weight, bias) leaf tensors viewing the flat vector.

    Cheaper than slicing a single flat leaf on the tape; pair with
    :func:`collect_leaf_grad` to assemble the flat gradient.
    """
    params = _check_params(spec, params)
    leaves = []
    for w0, w1, b1, n_in in layer_slices(spec):
        leaves.append((ad.Tensor(params[w0:w1].reshape(n_in, -1)),
                       ad.Tensor(params[w1:b1])))
    return leaves


def forward_leaves(spec: MlpSpec, leaves, x):
    """Tape forward through per-layer leaf tensors."""
    h = x
    last = len(leaves) - 1
    for li, (w, b) in enumerate(leaves):
        h = ad.add(ad.matmul(h, w), b)
        if li < last:
            h = ad.relu(h)
    return h


def collect_leaf_grad(spec: MlpSpec, leaves) -> np.ndarray:
    """Flatten per-layer leaf gradients back into ParamVector layout."""
    out = np.zeros(spec.param_count)
    for (w, b), (w0, w1, b1, _) in zip(leaves, layer_slices(spec)):
        if w.grad is not None:
            out[w0:w1] = w.grad.ravel()
        if b.grad is not None:
            out[w1:b1] = b.grad
    return out


# ---------------------------------------------------------------------------
# Squashed-Gaussian policy math (numpy paths)
# ---------------------------------------------------------------------------

def policy_heads(spec: MlpSpec, theta: np.ndarray, states: np.ndarray):
    """(mean, clamped log-std) for a batch of states."""
    out = forward_batch(spec, theta, states)
    dim_a = spec.dim_action
    mu = out[:, :dim_a]
    log_std = np.clip(out[:, dim_a:], LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std


def _squash_logp(delta: np.ndarray, log_std: np.ndarray, actions: np.ndarray) -> np.ndarray:
    gauss = -0.5 * delta * delta - log_std - 0.5 * LOG_2PI
    corr = np.log(1.0 - actions * actions + TANH_EPS)
    return (gauss - corr).sum(axis=-1)


def sample_actions(spec: MlpSpec, theta: np.ndarray, states: np.ndarray,
                   delta: np.ndarray):
    """Reparameterized batch sample: a = tanh(mu + delta*sigma), with log-prob.

    ``delta`` must be standard-normal draws of shape (batch, dim_action);
    the caller owns the randomness.
    """
    mu, log_std = policy_heads(spec, theta, states)
    u = mu + delta * np.exp(log_std)
    a = np.tanh(u)
    return a, _squash_logp(delta, log_std, a)


def sample_action(spec: MlpSpec, theta: np.ndarray, state: Sequence[float],
                  delta: Sequence[float]):
    """Single-state version of :func:`sample_actions`."""
    s = np.asarray(state, dtype=np.float64)[None, :]
    d = np.asarray(delta, dtype=np.float64)[None, :]
    a, logp = sample_actions(spec, theta, s, d)
    return a[0], float(logp[0])


def logprob_batch(spec: MlpSpec, theta: np.ndarray, states: np.ndarray,
                  actions: np.ndarray) -> np.ndarray:
    """log pi(a|s) for given squashed actions, all |a| < 1."""
    actions = np.asarray(actions, dtype=np.float64)
    if np.any(np.abs(actions) >= 1.0):
        raise ValueError("squashed actions must lie strictly inside (-1, 1)")
    mu, log_std = policy_heads(spec, theta, states)
    u = np.arctanh(actions)
    delta = (u - mu) * np.exp(-log_std)
    return _squash_logp(delta, log_std, actions)


def logprob(spec: MlpSpec, theta: np.ndarray, state, action) -> float:
    s = np.asarray(state, dtype=np.float64)[None, :]
    a = np.asarray(action, dtype=np.float64)[None, :]
    return float(logprob_batch(spec, theta, s, a)[0])


def entropy_estimate_with_noise(spec: MlpSpec, theta: np.ndarray,
                                states: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Per-state Monte Carlo entropy using caller-supplied normal draws.

    ``noise`` has shape (batch, K, dim_action); sharing it between two
    policies makes their entropy difference vanish exactly when the
    parameters coincide.
    """
    b, k, dim_a = noise.shape
    mu, log_std = policy_heads(spec, theta, states)
    u = mu[:, None, :] + noise * np.exp(log_std)[:, None, :]
    a = np.tanh(u)
    gauss = -0.5 * noise * noise - log_std[:, None, :] - 0.5 * LOG_2PI
    corr = np.log(1.0 - a * a + TANH_EPS)
    logp = (gauss - corr).sum(axis=-1)
    return -logp.mean(axis=1)


def entropy_estimate(spec: MlpSpec, theta: np.ndarray, state, n_samples: int,
                     rng: np.random.Generator) -> float:
    """Monte Carlo entropy of pi(.|state) from ``n_samples`` fresh draws."""
    s = np.asarray(state, dtype=np.float64)[None, :]
    noise = rng.standard_normal((1, n_samples, spec.dim_action))
    return float(entropy_estimate_with_noise(spec, theta, s, noise)[0])


# ---------------------------------------------------------------------------
# Tape builders for the SAC losses
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _head_selectors(spec: MlpSpec):
    """Constant matrices picking the mean / log-std columns of the output."""
    dim_a = spec.dim_action
    n_out = spec.layer_widths[-1]
    sel_mu = np.zeros((n_out, dim_a))
    sel_ls = np.zeros((n_out, dim_a))
    for j in range(dim_a):
        sel_mu[j, j] = 1.0
        sel_ls[dim_a + j, j] = 1.0
    return sel_mu, sel_ls


def policy_heads_tape(spec: MlpSpec, theta_node, states: np.ndarray):
    """Tape nodes (mu, clamped log-std) for a batch of constant states."""
    out = forward_tape(spec, theta_node, states)
    sel_mu, sel_ls = _head_selectors(spec)
    mu = ad.matmul(out, sel_mu)
    log_std = ad.clip(ad.matmul(out, sel_ls), LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std


def reparam_logp_tape(spec: MlpSpec, theta_node, states: np.ndarray,
                      noise: np.ndarray):
    """Tape node pair (actions, per-sample log-prob) for the reparam path."""
    mu, log_std = policy_heads_tape(spec, theta_node, states)
    u = ad.add(mu, ad.mul(ad.exp(log_std), noise))
    a = ad.tanh(u)
    gauss_const = (-0.5 * noise * noise - 0.5 * LOG_2PI).sum(axis=1)
    corr = ad.log(ad.add(ad.neg(ad.mul(a, a)), 1.0 + TANH_EPS))
    logp = ad.add(ad.neg(ad.sum_(ad.add(log_std, corr), axis=1)), gauss_const)
    return a, logp


def logprob_tape(spec: MlpSpec, theta_node, states: np.ndarray,
                 actions: np.ndarray):
    """Tape node of log pi(a|s) for fixed actions (no reparam path)."""
    actions = np.asarray(actions, dtype=np.float64)
    mu, log_std = policy_heads_tape(spec, theta_node, states)
    u = np.arctanh(actions)
    z = ad.mul(ad.sub(u, mu), ad.exp(ad.neg(log_std)))
    gauss = ad.sub(ad.mul(ad.square(z), -0.5), ad.add(log_std, 0.5 * LOG_2PI))
    corr_const = np.log(1.0 - actions * actions + TANH_EPS).sum(axis=1)
    return ad.sub(ad.sum_(gauss, axis=1), corr_const)


def q_values_tape(spec: MlpSpec, omega, states: np.ndarray, actions_node):
    """Critic value with constant states and a (possibly Tensor) action input."""
    x = ad.concat(states, actions_node, axis=1) if isinstance(actions_node, ad.Tensor) \
        else np.concatenate([states, np.asarray(actions_node)], axis=1)
    out = forward_tape(spec, omega, x)
    return ad.reshape(out, (-1,))


def q_values(spec: MlpSpec, omega: np.ndarray, states: np.ndarray,
             actions: np.ndarray) -> np.ndarray:
    """Plain numpy critic values for (state, action) batches."""
    x = np.concatenate([states, actions], axis=1)
    return forward_batch(spec, omega, x)[:, 0]


# ---------------------------------------------------------------------------
# Object views used by the mixing estimators
# ---------------------------------------------------------------------------

class SquashedGaussianPolicy:
    """A (spec, theta) pair exposing the sampling/density interface.

    The mixing estimators only talk to this interface (``logprob``,
    ``sample``, ``entropy_with_noise``, ``score``), which lets an exact
    tabular policy stand in for a network during verification.
    """

    def __init__(self, spec: MlpSpec, theta: np.ndarray):
        self.spec = spec
        self.theta = _check_params(spec, theta)

    def draw_noise(self, rng: np.random.Generator, n_states: int, k: int) -> np.ndarray:
        return rng.standard_normal((n_states, k, self.spec.dim_action))

    def sample(self, states: np.ndarray, rng: np.random.Generator):
        delta = rng.standard_normal((states.shape[0], self.spec.dim_action))
        return sample_actions(self.spec, self.theta, states, delta)

    def logprob(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        # replayed actions can sit at exactly +-1.0 after float saturation
        # of tanh; nudge them inside the open interval the density lives on
        actions = np.clip(actions, -1.0 + 1e-12, 1.0 - 1e-12)
        return logprob_batch(self.spec, self.theta, states, actions)

    def entropy_with_noise(self, states: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return entropy_estimate_with_noise(self.spec, self.theta, states, noise)

    def score(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Per-sample d log pi(a|s) / d theta, one row per (s, a)."""
        rows = np.empty((states.shape[0], self.theta.size))
        for i in range(states.shape[0]):
            rows[i] = grad(
                lambda th, s=states[i:i + 1], a=actions[i:i + 1]:
                    ad.sum_(logprob_tape(self.spec, th, s, a)),
                self.theta)
        return rows

    def mean_score(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Batch-mean score in one backward pass (equals score(...).mean(0))."""
        actions = np.clip(actions, -1.0 + 1e-12, 1.0 - 1e-12)
        leaves = layer_leaves(self.spec, self.theta)
        loss = ad.mean_(logprob_tape(self.spec, leaves, states, actions))
        ad.backward(loss)
        return collect_leaf_grad(self.spec, leaves)


class TwinCritics:
    """Clipped double-Q view over two flat critic parameter vectors."""

    def __init__(self, spec: MlpSpec, omega1: np.ndarray, omega2: np.ndarray):
        self.spec = spec
        self.omega1 = _check_params(spec, omega1)
        self.omega2 = _check_params(spec, omega2)

    def min_q(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.minimum(q_values(self.spec, self.omega1, states, actions),
                          q_values(self.spec, self.omega2, states, actions))
