"""Shared test fixtures: oracle policies and finite differences."""

import numpy as np


class LinearGaussianPolicy:
    """Test-only unsquashed policy: a ~ N(theta, 1) with scalar theta.

    Its Fisher information is exactly 1, giving an analytic oracle for the
    Fisher estimator.
    """

    def __init__(self, theta: float):
        self.theta = float(theta)

    def draw_noise(self, rng, n_states, k):
        return rng.standard_normal((n_states, k))

    def sample(self, states, rng):
        a = self.theta + rng.standard_normal(states.shape[0])
        return a[:, None], self.logprob(states, a[:, None])

    def logprob(self, states, actions):
        a = np.asarray(actions).reshape(-1)
        return -0.5 * (a - self.theta) ** 2 - 0.5 * np.log(2 * np.pi)

    def entropy_with_noise(self, states, noise):
        return (0.5 * noise**2 + 0.5 * np.log(2 * np.pi)).mean(axis=1)

    def score(self, states, actions):
        a = np.asarray(actions).reshape(-1)
        return (a - self.theta)[:, None]


def fd_gradient(loss_of_params, params, h=1e-5):
    """Central finite differences over a flat parameter vector."""
    g = np.zeros_like(params)
    for i in range(params.size):
        up, dn = params.copy(), params.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (loss_of_params(up) - loss_of_params(dn)) / (2 * h)
    return g
