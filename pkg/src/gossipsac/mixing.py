"""Regulated parameter mixing: advantage test, Fisher metric, step bound.

A reconstructed referential parameter vector is only folded into an
agent's policy when (a) an importance-sampled estimate of the
entropy-augmented policy advantage is positive and (b) the mixing step is
capped by the curvature bound sqrt(2 A / (C q)), where
C = 2 eps gamma / (1-gamma)^2 and q is the Fisher quadratic form of the
parameter difference. Everything estimator-shaped here is generic over a
policy/critic interface (see :class:`gossipsac.nets.SquashedGaussianPolicy`
and the tabular adapters), so the same code paths run against exact
oracles in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "MixConfig", "MixDecision", "AdvantageDetails", "advantage_details",
    "estimate_policy_advantage", "score_samples", "fim_from_scores",
    "estimate_fim", "quad_form_from_scores", "estimate_epsilon",
    "zeta_upper_bound", "zeta_bound_from_quad", "mix_parameters", "comm_mix",
]

FIM_FULL = "full"
FIM_BATCH_MEAN = "batch_mean"


@dataclass(frozen=True)
class MixConfig:
    n_samples: int = 50          # transitions per advantage estimate
    k_entropy: int = 16          # Monte Carlo draws per per-state entropy
    n_value_actions: int = 8     # action draws for the state-value estimate
    n_fim_actions: int = 1       # action draws per state for Fisher scores
    c_safety: float = 0.9        # fraction of the bound actually used
    zeta_cap: float = 1.0
    weight_clip: float = 20.0    # importance-weight magnitude cap
    epsilon_floor: float = 1e-6
    fim_mode: str = FIM_BATCH_MEAN


@dataclass(frozen=True)
class MixDecision:
    """Outcome of evaluating one referential parameter vector."""

    advantage: float
    epsilon: float
    c_const: float
    quad_form: float
    zeta_bound: float   # math.inf marks a degenerate (zero-curvature) direction
    zeta_used: float
    accepted: bool
    weights_clipped: int = 0
    low_confidence: bool = False


class AdvantageDetails(NamedTuple):
    estimate: float
    per_sample: np.ndarray
    n_clipped: int

    @property
    def standard_error(self) -> float:
        n = self.per_sample.size
        if n < 2:
            return float("inf")
        return float(self.per_sample.std(ddof=1) / math.sqrt(n))


def advantage_details(policy, ref_policy, critic, alpha: float,
                      states: np.ndarray, actions: np.ndarray,
                      behavior_logps: np.ndarray, rng: np.random.Generator,
                      k_entropy: int, weight_clip: float) -> AdvantageDetails:
    """Importance-sampled advantage estimate with per-sample terms.

    Each term is (ref density - own density) / sampling density times the
    pessimistic critic value, plus alpha times the entropy difference of
    the two policies at the state. Entropy estimates share one noise draw
    so the difference cancels exactly for identical parameters.
    """
    actions = np.asarray(actions, dtype=np.float64)
    lp_ref = ref_policy.logprob(states, actions)
    lp_cur = policy.logprob(states, actions)
    weights = (np.exp(lp_ref) - np.exp(lp_cur)) * np.exp(-behavior_logps)
    clipped = np.abs(weights) > weight_clip
    weights = np.clip(weights, -weight_clip, weight_clip)
    q = critic.min_q(states, actions)
    noise = policy.draw_noise(rng, states.shape[0], k_entropy)
    h_ref = ref_policy.entropy_with_noise(states, noise)
    h_cur = policy.entropy_with_noise(states, noise)
    terms = weights * q + alpha * (h_ref - h_cur)
    return AdvantageDetails(float(terms.mean()), terms, int(clipped.sum()))


def estimate_policy_advantage(policy, ref_policy, critic, alpha, states,
                              actions, behavior_logps, rng,
                              k_entropy: int = 16,
                              weight_clip: float = 20.0) -> float:
    return advantage_details(policy, ref_policy, critic, alpha, states,
                             actions, behavior_logps, rng, k_entropy,
                             weight_clip).estimate


def score_samples(policy, states: np.ndarray, rng: np.random.Generator,
                  n_actions: int = 1) -> np.ndarray:
    """Score rows d log pi(a|s)/d theta for fresh actions a ~ pi(.|s)."""
    if n_actions < 1:
        raise ValueError("need at least one action per state")
    rep = np.repeat(states, n_actions, axis=0)
    actions, _ = policy.sample(rep, rng)
    return policy.score(rep, actions)


def fim_from_scores(scores: np.ndarray, mode: str = FIM_FULL) -> np.ndarray:
    """Fisher estimate from score rows: mean outer product, or the outer
    product of the mean score in the cheap batch-average mode."""
    if mode == FIM_FULL:
        return scores.T @ scores / scores.shape[0]
    if mode == FIM_BATCH_MEAN:
        g = scores.mean(axis=0)
        return np.outer(g, g)
    raise ValueError(f"unknown FIM mode {mode!r}")


def quad_form_from_scores(scores: np.ndarray, delta: np.ndarray,
                          mode: str = FIM_BATCH_MEAN) -> float:
    """delta^T F delta without materializing F."""
    proj = scores @ delta
    if mode == FIM_FULL:
        return float(np.mean(proj * proj))
    if mode == FIM_BATCH_MEAN:
        return float(proj.mean() ** 2)
    raise ValueError(f"unknown FIM mode {mode!r}")


def estimate_fim(policy, states: np.ndarray, rng: np.random.Generator,
                 n_actions: int = 1, mode: str = FIM_FULL) -> np.ndarray:
    """Monte Carlo Fisher matrix over buffer states and on-policy actions."""
    return fim_from_scores(score_samples(policy, states, rng, n_actions), mode)


def estimate_epsilon(policy, ref_policy, critic, alpha: float,
                     states: np.ndarray, rng: np.random.Generator,
                     n_value_actions: int = 8, k_entropy: int = 16) -> float:
    """Batch max of |E_{a~ref}[A(s,a)] + alpha H(ref(.|s))| estimates.

    The state value inside the advantage is itself Monte Carlo: the mean
    over on-policy draws of min-Q minus alpha times the log-density.
    """
    b = states.shape[0]
    rep = np.repeat(states, n_value_actions, axis=0)
    a_own, lp_own = policy.sample(rep, rng)
    v_hat = (critic.min_q(rep, a_own) - alpha * lp_own) \
        .reshape(b, n_value_actions).mean(axis=1)
    a_ref, _ = ref_policy.sample(rep, rng)
    q_ref = critic.min_q(rep, a_ref).reshape(b, n_value_actions).mean(axis=1)
    noise = ref_policy.draw_noise(rng, b, k_entropy)
    h_ref = ref_policy.entropy_with_noise(states, noise)
    per_state = q_ref - v_hat + alpha * h_ref
    return float(np.max(np.abs(per_state)))


def zeta_bound_from_quad(advantage: float, epsilon: float, gamma: float,
                         quad_form: float) -> float:
    """sqrt(2 A / (C q)); infinite when the denominator degenerates."""
    if advantage <= 0.0:
        raise ValueError("bound only defined for positive advantage")
    c_const = 2.0 * epsilon * gamma / (1.0 - gamma) ** 2
    denom = c_const * quad_form
    if denom < 1e-12:
        return math.inf
    return math.sqrt(2.0 * advantage / denom)


def zeta_upper_bound(advantage: float, epsilon: float, gamma: float,
                     delta: np.ndarray, fim: np.ndarray) -> float:
    return zeta_bound_from_quad(advantage, epsilon, gamma,
                                float(delta @ fim @ delta))


def mix_parameters(theta: np.ndarray, theta_ref: np.ndarray,
                   zeta: float) -> np.ndarray:
    """theta + zeta (theta_ref - theta), elementwise."""
    theta = np.asarray(theta, dtype=np.float64)
    theta_ref = np.asarray(theta_ref, dtype=np.float64)
    if theta.shape != theta_ref.shape:
        raise ValueError("parameter vectors differ in length")
    if not 0.0 <= zeta <= 1.0:
        raise ValueError("zeta must lie in [0, 1]")
    return theta + zeta * (theta_ref - theta)


def comm_mix(agent, referentials: Sequence[np.ndarray], cfg: MixConfig,
             rng: np.random.Generator):
    """Evaluate referential policies in arrival order, mixing the keepers.

    Each referential is judged against the agent's *current* parameters,
    so an accepted mix shifts the baseline for the replicas after it.
    Returns the final parameter vector and one decision record per
    referential (rejects included).
    """
    from .nets import SquashedGaussianPolicy  # local import to avoid cycle

    decisions: list[MixDecision] = []
    gamma = agent.cfg.gamma
    for theta_ref in referentials:
        batch = agent.buffer.sample(cfg.n_samples, rng)
        policy = SquashedGaussianPolicy(agent.policy_spec, agent.theta)
        ref = SquashedGaussianPolicy(agent.policy_spec, theta_ref)
        critic = agent.critics()
        det = advantage_details(policy, ref, critic, agent.alpha,
                                batch.states, batch.actions,
                                batch.behavior_logps, rng,
                                cfg.k_entropy, cfg.weight_clip)
        low_confidence = det.n_clipped == det.per_sample.size
        if det.estimate <= 0.0:
            decisions.append(MixDecision(
                advantage=det.estimate, epsilon=0.0, c_const=0.0,
                quad_form=0.0, zeta_bound=0.0, zeta_used=0.0, accepted=False,
                weights_clipped=det.n_clipped, low_confidence=low_confidence))
            continue
        delta = theta_ref - agent.theta
        if cfg.fim_mode == FIM_BATCH_MEAN and hasattr(policy, "mean_score"):
            rep = np.repeat(batch.states, cfg.n_fim_actions, axis=0)
            fresh_actions, _ = policy.sample(rep, rng)
            g_bar = policy.mean_score(rep, fresh_actions)
            quad = float(g_bar @ delta) ** 2
        else:
            scores = score_samples(policy, batch.states, rng, cfg.n_fim_actions)
            quad = quad_form_from_scores(scores, delta, cfg.fim_mode)
        eps = max(estimate_epsilon(policy, ref, critic, agent.alpha,
                                   batch.states, rng, cfg.n_value_actions,
                                   cfg.k_entropy),
                  cfg.epsilon_floor)
        c_const = 2.0 * eps * gamma / (1.0 - gamma) ** 2
        bound = zeta_bound_from_quad(det.estimate, eps, gamma, quad)
        zeta = min(cfg.zeta_cap, cfg.c_safety * bound)
        agent.theta = mix_parameters(agent.theta, theta_ref, zeta)
        decisions.append(MixDecision(
            advantage=det.estimate, epsilon=eps, c_const=c_const,
            quad_form=quad, zeta_bound=bound, zeta_used=zeta, accepted=True,
            weights_clipped=det.n_clipped, low_confidence=low_confidence))
    return agent.theta, decisions
