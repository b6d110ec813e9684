"""Exact soft-MDP computations and numerical checks of the mixing bounds.

Everything here is closed-form linear algebra on small finite MDPs: soft
policy evaluation by direct linear solve, the exact entropy-augmented
policy advantage, beta-skew Jensen-Shannon divergence, and instance-level
verification of the mixed-policy improvement bound, its tractable
corollary, the supporting per-state identities, and the second-order
KL/Fisher expansion that justifies the parameter-space mixing metric.

Discounted state-visitation weights come in two flavours. ``d_pi`` is the
raw series sum(t) gamma^t P(s_t = s) (total mass 1/(1-gamma)); ``d_hat``
rescales it to a probability vector. The bound checks use the raw measure,
which is the one under which the telescoping identity behind them is exact;
the advantage oracle reports the normalized value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .envs import TabularSoftMdp

__all__ = [
    "SoftEvaluation", "soft_policy_evaluation", "entropy_rows", "js_beta",
    "js_beta_rows", "mix_distributions", "exact_policy_advantage",
    "exact_epsilon", "Theorem1Result", "theorem1_check", "CorollaryResult",
    "corollary1_check", "LemmaReport", "lemma_checks", "soft_greedy_policy",
    "softmax_rows", "kl_rows", "per_state_quad_forms", "exact_fim_softmax",
    "TaylorReport", "kl_and_fim_taylor_check", "TabularPolicyAdapter",
    "TabularMinQ",
]


def entropy_rows(pi: np.ndarray) -> np.ndarray:
    """Shannon entropy of each policy row, with 0*log(0) = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pi > 0.0, pi * np.log(pi), 0.0)
    return -terms.sum(axis=-1)


def validate_policy(pi: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (n_states, n_actions):
        raise ValueError(f"policy must have shape {(n_states, n_actions)}")
    if np.min(pi) < 0 or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("policy rows must be distributions")
    return pi


@dataclass
class SoftEvaluation:
    """Exact soft values of one policy on one MDP."""

    v: np.ndarray       # (S,)
    q: np.ndarray       # (S, A)
    advantage: np.ndarray  # (S, A) = q - v
    eta: float          # rho0 . v
    d_pi: np.ndarray    # (S,) discounted visitation, total mass 1/(1-gamma)

    @property
    def d_hat(self) -> np.ndarray:
        return self.d_pi / self.d_pi.sum()


def soft_policy_evaluation(mdp: TabularSoftMdp, pi: np.ndarray) -> SoftEvaluation:
    """Solve (I - gamma P_pi) V = r_pi + alpha H_pi exactly."""
    pi = validate_policy(pi, mdp.n_states, mdp.n_actions)
    r_pi = (pi * mdp.rewards).sum(axis=1)
    h_pi = entropy_rows(pi)
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    eye = np.eye(mdp.n_states)
    v = np.linalg.solve(eye - mdp.gamma * p_pi, r_pi + mdp.alpha * h_pi)
    q = mdp.rewards + mdp.gamma * np.einsum("sat,t->sa", mdp.transitions, v)
    d_pi = np.linalg.solve(eye - mdp.gamma * p_pi.T, mdp.rho0)
    return SoftEvaluation(v=v, q=q, advantage=q - v[:, None],
                          eta=float(mdp.rho0 @ v), d_pi=d_pi)


def mix_distributions(pi: np.ndarray, pi_ref: np.ndarray, beta: float) -> np.ndarray:
    """Row-wise convex combination (1-beta) pi + beta pi_ref."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return (1.0 - beta) * pi + beta * pi_ref


def js_beta(p: np.ndarray, q: np.ndarray, beta: float) -> float:
    """Beta-skew Jensen-Shannon divergence of two distributions."""
    return float(js_beta_rows(np.asarray(p)[None, :], np.asarray(q)[None, :], beta)[0])


def js_beta_rows(p: np.ndarray, q: np.ndarray, beta: float) -> np.ndarray:
    """Row-wise beta-skew JS divergence; zero by convention at beta in {0, 1}."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    m = beta * p + (1.0 - beta) * q
    total = np.zeros(p.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        if beta > 0.0:
            t = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p / m, 1.0)), 0.0)
            total += beta * t.sum(axis=1)
        if beta < 1.0:
            t = np.where(q > 0.0, q * np.log(np.where(q > 0.0, q / m, 1.0)), 0.0)
            total += (1.0 - beta) * t.sum(axis=1)
    return total


def _advantage_profile(mdp: TabularSoftMdp, ev: SoftEvaluation,
                       pi_ref: np.ndarray) -> np.ndarray:
    """Per-state E_{a~pi_ref}[A_pi(s,a)] + alpha H(pi_ref(.|s))."""
    return (pi_ref * ev.advantage).sum(axis=1) + mdp.alpha * entropy_rows(pi_ref)


def exact_policy_advantage(mdp: TabularSoftMdp, pi: np.ndarray,
                           pi_ref: np.ndarray) -> float:
    """Entropy-augmented policy advantage under the normalized visitation."""
    ev = soft_policy_evaluation(mdp, pi)
    return float(ev.d_hat @ _advantage_profile(mdp, ev, pi_ref))


def exact_epsilon(mdp: TabularSoftMdp, pi: np.ndarray, pi_ref: np.ndarray,
                  ev: SoftEvaluation | None = None) -> float:
    """max_s |E_{a~pi_ref}[A_pi + alpha H(pi_ref)]|, the bound's constant."""
    if ev is None:
        ev = soft_policy_evaluation(mdp, pi)
    return float(np.max(np.abs(_advantage_profile(mdp, ev, pi_ref))))


class Theorem1Result(NamedTuple):
    lhs: float
    rhs: float
    holds: bool
    advantage_unnormalized: float
    advantage_normalized: float
    epsilon: float


def theorem1_check(mdp: TabularSoftMdp, pi: np.ndarray, pi_ref: np.ndarray,
                   beta: float, tol: float = 1e-9) -> Theorem1Result:
    """Exact check of the mixed-policy improvement bound on one instance.

    lhs = eta(pi_mix) - eta(pi); rhs = beta * advantage term
    - 2 gamma eps beta^2 / (1-gamma)^2 + alpha * skew-JS term, with both
    state expectations taken under the raw discounted measures.
    """
    ev = soft_policy_evaluation(mdp, pi)
    pi_mix = mix_distributions(pi, pi_ref, beta)
    ev_mix = soft_policy_evaluation(mdp, pi_mix)
    lhs = ev_mix.eta - ev.eta

    profile = _advantage_profile(mdp, ev, pi_ref)
    adv_un = float(ev.d_pi @ profile)
    eps = float(np.max(np.abs(profile)))
    penalty = 2.0 * mdp.gamma * eps * beta * beta / (1.0 - mdp.gamma) ** 2
    js_term = mdp.alpha * float(ev_mix.d_pi @ js_beta_rows(pi_ref, pi, beta))
    rhs = beta * adv_un - penalty + js_term
    return Theorem1Result(
        lhs=lhs, rhs=rhs, holds=bool(lhs >= rhs - tol),
        advantage_unnormalized=adv_un,
        advantage_normalized=adv_un * (1.0 - mdp.gamma),
        epsilon=eps)


class CorollaryResult(NamedTuple):
    bound_holds: bool
    positivity_sound: bool
    worst_margin: float

    @property
    def ok(self) -> bool:
        return self.bound_holds and self.positivity_sound


def corollary1_check(mdp: TabularSoftMdp, pi: np.ndarray, pi_ref: np.ndarray,
                     betas: np.ndarray | None = None,
                     tol: float = 1e-9) -> CorollaryResult:
    """Check the tractable quadratic bound over a beta grid.

    Also verifies the selection criterion it licenses: whenever the
    advantage is positive and beta < advantage / C, the true improvement
    is strictly positive.
    """
    if betas is None:
        betas = np.linspace(0.01, 1.0, 100)
    ev = soft_policy_evaluation(mdp, pi)
    profile = _advantage_profile(mdp, ev, pi_ref)
    adv_un = float(ev.d_pi @ profile)
    eps = float(np.max(np.abs(profile)))
    c_const = 2.0 * eps * mdp.gamma / (1.0 - mdp.gamma) ** 2

    bound_holds, positivity_sound = True, True
    worst = np.inf
    for beta in betas:
        pi_mix = mix_distributions(pi, pi_ref, float(beta))
        lhs = soft_policy_evaluation(mdp, pi_mix).eta - ev.eta
        rhs = beta * adv_un - c_const * beta * beta
        worst = min(worst, lhs - rhs)
        if lhs < rhs - tol:
            bound_holds = False
        if (adv_un > 0.0 and c_const > 0.0 and 0.0 < beta < adv_un / c_const
                and lhs <= 0.0):
            positivity_sound = False
    return CorollaryResult(bound_holds, positivity_sound, float(worst))


class LemmaReport(NamedTuple):
    expected_advantage_err: float   # per-state E_pi[A] + alpha H(pi)
    mixture_advantage_err: float    # per-state mixed-policy advantage identity
    entropy_decomposition_err: float
    return_gap_identity_err: float
    improvement_min_gap: float      # min over (s,a) of Q_new - Q_old

    def passes(self, tol_state: float = 1e-10, tol_entropy: float = 1e-12,
               tol_return: float = 1e-8, tol_improve: float = 1e-9) -> bool:
        return (self.expected_advantage_err <= tol_state
                and self.mixture_advantage_err <= tol_state
                and self.entropy_decomposition_err <= tol_entropy
                and self.return_gap_identity_err <= tol_return
                and self.improvement_min_gap >= -tol_improve)


def soft_greedy_policy(mdp: TabularSoftMdp, q: np.ndarray) -> np.ndarray:
    """Closed-form minimizer of the KL projection step: softmax(Q / alpha).

    Falls back to the greedy argmax in the alpha -> 0 limit.
    """
    if mdp.alpha <= 0.0:
        pi = np.zeros_like(q)
        pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
        return pi
    z = q / mdp.alpha
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def lemma_checks(mdp: TabularSoftMdp, pi: np.ndarray, pi_ref: np.ndarray,
                 beta: float) -> LemmaReport:
    """Exact residuals of the per-state identities behind the bound."""
    ev = soft_policy_evaluation(mdp, pi)
    h_pi = entropy_rows(pi)
    h_ref = entropy_rows(pi_ref)

    # expected advantage under own policy equals minus the entropy bonus
    l2 = np.abs((pi * ev.advantage).sum(axis=1) + mdp.alpha * h_pi)

    pi_mix = mix_distributions(pi, pi_ref, beta)
    l3 = np.abs((pi_mix * ev.advantage).sum(axis=1)
                - (beta * (pi_ref * ev.advantage).sum(axis=1)
                   - (1.0 - beta) * mdp.alpha * h_pi))

    l5 = np.abs(entropy_rows(pi_mix)
                - (js_beta_rows(pi_ref, pi, beta) + beta * h_ref
                   + (1.0 - beta) * h_pi))

    ev_mix = soft_policy_evaluation(mdp, pi_mix)
    gap = ev_mix.eta - ev.eta
    per_state = (pi_mix * ev.advantage).sum(axis=1) \
        + mdp.alpha * entropy_rows(pi_mix)
    l4 = abs(gap - float(ev_mix.d_pi @ per_state))

    pi_new = soft_greedy_policy(mdp, ev.q)
    q_new = soft_policy_evaluation(mdp, pi_new).q
    l1 = float(np.min(q_new - ev.q))

    return LemmaReport(
        expected_advantage_err=float(np.max(l2)),
        mixture_advantage_err=float(np.max(l3)),
        entropy_decomposition_err=float(np.max(l5)),
        return_gap_identity_err=l4,
        improvement_min_gap=l1)


# ---------------------------------------------------------------------------
# Softmax-parameterized tabular policies: KL vs Fisher quadratic form
# ---------------------------------------------------------------------------

def softmax_rows(theta: np.ndarray) -> np.ndarray:
    """Row-wise softmax of an (S, A) logit table."""
    z = theta - theta.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def kl_rows(theta: np.ndarray, theta2: np.ndarray) -> np.ndarray:
    """Per-state KL(pi_theta || pi_theta2) for softmax tables."""
    p = softmax_rows(theta)
    q = softmax_rows(theta2)
    return (p * (np.log(p) - np.log(q))).sum(axis=1)


def per_state_quad_forms(theta: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """delta^T F_s delta for each state's own Fisher block.

    For a softmax row the score is onehot(a) - pi(.|s), so the quadratic
    form collapses to the action-distribution variance of delta's row.
    """
    pi = softmax_rows(theta)
    mean = (pi * delta).sum(axis=1)
    return (pi * (delta - mean[:, None]) ** 2).sum(axis=1)


def exact_fim_softmax(theta: np.ndarray, d_weights: np.ndarray) -> np.ndarray:
    """Exact Fisher matrix of the softmax table under given state weights.

    Block-diagonal: block s equals d_weights[s] * (diag(pi_s) - pi_s pi_s^T).
    """
    s, a = theta.shape
    pi = softmax_rows(theta)
    f = np.zeros((s * a, s * a))
    for i in range(s):
        block = np.diag(pi[i]) - np.outer(pi[i], pi[i])
        f[i * a:(i + 1) * a, i * a:(i + 1) * a] = d_weights[i] * block
    return f


class TaylorReport(NamedTuple):
    residuals: dict          # zeta -> max_s |KL_s - 0.5 zeta^2 q_s|
    decade_ratios: dict      # zeta -> r(zeta/10) / r(zeta) where both exist
    score_identity_max: float

    def passes(self, ratio_bound: float = 0.02, zeta_at_most: float = 1e-2,
               score_tol: float = 1e-12) -> bool:
        ok = all(r < ratio_bound for z, r in self.decade_ratios.items()
                 if z <= zeta_at_most)
        return ok and self.score_identity_max <= score_tol


def kl_and_fim_taylor_check(theta: np.ndarray, delta: np.ndarray,
                            zetas=(1e-1, 1e-2, 1e-3)) -> TaylorReport:
    """Second-order expansion check: per-state KL vs 0.5 zeta^2 d^T F_s d."""
    theta = np.asarray(theta, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    q_s = per_state_quad_forms(theta, delta)
    residuals = {}
    for zeta in zetas:
        kl = kl_rows(theta, theta + zeta * delta)
        residuals[zeta] = float(np.max(np.abs(kl - 0.5 * zeta * zeta * q_s)))
    ratios = {}
    for zeta in zetas:
        small = zeta / 10.0
        match = [z for z in zetas if abs(z - small) < 1e-15 * max(1.0, small)]
        if match and residuals[zeta] > 0.0:
            ratios[zeta] = residuals[match[0]] / residuals[zeta]
    pi = softmax_rows(theta)
    # score of row s at action a: onehot(a) - pi_s; average it under pi
    n_a = theta.shape[1]
    scores = np.eye(n_a)[None, :, :] - pi[:, None, :]
    score_mean = np.einsum("sa,sab->sb", pi, scores)
    return TaylorReport(residuals=residuals, decade_ratios=ratios,
                        score_identity_max=float(np.max(np.abs(score_mean))))


# ---------------------------------------------------------------------------
# Adapters exposing tabular policies/critics to the mixing estimators
# ---------------------------------------------------------------------------

def exact_fim_table(pi: np.ndarray, d_weights: np.ndarray) -> np.ndarray:
    """Exact Fisher matrix when the table entries are the parameters.

    The score at (s, a) has a single nonzero coordinate 1/pi(a|s), so the
    matrix is diagonal with entries d_weights[s] / pi(a|s).
    """
    return np.diag((d_weights[:, None] / pi).ravel())


class TableMixOutcome(NamedTuple):
    accepted: bool
    advantage: float
    zeta: float
    zeta_bound: float
    eta_before: float
    eta_after: float


def regulated_table_mix(mdp: TabularSoftMdp, pi: np.ndarray,
                        pi_ref: np.ndarray, c_safety: float = 0.9,
                        zeta_cap: float = 1.0) -> TableMixOutcome:
    """The mixing decision rule with every estimate replaced by its exact value.

    Parameters of a tabular policy are the probability table itself, so the
    parameter mixture coincides with the distribution mixture and the
    quadratic improvement bound protects every accepted step.
    """
    ev = soft_policy_evaluation(mdp, pi)
    profile = _advantage_profile(mdp, ev, pi_ref)
    adv = float(ev.d_hat @ profile)
    if adv <= 0.0:
        return TableMixOutcome(False, adv, 0.0, 0.0, ev.eta, ev.eta)
    eps = float(np.max(np.abs(profile)))
    c_const = 2.0 * eps * mdp.gamma / (1.0 - mdp.gamma) ** 2
    delta = (pi_ref - pi).ravel()
    fim = exact_fim_table(pi, ev.d_hat)
    quad = float(delta @ fim @ delta)
    if c_const * quad < 1e-12:
        bound = np.inf
    else:
        bound = float(np.sqrt(2.0 * adv / (c_const * quad)))
    zeta = min(zeta_cap, c_safety * bound)
    pi_mix = mix_distributions(pi, pi_ref, zeta)
    eta_after = soft_policy_evaluation(mdp, pi_mix).eta
    return TableMixOutcome(True, adv, zeta, bound, ev.eta, eta_after)


class TabularPolicyAdapter:
    """A policy table behind the sampling/density interface of the estimators.

    States and actions travel as (batch, 1) index arrays; noise is a matrix
    of uniforms so that two adapters fed the same noise draw identical
    actions whenever their tables coincide.
    """

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)
        with np.errstate(divide="ignore"):
            self.log_table = np.where(self.table > 0.0, np.log(self.table), -np.inf)
        self.cdf = np.cumsum(self.table, axis=1)

    @staticmethod
    def _idx(x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64).reshape(-1).astype(np.int64)

    def draw_noise(self, rng: np.random.Generator, n_states: int, k: int) -> np.ndarray:
        return rng.random((n_states, k))

    def sample(self, states: np.ndarray, rng: np.random.Generator):
        s = self._idx(states)
        u = rng.random(s.size)
        a = (self.cdf[s] < u[:, None]).sum(axis=1)
        return a[:, None].astype(np.float64), self.log_table[s, a]

    def logprob(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.log_table[self._idx(states), self._idx(actions)]

    def entropy_with_noise(self, states: np.ndarray, noise: np.ndarray) -> np.ndarray:
        s = self._idx(states)
        a = (self.cdf[s][:, None, :] < noise[..., None]).sum(axis=2)
        return -self.log_table[s[:, None], a].mean(axis=1)

    def score(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Rows of d log pi / d theta for the softmax parameterization."""
        s = self._idx(states)
        a = self._idx(actions)
        n_s, n_a = self.table.shape
        rows = np.zeros((s.size, n_s * n_a))
        cols = s[:, None] * n_a + np.arange(n_a)[None, :]
        np.put_along_axis(rows, cols, -self.table[s], axis=1)
        rows[np.arange(s.size), s * n_a + a] += 1.0
        return rows


class TabularMinQ:
    """Exact state-action values behind the twin-critic interface."""

    def __init__(self, q_table: np.ndarray):
        self.q_table = np.asarray(q_table, dtype=np.float64)

    def min_q(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        s = TabularPolicyAdapter._idx(states)
        a = TabularPolicyAdapter._idx(actions)
        return self.q_table[s, a]
