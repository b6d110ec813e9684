"""One agent's local learning: replay, twin soft critics, delayed updates.

The update cadence follows the two-timescale pattern: critics train on
every environment step once the buffer holds a full minibatch, while the
policy, the entropy temperature, and the Polyak-averaged target critics
move only every ``policy_delay`` critic updates (and at episode ends).
Each transition archives the log-density its action was drawn with, since
later parameter mixing changes the policy and off-policy advantage
estimation needs the original sampling density.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import nets
from .nets import MlpSpec


class DivergenceError(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    behavior_logp: float
    done: bool


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    behavior_logps: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform minibatch sampling."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_dim))
        self.behavior_logps = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.pos = 0
        self.full = False

    def __len__(self) -> int:
        return self.capacity if self.full else self.pos

    def add(self, t: Transition) -> None:
        if not np.isfinite(t.behavior_logp):
            raise ValueError("behavior log-density must be finite")
        i = self.pos
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.behavior_logps[i] = t.behavior_logp
        self.dones[i] = t.done
        self.pos += 1
        if self.pos == self.capacity:
            self.pos = 0
            self.full = True

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        n = len(self)
        if batch_size > n:
            raise ValueError("not enough transitions buffered")
        idx = rng.choice(n, size=batch_size, replace=False)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.behavior_logps[idx],
                     self.dones[idx])


@dataclass(frozen=True)
class AgentConfig:
    """Learner hyperparameters (defaults follow the reference table)."""

    hidden: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 100_000
    batch_size: int = 256
    lr_policy: float = 4e-5
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    gamma: float = 0.99
    polyak: float = 1e-3
    policy_delay: int = 10
    init_alpha: float = 0.2
    grad_clip: float = 10.0
    entropy_target: float | None = None  # default: -action_dim


@dataclass
class AgentState:
    """Parameters, replay and counters of one learner."""

    policy_spec: MlpSpec
    critic_spec: MlpSpec
    theta: np.ndarray
    omega1: np.ndarray
    omega2: np.ndarray
    target_omega1: np.ndarray
    target_omega2: np.ndarray
    log_alpha: float
    buffer: ReplayBuffer
    cfg: AgentConfig
    entropy_target: float
    k: int = 0          # policy updates performed
    counter: int = 0    # critic updates performed
    current_obs: np.ndarray | None = None

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    @staticmethod
    def create(obs_dim: int, action_dim: int, cfg: AgentConfig,
               rng: np.random.Generator) -> "AgentState":
        policy_spec = MlpSpec((obs_dim, *cfg.hidden, 2 * action_dim),
                              output_heads=nets.GAUSSIAN_HEAD)
        critic_spec = MlpSpec((obs_dim + action_dim, *cfg.hidden, 1),
                              output_heads=nets.SCALAR_Q_HEAD)
        omega1 = nets.init_params(critic_spec, rng)
        omega2 = nets.init_params(critic_spec, rng)
        return AgentState(
            policy_spec=policy_spec,
            critic_spec=critic_spec,
            theta=nets.init_params(policy_spec, rng),
            omega1=omega1,
            omega2=omega2,
            target_omega1=omega1.copy(),
            target_omega2=omega2.copy(),
            log_alpha=float(np.log(cfg.init_alpha)),
            buffer=ReplayBuffer(cfg.buffer_capacity, obs_dim, action_dim),
            cfg=cfg,
            entropy_target=(cfg.entropy_target if cfg.entropy_target is not None
                            else -float(action_dim)),
        )

    def policy(self) -> nets.SquashedGaussianPolicy:
        return nets.SquashedGaussianPolicy(self.policy_spec, self.theta)

    def critics(self) -> nets.TwinCritics:
        return nets.TwinCritics(self.critic_spec, self.omega1, self.omega2)


def act(agent: AgentState, obs: np.ndarray, rng: np.random.Generator):
    """Stochastic action with its log-density under the current policy."""
    delta = rng.standard_normal(agent.policy_spec.dim_action)
    return nets.sample_action(agent.policy_spec, agent.theta, obs, delta)


def act_deterministic(agent: AgentState, obs: np.ndarray) -> np.ndarray:
    """Greedy mean action (zero exploration noise)."""
    out = nets.forward(agent.policy_spec, agent.theta, obs)
    return np.tanh(out[:agent.policy_spec.dim_action])


def q_target(agent: AgentState, batch: Batch, rng: np.random.Generator) -> np.ndarray:
    """Bootstrapped soft targets; constant with respect to all gradients."""
    delta = rng.standard_normal((batch.states.shape[0],
                                 agent.policy_spec.dim_action))
    a_next, logp_next = nets.sample_actions(agent.policy_spec, agent.theta,
                                            batch.next_states, delta)
    q1 = nets.q_values(agent.critic_spec, agent.target_omega1,
                       batch.next_states, a_next)
    q2 = nets.q_values(agent.critic_spec, agent.target_omega2,
                       batch.next_states, a_next)
    soft_next = np.minimum(q1, q2) - agent.alpha * logp_next
    return batch.rewards + (~batch.dones) * agent.cfg.gamma * soft_next


def _clip_by_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def update_critics(agent: AgentState, batch: Batch,
                   rng: np.random.Generator) -> tuple[float, float]:
    """One SGD step on both soft Bellman residuals; increments ``counter``."""
    targets = q_target(agent, batch, rng)
    x = np.concatenate([batch.states, batch.actions], axis=1)
    losses = []
    for name in ("omega1", "omega2"):
        params = getattr(agent, name)
        leaves = nets.layer_leaves(agent.critic_spec, params)
        q = ad.reshape(nets.forward_leaves(agent.critic_spec, leaves, x), (-1,))
        loss = ad.mean_(ad.mul(ad.square(ad.sub(q, targets)), 0.5))
        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            raise DivergenceError(f"critic loss diverged: {loss_val}")
        ad.backward(loss)
        step = _clip_by_norm(nets.collect_leaf_grad(agent.critic_spec, leaves),
                             agent.cfg.grad_clip)
        setattr(agent, name, params - agent.cfg.lr_critic * step)
        losses.append(loss_val)
    agent.counter += 1
    return losses[0], losses[1]


def update_policy(agent: AgentState, batch: Batch,
                  rng: np.random.Generator) -> float:
    """Reparameterized policy step against the clipped double critic."""
    noise = rng.standard_normal((batch.states.shape[0],
                                 agent.policy_spec.dim_action))
    alpha = agent.alpha
    leaves = nets.layer_leaves(agent.policy_spec, agent.theta)
    actions, logp = nets.reparam_logp_tape(agent.policy_spec, leaves,
                                           batch.states, noise)
    q1 = nets.q_values_tape(agent.critic_spec, agent.omega1,
                            batch.states, actions)
    q2 = nets.q_values_tape(agent.critic_spec, agent.omega2,
                            batch.states, actions)
    loss = ad.mean_(ad.sub(ad.mul(logp, alpha), ad.minimum(q1, q2)))
    loss_val = float(loss.value)
    if not np.isfinite(loss_val):
        raise DivergenceError(f"policy loss diverged: {loss_val}")
    ad.backward(loss)
    step = _clip_by_norm(nets.collect_leaf_grad(agent.policy_spec, leaves),
                         agent.cfg.grad_clip)
    agent.theta = agent.theta - agent.cfg.lr_policy * step
    agent.k += 1
    return loss_val


def update_temperature(agent: AgentState, batch: Batch,
                       rng: np.random.Generator) -> float:
    """Gradient step on log(alpha) toward the entropy target; returns alpha."""
    delta = rng.standard_normal((batch.states.shape[0],
                                 agent.policy_spec.dim_action))
    _, logp = nets.sample_actions(agent.policy_spec, agent.theta,
                                  batch.states, delta)
    alpha = agent.alpha
    grad_log_alpha = -alpha * float(np.mean(logp + agent.entropy_target))
    agent.log_alpha -= agent.cfg.lr_alpha * grad_log_alpha
    return agent.alpha


def polyak_update(agent: AgentState) -> None:
    rho = agent.cfg.polyak
    agent.target_omega1 = rho * agent.omega1 + (1.0 - rho) * agent.target_omega1
    agent.target_omega2 = rho * agent.omega2 + (1.0 - rho) * agent.target_omega2


def maybe_update(agent: AgentState, episode_end: bool,
                 rng: np.random.Generator) -> bool:
    """Run the per-step update schedule; returns True when a policy step ran.

    No updates of any kind happen until the buffer holds one full
    minibatch. Critics update every call; policy/temperature/targets only
    when the critic-update count hits the delay boundary or the episode
    ended.
    """
    if len(agent.buffer) < agent.cfg.batch_size:
        return False
    batch = agent.buffer.sample(agent.cfg.batch_size, rng)
    update_critics(agent, batch, rng)
    if (agent.counter - 1) % agent.cfg.policy_delay == 0 or episode_end:
        update_policy(agent, batch, rng)
        update_temperature(agent, batch, rng)
        polyak_update(agent)
        return True
    return False


def local_step(agent: AgentState, env, rng: np.random.Generator) -> Transition:
    """One act/store/update cycle against a single-agent environment.

    ``env`` must expose ``reset() -> obs`` and
    ``step(action) -> (obs, reward, done)``.
    """
    if agent.current_obs is None:
        agent.current_obs = np.asarray(env.reset(), dtype=np.float64)
    obs = agent.current_obs
    action, logp = act(agent, obs, rng)
    next_obs, reward, done = env.step(action)
    next_obs = np.asarray(next_obs, dtype=np.float64)
    transition = Transition(state=obs, action=action, reward=float(reward),
                            next_state=next_obs, behavior_logp=logp,
                            done=bool(done))
    agent.buffer.add(transition)
    maybe_update(agent, episode_end=bool(done), rng=rng)
    agent.current_obs = None if done else next_obs
    return transition
