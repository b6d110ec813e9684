"""Desk-scale environments: a ring speed-control task and random soft MDPs.

The ring task is a structural analog of cooperative traffic smoothing:
vehicles on a closed loop pick accelerations, everyone is paid the
normalized mean speed, and an episode ends on a rear-end collision or
after ``max_steps``. The tabular MDP generator produces tiny instances on
which all soft-RL quantities can be computed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TabularSoftMdp:
    """Finite MDP (S, A, P, R, gamma, alpha, rho0) with entropy temperature."""

    transitions: np.ndarray  # (S, A, S), each row a distribution
    rewards: np.ndarray      # (S, A) in [0, reward_max]
    gamma: float
    alpha: float
    rho0: np.ndarray         # (S,)

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.rho0 = np.asarray(self.rho0, dtype=np.float64)
        s, a, s2 = self.transitions.shape
        if s != s2 or self.rewards.shape != (s, a) or self.rho0.shape != (s,):
            raise ValueError("inconsistent MDP shapes")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.alpha < 0.0:
            raise ValueError("alpha must be non-negative")
        rowsums = self.transitions.sum(axis=2)
        if np.max(np.abs(rowsums - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def make_tabular(seed: int, n_states: int = 4, n_actions: int = 3,
                 gamma: float = 0.9, alpha: float = 0.1,
                 reward_max: float = 1.0) -> TabularSoftMdp:
    """Random soft MDP: Dirichlet(1) transition rows, uniform rewards/start."""
    if n_states > 8 or n_actions > 5:
        raise ValueError("exact verification supports |S|<=8, |A|<=5")
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(0.0, reward_max, size=(n_states, n_actions))
    rho0 = np.full(n_states, 1.0 / n_states)
    return TabularSoftMdp(p, r, gamma=gamma, alpha=alpha, rho0=rho0)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    """Dirichlet(1) rows: a random point of the policy simplex per state."""
    return rng.dirichlet(np.ones(n_actions), size=n_states)


# ---------------------------------------------------------------------------
# Ring speed-control environment
# ---------------------------------------------------------------------------

@dataclass
class RingConfig:
    n_vehicles: int = 4
    circumference: float = 200.0   # m
    dt: float = 0.1                # s
    accel_max: float = 3.0         # m/s^2
    v_desired: float = 20.0        # m/s
    v_limit: float = 30.0          # m/s
    gap_min: float = 2.0           # m, closer than this is a collision
    max_steps: int = 500
    v_init_min: float = 0.0        # initial speeds drawn U[min, max]
    v_init_max: float = 5.0

    @property
    def obs_dim(self) -> int:
        return 6

    @property
    def action_dim(self) -> int:
        return 1


class RingEnv:
    """Vehicles on a loop; shared reward = mean speed / desired speed.

    The cyclic order is fixed at reset (no overtaking) and bumper gaps are
    integrated incrementally from relative speeds, so a fast closing pair
    cannot tunnel past the collision check between Euler steps. Getting
    within ``gap_min`` of the vehicle ahead ends the episode. Observations
    are normalized to [0, 1]: own position and speed, gap and speed of the
    leader, gap and speed of the follower.
    """

    def __init__(self, config: RingConfig, rng: np.random.Generator):
        self.cfg = config
        self.rng = rng
        n = config.n_vehicles
        self.pos = np.zeros(n)
        self.vel = np.zeros(n)
        self.leader = np.arange(n)
        self.follower = np.arange(n)
        self.gap_ahead = np.full(n, config.circumference)
        self.steps = 0

    def reset(self) -> np.ndarray:
        cfg = self.cfg
        spacing = cfg.circumference / cfg.n_vehicles
        jitter = self.rng.uniform(-0.2, 0.2, cfg.n_vehicles) * spacing
        pos = (np.arange(cfg.n_vehicles) * spacing + jitter) % cfg.circumference
        vel = self.rng.uniform(cfg.v_init_min, cfg.v_init_max, cfg.n_vehicles)
        self.set_state(pos, vel)
        return self.observations()

    def set_state(self, pos, vel):
        """Inject a state; recomputes the (then frozen) cyclic order."""
        self.pos = np.asarray(pos, dtype=np.float64).copy()
        self.vel = np.asarray(vel, dtype=np.float64).copy()
        n = self.cfg.n_vehicles
        order = np.argsort(self.pos, kind="stable")
        self.leader = np.empty(n, dtype=int)
        self.follower = np.empty(n, dtype=int)
        for rank in range(n):
            i = order[rank]
            self.leader[i] = order[(rank + 1) % n]
            self.follower[i] = order[(rank - 1) % n]
        if n > 1:
            self.gap_ahead = (self.pos[self.leader] - self.pos) % self.cfg.circumference
        else:
            self.gap_ahead = np.full(1, self.cfg.circumference)
        self.steps = 0

    def gaps(self) -> np.ndarray:
        """Bumper distance to the vehicle ahead, per vehicle."""
        return self.gap_ahead.copy()

    def observations(self) -> np.ndarray:
        cfg = self.cfg
        gap_behind = self.gap_ahead[self.follower]
        obs = np.stack([
            self.pos / cfg.circumference,
            self.vel / cfg.v_limit,
            np.clip(self.gap_ahead, 0.0, cfg.circumference) / cfg.circumference,
            self.vel[self.leader] / cfg.v_limit,
            np.clip(gap_behind, 0.0, cfg.circumference) / cfg.circumference,
            self.vel[self.follower] / cfg.v_limit,
        ], axis=1)
        return obs

    def step(self, accelerations: np.ndarray):
        """Euler step; returns (observations, rewards, done)."""
        cfg = self.cfg
        acc = np.clip(np.asarray(accelerations, dtype=np.float64),
                      -cfg.accel_max, cfg.accel_max)
        self.vel = np.clip(self.vel + acc * cfg.dt, 0.0, cfg.v_limit)
        self.pos = (self.pos + self.vel * cfg.dt) % cfg.circumference
        if cfg.n_vehicles > 1:
            self.gap_ahead = self.gap_ahead + (self.vel[self.leader] - self.vel) * cfg.dt
        self.steps += 1
        reward = float(self.vel.mean() / cfg.v_desired)
        rewards = np.full(cfg.n_vehicles, reward)
        collided = bool(np.any(self.gap_ahead <= cfg.gap_min)) if cfg.n_vehicles > 1 else False
        done = collided or self.steps >= cfg.max_steps
        return self.observations(), rewards, done
