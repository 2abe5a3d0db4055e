"""Deterministic-policy-gradient controller for longitudinal control.

Actor and critic are small dense networks trained off-policy from a
uniform replay ring, with temporally correlated exploration noise and
soft target tracking. The reward trades off speed matching, gap keeping
and acceleration smoothness; each term is a shifted exponential in
(-1, 0].
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .networks import AdamOptimizer, DenseNetwork, soft_update

__all__ = [
    "RewardParams",
    "reward_components",
    "compute_reward",
    "ou_step",
    "OUNoise",
    "Transition",
    "ReplayBuffer",
    "DdpgConfig",
    "DDPGController",
]


# ----------------------------------------------------------------------
# reward

@dataclass(frozen=True)
class RewardParams:
    v_max: float = 32.0
    accel_max: float = 2.0
    headway_const: float = 2.0  # headway-time multiplier
    d_safe: float = 10.0        # minimum safe distance [m]

    @property
    def desired_gap(self) -> float:
        return self.headway_const * self.d_safe


def reward_components(ego_speed, lead_speed, headway, delta_accel,
                      params: RewardParams = RewardParams()):
    """(velocity, distance, acceleration) reward terms, each in (-1, 0]."""
    dv = ego_speed - lead_speed
    r_vel = math.exp(-(dv * dv) / params.v_max) - 1.0
    gap_err = headway - params.desired_gap
    r_dist = math.exp(-(gap_err * gap_err) / (2.0 * params.desired_gap)) - 1.0
    r_accel = math.exp(-(delta_accel * delta_accel) / (2.0 * params.accel_max)) - 1.0
    return r_vel, r_dist, r_accel


def compute_reward(ego_speed, lead_speed, headway, delta_accel,
                   params: RewardParams = RewardParams()) -> float:
    return sum(reward_components(ego_speed, lead_speed, headway, delta_accel, params))


# ----------------------------------------------------------------------
# exploration noise

def ou_step(x: float, theta: float, sigma: float, dt: float, rng) -> float:
    """One Euler step of a zero-mean Ornstein-Uhlenbeck process."""
    return x + theta * (0.0 - x) * dt + sigma * math.sqrt(dt) * rng.standard_normal()


class OUNoise:
    """Stateful scalar OU process, reset at episode boundaries."""

    def __init__(self, theta: float = 0.15, sigma: float = 0.4, dt: float = 1.0):
        self.theta = theta
        self.sigma = sigma
        self.dt = dt
        self.x = 0.0

    def reset(self) -> None:
        self.x = 0.0

    def sample(self, rng) -> float:
        self.x = ou_step(self.x, self.theta, self.sigma, self.dt, rng)
        return self.x


# ----------------------------------------------------------------------
# replay

class Transition(NamedTuple):
    obs: np.ndarray       # normalized controller observation
    action: float
    reward: float
    next_obs: np.ndarray  # normalized controller observation
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring with uniform without-replacement batches."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, transition: Transition) -> None:
        i = self._next
        self.obs[i] = transition.obs
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.next_obs[i] = transition.next_obs
        self.dones[i] = float(transition.done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng):
        if batch_size > self._size:
            raise ValueError("not enough stored transitions")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return (
            self.obs[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_obs[idx],
            self.dones[idx],
        )


# ----------------------------------------------------------------------
# controller

@dataclass(frozen=True)
class DdpgConfig:
    obs_dim: int = 4
    action_bound: float = 2.0
    hidden: tuple = (64, 64)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    discount: float = 0.95
    soft_update_rate: float = 0.001
    buffer_capacity: int = 100_000
    batch_size: int = 64
    ou_theta: float = 0.15
    ou_sigma: float = 0.4
    ou_dt: float = 1.0
    # divisors bringing [speed, headway, speed, accel] near unit scale
    obs_scale: tuple = (32.0, 200.0, 32.0, 2.0)


class DDPGController:
    """Actor-critic controller emitting accelerations in [-bound, bound]."""

    def __init__(self, config: DdpgConfig, rng):
        self.config = config
        c = config
        self.actor = DenseNetwork(
            (c.obs_dim, *c.hidden, 1), rng, out_scale=c.action_bound
        )
        self.critic = DenseNetwork((c.obs_dim + 1, *c.hidden, 1), rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = AdamOptimizer(self.actor.params, lr=c.actor_lr)
        self.critic_opt = AdamOptimizer(self.critic.params, lr=c.critic_lr)
        self.buffer = ReplayBuffer(c.buffer_capacity, c.obs_dim)
        self.noise = OUNoise(c.ou_theta, c.ou_sigma, c.ou_dt)
        self._scale = np.asarray(c.obs_scale, dtype=float)

    def normalize_obs(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if obs.shape != self._scale.shape:
            raise ValueError(f"observation must have shape {self._scale.shape}")
        return obs / self._scale

    def act(self, obs, explore: bool = False, rng=None) -> float:
        """Policy action for a raw observation, optionally with OU noise."""
        x = self.normalize_obs(obs)
        a = float(self.actor.forward(x[None, :])[0, 0])
        if explore:
            if rng is None:
                raise ValueError("explore=True requires an rng")
            a += self.noise.sample(rng)
        bound = self.config.action_bound
        return min(max(a, -bound), bound)

    def remember(self, obs, action, reward, next_obs, done: bool) -> None:
        """Store a transition; observations are normalized on the way in."""
        self.buffer.add(
            Transition(
                obs=self.normalize_obs(obs),
                action=float(action),
                reward=float(reward),
                next_obs=self.normalize_obs(next_obs),
                done=bool(done),
            )
        )

    def train_step(self, rng):
        """One gradient step on a uniform batch; returns
        (critic loss, mean policy value) or None while the buffer is
        still smaller than one batch."""
        c = self.config
        if len(self.buffer) < c.batch_size:
            return None
        obs, actions, rewards, next_obs, dones = self.buffer.sample(c.batch_size, rng)
        batch = obs.shape[0]

        # critic toward the bootstrapped target (0 bootstrap on done)
        a_next = self.target_actor.forward(next_obs)
        q_next = self.target_critic.forward(
            np.concatenate([next_obs, a_next], axis=1)
        )[:, 0]
        y = rewards + c.discount * (1.0 - dones) * q_next
        q, cache = self.critic.forward_cached(
            np.concatenate([obs, actions[:, None]], axis=1)
        )
        err = q[:, 0] - y
        critic_loss = float(np.mean(err * err))
        critic_grads, _ = self.critic.backward((2.0 / batch) * err[:, None], cache)
        self.critic_opt.step(self.critic.params, critic_grads)

        # actor along the critic's action gradient
        a_pi, actor_cache = self.actor.forward_cached(obs)
        q_pi, critic_cache = self.critic.forward_cached(
            np.concatenate([obs, a_pi], axis=1)
        )
        actor_objective = float(np.mean(q_pi))
        _, d_input = self.critic.backward(
            np.full((batch, 1), -1.0 / batch), critic_cache
        )
        actor_grads, _ = self.actor.backward(d_input[:, c.obs_dim:], actor_cache)
        self.actor_opt.step(self.actor.params, actor_grads)

        soft_update(self.target_actor, self.actor, c.soft_update_rate)
        soft_update(self.target_critic, self.critic, c.soft_update_rate)
        return critic_loss, actor_objective

    # ------------------------------------------------------------------
    # checkpointing

    def save(self, path) -> None:
        """Write all network parameters and optimizer state to a .npz
        archive (key layout documented in the README)."""
        arrays = {"config_json": np.frombuffer(
            json.dumps(_config_dict(self.config)).encode(), dtype=np.uint8
        )}
        for name, net in self._nets().items():
            for i, p in enumerate(net.params):
                arrays[f"{name}_p{i}"] = p
        for name, opt in (("actor_opt", self.actor_opt), ("critic_opt", self.critic_opt)):
            arrays[f"{name}_t"] = np.array(opt.t)
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"{name}_m{i}"] = m
                arrays[f"{name}_v{i}"] = v
        arrays["noise_x"] = np.array(self.noise.x)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "DDPGController":
        data = np.load(Path(path), allow_pickle=False)
        cfg_raw = json.loads(bytes(data["config_json"]).decode())
        cfg_raw["hidden"] = tuple(cfg_raw["hidden"])
        cfg_raw["obs_scale"] = tuple(cfg_raw["obs_scale"])
        ctrl = cls(DdpgConfig(**cfg_raw), np.random.default_rng(0))
        for name, net in ctrl._nets().items():
            for i, p in enumerate(net.params):
                p[...] = data[f"{name}_p{i}"]
        for name, opt in (("actor_opt", ctrl.actor_opt), ("critic_opt", ctrl.critic_opt)):
            opt.t = int(data[f"{name}_t"])
            for i in range(len(opt.m)):
                opt.m[i][...] = data[f"{name}_m{i}"]
                opt.v[i][...] = data[f"{name}_v{i}"]
        ctrl.noise.x = float(data["noise_x"])
        return ctrl

    def _nets(self) -> dict:
        return {
            "actor": self.actor,
            "critic": self.critic,
            "target_actor": self.target_actor,
            "target_critic": self.target_critic,
        }


def _config_dict(config: DdpgConfig) -> dict:
    return {
        "obs_dim": config.obs_dim,
        "action_bound": config.action_bound,
        "hidden": list(config.hidden),
        "actor_lr": config.actor_lr,
        "critic_lr": config.critic_lr,
        "discount": config.discount,
        "soft_update_rate": config.soft_update_rate,
        "buffer_capacity": config.buffer_capacity,
        "batch_size": config.batch_size,
        "ou_theta": config.ou_theta,
        "ou_sigma": config.ou_sigma,
        "ou_dt": config.ou_dt,
        "obs_scale": list(config.obs_scale),
    }
