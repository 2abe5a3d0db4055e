"""Online-evolving stochastic model over clustered driving situations.

States are cluster centers discovered online from observations; one
transition-probability matrix (TPM) per discrete action is identified
recursively while the system runs. States visited at the moment a control
criterion is violated are flagged so a downstream action check can steer
away from them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "StateFlag",
    "ClusterState",
    "StateUpdate",
    "EtsConfig",
    "EvolvingModel",
    "DEFAULT_OBS_BOUNDS",
    "normalize_observation",
]

# Scenario measurement ranges: ego speed [m/s], headway [m], lead speed [m/s].
DEFAULT_OBS_BOUNDS = (32.0, 200.0, 32.0)


class StateFlag(Enum):
    NONE = "none"
    UNFAVORABLE_SAFETY = "unfavorable_safety"
    UNFAVORABLE_SPEED = "unfavorable_speed"

    @property
    def unfavorable(self) -> bool:
        return self is not StateFlag.NONE


@dataclass
class ClusterState:
    """One discovered situation: a center in normalized observation space."""

    center: np.ndarray
    variance: float
    support_count: int = 1
    flag: StateFlag = StateFlag.NONE


@dataclass(frozen=True)
class StateUpdate:
    """Outcome of feeding one observation to the clustering step.

    ``index`` is the 0-based index of the matched or created state;
    ``created`` tells which of the two happened.
    """

    index: int
    created: bool


@dataclass(frozen=True)
class EtsConfig:
    """Online-clustering coefficients.

    ``similarity_threshold`` is compared against the unnormalized
    Gaussian kernel exp(-|z-c|^2/var): a new state is created when no
    existing center is at least this similar to the observation.
    ``center_rate`` damps the winning-center pull toward the sample
    (divided by the state's support count, so centers stabilize).
    """

    center_rate: float = 0.7
    similarity_threshold: float = 0.3
    init_variance: float = 0.05
    variance_floor: float = 0.01

    def __post_init__(self) -> None:
        if not 0.0 < self.center_rate <= 1.0:
            raise ValueError("center_rate must be in (0, 1]")
        if not 0.0 < self.similarity_threshold < 1.0:
            raise ValueError("similarity_threshold must be in (0, 1)")
        if self.init_variance <= 0.0 or self.variance_floor <= 0.0:
            raise ValueError("variances must be positive")


def normalize_observation(z_raw, bounds=DEFAULT_OBS_BOUNDS) -> np.ndarray:
    """Scale a raw observation onto [0,1] per component, clamping outliers.

    The similarity kernel uses an unweighted squared distance, so the
    heterogeneous units (m/s vs m) must be brought to a common scale
    before clustering.
    """
    z = np.asarray(z_raw, dtype=float)
    b = np.asarray(bounds, dtype=float)
    if z.shape != b.shape:
        raise ValueError(f"observation shape {z.shape} does not match bounds {b.shape}")
    return np.clip(z, 0.0, b) / b


class EvolvingModel:
    """Growing state set plus one recursively identified TPM per action.

    All probability vectors returned by this class sum to 1 within 1e-9.
    Action indices ``r`` are 1-based (1..n_actions) to match the discrete
    action-bin numbering used by the grid encoder.
    """

    def __init__(
        self,
        n_actions: int,
        phi: float = 0.1,
        eps_bar: float = 1e-6,
        ets: EtsConfig | None = None,
        obs_dim: int = 3,
    ):
        if n_actions < 1:
            raise ValueError("n_actions must be >= 1")
        if not 0.0 < phi <= 1.0:
            raise ValueError("phi must be in (0, 1]")
        if eps_bar <= 0.0:
            raise ValueError("eps_bar must be positive")
        self.n_actions = int(n_actions)
        self.phi = float(phi)
        self.eps_bar = float(eps_bar)
        self.ets = ets if ets is not None else EtsConfig()
        self.obs_dim = int(obs_dim)
        self.states: list[ClusterState] = []
        # Accumulators and TPMs share the state dimension at all times.
        self.F = np.zeros((self.n_actions, 0, 0))
        self.F0 = np.zeros((self.n_actions, 0))
        self.tpms = np.zeros((self.n_actions, 0, 0))

    # ------------------------------------------------------------------
    # state determination

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def flags(self) -> list[StateFlag]:
        return [s.flag for s in self.states]

    def has_flagged_states(self) -> bool:
        return any(s.flag.unfavorable for s in self.states)

    def _kernel(self, z: np.ndarray) -> np.ndarray:
        """Unnormalized Gaussian similarity of z to every center."""
        centers = np.stack([s.center for s in self.states])
        variances = np.array([s.variance for s in self.states])
        d2 = np.sum((centers - z) ** 2, axis=1)
        return np.exp(-d2 / variances)

    def update_clusters(self, z) -> StateUpdate:
        """Assign one normalized observation: nudge the best-matching
        cluster or create a new one when nothing is similar enough.

        Creating a state expands every accumulator and TPM by one
        row/column so the model stays dimensionally consistent.
        """
        z = self._check_obs(z)
        if self.n_states == 0:
            self._append_state(z)
            return StateUpdate(index=0, created=True)
        kernel = self._kernel(z)
        winner = int(np.argmax(kernel))
        if kernel[winner] < self.ets.similarity_threshold:
            self._append_state(z)
            return StateUpdate(index=self.n_states - 1, created=True)
        s = self.states[winner]
        d2 = float(np.sum((z - s.center) ** 2))
        s.support_count += 1
        s.center = s.center + self.ets.center_rate * (z - s.center) / s.support_count
        s.variance = max(
            s.variance + (d2 - s.variance) / s.support_count,
            self.ets.variance_floor,
        )
        return StateUpdate(index=winner, created=False)

    def _append_state(self, z: np.ndarray) -> None:
        self.states.append(
            ClusterState(center=z.copy(), variance=self.ets.init_variance)
        )
        self.expand()

    def expand(self) -> None:
        """Grow F, F0 and every TPM to the current number of states.

        The fresh row and column are filled with the init constant; the
        row-mass vector keeps the exact identity F0[r][i] = sum_j F[r][i,j]
        (existing rows gain one eps_bar for the new column, the new row
        holds n * eps_bar), so every TPM row stays stochastic.
        """
        n_old = self.F.shape[1]
        n_new = len(self.states)
        if n_new != n_old + 1:
            raise RuntimeError(
                f"expand called with {n_new} states but dimension {n_old}"
            )
        F = np.full((self.n_actions, n_new, n_new), self.eps_bar)
        F[:, :n_old, :n_old] = self.F
        self.F = F
        F0 = np.empty((self.n_actions, n_new))
        F0[:, :n_old] = self.F0 + self.eps_bar
        F0[:, n_old] = n_new * self.eps_bar
        self.F0 = F0
        self.tpms = self.F / self.F0[:, :, None]

    # ------------------------------------------------------------------
    # recognition

    def state_probabilities(self, z) -> np.ndarray:
        """Similarity-normalized probability of each state given z."""
        if self.n_states == 0:
            raise ValueError("model has no states yet")
        z = self._check_obs(z)
        centers = np.stack([s.center for s in self.states])
        variances = np.array([s.variance for s in self.states])
        expo = -np.sum((centers - z) ** 2, axis=1) / variances
        eta = np.exp(expo - expo.max())  # shift-invariant, avoids underflow
        return eta / eta.sum()

    def flag_current_state(self, dist, flag: StateFlag) -> int:
        """Flag the most probable state (lowest index wins ties).

        Flags are sticky: an already-flagged state is left untouched.
        Returns the index of the targeted state.
        """
        if not isinstance(flag, StateFlag) or not flag.unfavorable:
            raise ValueError("flag must be one of the unfavorable flags")
        dist = self._check_dist(dist)
        idx = int(np.argmax(dist))
        if self.states[idx].flag is StateFlag.NONE:
            self.states[idx].flag = flag
        return idx

    # ------------------------------------------------------------------
    # transition identification and prediction

    def identify_transition(self, tau, gamma, action_index: int) -> None:
        """Fold one observed soft transition (tau -> gamma) into the
        accumulators of the given action; other actions' matrices are
        untouched.
        """
        r = self._check_action(action_index)
        tau = self._check_dist(tau)
        gamma = self._check_dist(gamma)
        cross = np.outer(tau, gamma)
        self.F[r] += self.phi * (cross - self.F[r])
        self.F0[r] += self.phi * (cross.sum(axis=1) - self.F0[r])
        self._renormalize(r)

    def _renormalize(self, r: int) -> None:
        denom = self.F0[r]
        ok = denom > 0.0
        if np.all(ok):
            self.tpms[r] = self.F[r] / denom[:, None]
        else:
            # Degenerate rows (possible only for phi == 1 with one-hot
            # inputs) keep their previous stochastic estimate.
            self.tpms[r, ok, :] = self.F[r, ok, :] / denom[ok, None]

    def predict_next(self, dist, action_index: int) -> np.ndarray:
        """One-step-ahead distribution under the given action.

        The TPM is row-conditional (row = source state), so the predicted
        mass of state j is sum_i dist(i) * P(i, j).
        """
        r = self._check_action(action_index)
        dist = self._check_dist(dist)
        out = dist @ self.tpms[r]
        return out / out.sum()

    def marginal_tpm(self) -> np.ndarray:
        """Action-averaged TPM under a uniform action prior."""
        if self.n_states == 0:
            raise ValueError("model has no states yet")
        return self.tpms.mean(axis=0)

    def predict_k(self, dist, horizon: int) -> np.ndarray:
        """Distribution ``horizon`` steps ahead of the current time.

        ``dist`` is the one-step-ahead distribution (see predict_next);
        the marginal TPM is applied horizon-1 more times under a uniform
        action prior. Use predict_next for horizon 1.
        """
        if horizon < 2:
            raise ValueError("horizon must be >= 2; use predict_next for one step")
        dist = self._check_dist(dist)
        marginal = self.marginal_tpm()
        out = dist
        for _ in range(horizon - 1):
            out = out @ marginal
        return out / out.sum()

    def pad_dist(self, dist) -> np.ndarray:
        """Right-pad a distribution from an earlier (smaller) state set
        with zeros up to the current dimension."""
        dist = np.asarray(dist, dtype=float)
        missing = self.n_states - dist.shape[0]
        if missing < 0:
            raise ValueError("distribution is longer than the state set")
        if missing == 0:
            return dist
        return np.concatenate([dist, np.zeros(missing)])

    # ------------------------------------------------------------------
    # persistence

    def save_snapshot(self, path) -> None:
        """Write the full model (states, flags, accumulators, config) as
        JSON for post-hoc inspection. Field names are documented in the
        README."""
        payload = {
            "n_actions": self.n_actions,
            "phi": self.phi,
            "eps_bar": self.eps_bar,
            "obs_dim": self.obs_dim,
            "ets": {
                "center_rate": self.ets.center_rate,
                "similarity_threshold": self.ets.similarity_threshold,
                "init_variance": self.ets.init_variance,
                "variance_floor": self.ets.variance_floor,
            },
            "states": [
                {
                    "center": [float(c) for c in s.center],
                    "variance": s.variance,
                    "support_count": s.support_count,
                    "flag": s.flag.value,
                }
                for s in self.states
            ],
            "F": self.F.tolist(),
            "F0": self.F0.tolist(),
        }
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def load_snapshot(cls, path) -> "EvolvingModel":
        payload = json.loads(Path(path).read_text())
        model = cls(
            n_actions=payload["n_actions"],
            phi=payload["phi"],
            eps_bar=payload["eps_bar"],
            ets=EtsConfig(**payload["ets"]),
            obs_dim=payload["obs_dim"],
        )
        model.states = [
            ClusterState(
                center=np.array(s["center"], dtype=float),
                variance=float(s["variance"]),
                support_count=int(s["support_count"]),
                flag=StateFlag(s["flag"]),
            )
            for s in payload["states"]
        ]
        n = len(model.states)
        model.F = np.array(payload["F"], dtype=float).reshape(model.n_actions, n, n)
        model.F0 = np.array(payload["F0"], dtype=float).reshape(model.n_actions, n)
        model.tpms = model.F / model.F0[:, :, None] if n else np.zeros(
            (model.n_actions, 0, 0)
        )
        return model

    # ------------------------------------------------------------------
    # validation helpers

    def _check_obs(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.obs_dim,):
            raise ValueError(f"observation must have shape ({self.obs_dim},)")
        return z

    def _check_dist(self, dist) -> np.ndarray:
        dist = np.asarray(dist, dtype=float)
        if dist.shape != (self.n_states,):
            raise ValueError(
                f"distribution length {dist.shape} does not match {self.n_states} states"
            )
        return dist

    def _check_action(self, action_index: int) -> int:
        if not 1 <= action_index <= self.n_actions:
            raise ValueError(
                f"action index {action_index} out of range [1, {self.n_actions}]"
            )
        return action_index - 1
