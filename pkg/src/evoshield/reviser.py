"""Action inspection and revision against the evolving model.

Before a controller action is applied, the next-state distribution it
implies is predicted and checked for unfavorable states. If the predicted
probability of a flagged state clears a distribution-dependent threshold,
neighboring discrete actions are searched (slower bins for safety risk,
faster bins for fall-behind risk) until one passes inspection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .evolving_model import EvolvingModel, StateFlag

__all__ = [
    "ActionGrid",
    "ReviserConfig",
    "Indicator",
    "ReviseResult",
    "variant_threshold",
    "inspect_action",
    "exploration_variance",
    "revise",
]

_EDGE_EPS = 1e-9  # absorbs float noise at bin boundaries


@dataclass(frozen=True)
class ActionGrid:
    """Uniform binning of the continuous acceleration interval.

    Bins are half-open [a_min+(r-1)*delta, a_min+r*delta), 1-based, with
    the last bin closed at a_max. ``delta`` must divide the interval into
    a whole number of bins.
    """

    a_min: float = -2.0
    a_max: float = 2.0
    delta: float = 0.2

    def __post_init__(self) -> None:
        if self.a_max <= self.a_min:
            raise ValueError("a_max must exceed a_min")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        width = self.a_max - self.a_min
        q = round(width / self.delta)
        if q < 1 or abs(q * self.delta - width) > 1e-9:
            raise ValueError(
                f"delta {self.delta} does not evenly divide [{self.a_min}, {self.a_max}]"
            )

    @property
    def q(self) -> int:
        return round((self.a_max - self.a_min) / self.delta)

    def encode(self, a: float) -> int:
        """1-based index of the bin containing a (clamped into range)."""
        a = min(max(a, self.a_min), self.a_max)
        r = int(math.floor((a - self.a_min) / self.delta + _EDGE_EPS)) + 1
        return min(r, self.q)

    def decode(self, r: int) -> float:
        """Midpoint of bin r."""
        if not 1 <= r <= self.q:
            raise ValueError(f"bin index {r} out of range [1, {self.q}]")
        return self.a_min + (r - 0.5) * self.delta


class Indicator(IntEnum):
    """Inspection outcome: which criterion the predicted state violates."""

    COLLISION = 0
    LARGE_DISTANCE = 1
    CLEAR = 2


@dataclass(frozen=True)
class ReviserConfig:
    k_decay: float = 0.001          # exploration-variance decay constant
    activation_episodes: int = 50   # revision disabled through this many episodes
    a_min: float = -2.0
    a_max: float = 2.0
    scan_descending: bool = False   # inspect states by probability instead of index

    def __post_init__(self) -> None:
        if self.k_decay <= 0.0:
            raise ValueError("k_decay must be positive")
        if self.activation_episodes < 0:
            raise ValueError("activation_episodes must be >= 0")


@dataclass(frozen=True)
class ReviseResult:
    action: float
    intervened: bool
    indicator: Indicator | None  # None when revision was not active


def variant_threshold(dist_pred) -> float:
    """Distribution-dependent probability cutoff.

    Sort descending into X, take E = sum_j j*X(j) (1-based), and return
    X(floor(E)). Spread-out predictions yield a lower cutoff, concentrated
    ones a higher cutoff. Depends only on the sorted values, so it is
    invariant under permutation of the input.
    """
    x = np.sort(np.asarray(dist_pred, dtype=float))[::-1]
    if x.size == 0:
        raise ValueError("empty distribution")
    expectation = float(np.sum(np.arange(1, x.size + 1) * x))
    idx = int(math.floor(expectation + _EDGE_EPS))
    return float(x[idx - 1])


def inspect_action(dist_pred, flags, scan_descending: bool = False) -> Indicator:
    """Classify a predicted next-state distribution by the first state
    whose probability reaches the variant threshold.

    States are scanned in index order (or by descending probability when
    ``scan_descending``); the first qualifying state's flag decides the
    outcome. If no state qualifies the action is considered clear.
    """
    dist_pred = np.asarray(dist_pred, dtype=float)
    if dist_pred.shape[0] != len(flags):
        raise ValueError("distribution and flag list lengths differ")
    threshold = variant_threshold(dist_pred)
    if scan_descending:
        order = np.argsort(-dist_pred, kind="stable")
    else:
        order = range(dist_pred.shape[0])
    for i in order:
        if dist_pred[i] >= threshold:
            flag = flags[i]
            if flag is StateFlag.UNFAVORABLE_SAFETY:
                return Indicator.COLLISION
            if flag is StateFlag.UNFAVORABLE_SPEED:
                return Indicator.LARGE_DISTANCE
            return Indicator.CLEAR
    return Indicator.CLEAR


def exploration_variance(episode_iter: int, config: ReviserConfig) -> float:
    """Variance of the noise added to revised actions; starts at a_max and
    shrinks as episodes accumulate."""
    return config.a_max / max(1.0, config.k_decay * episode_iter)


def revise(
    dist,
    action: float,
    grid: ActionGrid,
    model: EvolvingModel,
    episode_iter: int,
    rng,
    config: ReviserConfig | None = None,
) -> ReviseResult:
    """Inspect the controller's action and search the grid for a safer one.

    ``dist`` is the current state distribution, ``episode_iter`` the
    1-based episode counter of the run. Until the model has been exercised
    for more than ``activation_episodes`` episodes, or while it has no
    flagged states, the action passes through untouched.

    On a predicted collision the bin index is walked down (slower) while
    the collision persists; on a predicted large distance it is walked up
    (faster). The surviving bin's midpoint gets zero-mean Gaussian noise
    with the decaying exploration variance, clamped to the action range.
    """
    if episode_iter < 1:
        raise ValueError("episode_iter must be >= 1")
    if config is None:
        config = ReviserConfig()
    if episode_iter <= config.activation_episodes or not model.has_flagged_states():
        return ReviseResult(action=action, intervened=False, indicator=None)

    flags = model.flags
    r = grid.encode(action)
    predicted = model.predict_next(dist, r)
    indicator = inspect_action(predicted, flags, config.scan_descending)
    if indicator is Indicator.CLEAR:
        return ReviseResult(action=action, intervened=False, indicator=indicator)

    trigger = indicator
    if indicator is Indicator.COLLISION:
        while indicator is Indicator.COLLISION and r > 1:
            r -= 1
            predicted = model.predict_next(dist, r)
            indicator = inspect_action(predicted, flags, config.scan_descending)
    else:
        while indicator is Indicator.LARGE_DISTANCE and r < grid.q:
            r += 1
            predicted = model.predict_next(dist, r)
            indicator = inspect_action(predicted, flags, config.scan_descending)

    variance = exploration_variance(episode_iter, config)
    revised = grid.decode(r) + rng.normal(0.0, math.sqrt(variance))
    revised = min(max(revised, config.a_min), config.a_max)
    return ReviseResult(action=float(revised), intervened=True, indicator=trigger)
