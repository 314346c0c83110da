"""Advantage estimation from a single epoch trajectory.

For a queried state ``s``, the trajectory is scanned left to right for
length-N windows that start in ``s``; after each hit the cursor jumps 2N
ahead so consecutive windows are at least N steps apart. The window reward
sums ``y_j`` give

    V_hat = mean(y_j)
    Q_hat = mean(y_j * 1[a_tau_j == a]) / pi(a|s)
    A_hat = Q_hat - V_hat

and both estimates fall back to 0 when no window is found.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from avgpg import _kernels
from avgpg.mdp import Trajectory
from avgpg.policy import PolicyParams, prob_table

MIN_ACTION_PROB = 1e-12


class DegenerateSupportError(ValueError):
    """Raised when an importance weight 1/pi(a|s) would be taken with pi(a|s) < 1e-12."""


@dataclass(frozen=True)
class SubTrajectorySet:
    N: int
    taus: np.ndarray
    ys: np.ndarray
    first_actions: np.ndarray

    def __len__(self) -> int:
        return len(self.taus)

    @property
    def entries(self) -> list[tuple[int, float, int]]:
        return [(int(t), float(y), int(a)) for t, y, a in zip(self.taus, self.ys, self.first_actions)]


def find_subtrajectories(traj: Trajectory, s: int, N: int) -> SubTrajectorySet:
    if N < 1:
        raise ValueError(f"sub-trajectory length must be >= 1, got {N}")
    starts = _kernels.scan_starts(np.asarray(traj.states, dtype=np.int64), int(s), int(N))
    # windows are summed directly rather than by prefix differences so y is exact
    ys = np.array([traj.rewards[t : t + N].sum() for t in starts], dtype=float)
    return SubTrajectorySet(
        N=int(N),
        taus=starts + traj.start_time,
        ys=ys,
        first_actions=np.asarray(traj.actions)[starts],
    )


def estimate_v(subs: SubTrajectorySet) -> float:
    if len(subs) == 0:
        raise ValueError("no sub-trajectories; the caller must use the zero default")
    return float(np.mean(subs.ys))


def _check_support(pi_a: float) -> None:
    if pi_a < MIN_ACTION_PROB:
        raise DegenerateSupportError(
            f"pi(a|s) = {pi_a:.3g} is below the degenerate-support guard {MIN_ACTION_PROB}"
        )


def estimate_q(subs: SubTrajectorySet, a: int, pi_a: float) -> float:
    if len(subs) == 0:
        raise ValueError("no sub-trajectories; the caller must use the zero default")
    _check_support(pi_a)
    hits = subs.first_actions == a
    return float(np.sum(subs.ys * hits) / len(subs) / pi_a)


def estimate_components(traj: Trajectory, s: int, a: int, policy: PolicyParams, N: int):
    """(i, V_hat, Q_hat, A_hat) for one query."""
    subs = find_subtrajectories(traj, s, N)
    if len(subs) == 0:
        return 0, 0.0, 0.0, 0.0
    v = estimate_v(subs)
    q = estimate_q(subs, a, float(prob_table(policy)[s, a]))
    return len(subs), v, q, q - v


def estimate_advantage(traj: Trajectory, s: int, a: int, policy: PolicyParams, N: int) -> float:
    return estimate_components(traj, s, a, policy, N)[3]


def advantage_table(traj: Trajectory, policy: PolicyParams, N: int) -> np.ndarray:
    """A_hat(s, a) for every pair visited in ``traj``, one scan per visited state.

    Unvisited pairs are left at zero. Entries agree exactly with
    :func:`estimate_advantage` on the same query.
    """
    if N < 1:
        raise ValueError(f"sub-trajectory length must be >= 1, got {N}")
    probs = prob_table(policy)
    n_s, n_a = probs.shape
    table = np.zeros((n_s, n_a))
    states = np.asarray(traj.states, dtype=np.int64)
    for s in np.unique(states):
        subs = find_subtrajectories(traj, int(s), N)
        if len(subs) == 0:
            continue
        v = estimate_v(subs)
        for a in np.unique(traj.actions[states == s]):
            table[s, a] = estimate_q(subs, int(a), float(probs[s, a])) - v
    return table
