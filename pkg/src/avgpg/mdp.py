"""Finite ergodic MDPs: construction, validation, serialization and sampling."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from avgpg import _kernels
from avgpg.policy import PolicyParams, prob_table

ROW_TOL = 1e-12


@dataclass(frozen=True)
class TabularMdp:
    """Tabular MDP with deterministic rewards in [0, 1].

    ``transitions[s, a, s']`` is P(s'|s, a); ``initial_dist`` is the law of s_0.
    Arrays are copied and made read-only on construction.
    """

    rewards: np.ndarray
    transitions: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        rewards = np.array(self.rewards, dtype=float)
        transitions = np.array(self.transitions, dtype=float)
        initial = np.array(self.initial_dist, dtype=float)
        if rewards.ndim != 2:
            raise ValueError(f"rewards must be (S, A), got shape {rewards.shape}")
        n_s, n_a = rewards.shape
        if transitions.shape != (n_s, n_a, n_s):
            raise ValueError(
                f"transitions must have shape {(n_s, n_a, n_s)}, got {transitions.shape}"
            )
        if initial.shape != (n_s,):
            raise ValueError(f"initial_dist must have shape {(n_s,)}, got {initial.shape}")
        for arr in (rewards, transitions, initial):
            arr.setflags(write=False)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "initial_dist", initial)

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]


@dataclass
class ValidationReport:
    row_violations: list[tuple[int, int, float]] = field(default_factory=list)
    negative_entries: list[tuple[int, int, int]] = field(default_factory=list)
    reward_violations: list[tuple[int, int, float]] = field(default_factory=list)
    initial_dist_deviation: float = 0.0
    irreducible: bool = False
    aperiodic: bool = False

    @property
    def ergodic(self) -> bool:
        return self.irreducible and self.aperiodic

    @property
    def ok(self) -> bool:
        return (
            not self.row_violations
            and not self.negative_entries
            and not self.reward_violations
            and self.initial_dist_deviation <= ROW_TOL
            and self.ergodic
        )


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


def _period(adj: np.ndarray) -> int:
    # gcd of level[u] + 1 - level[v] over edges u -> v of a strongly connected graph
    level = np.full(adj.shape[0], -1)
    level[0] = 0
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    g = 0
    for u, v in zip(*np.nonzero(adj)):
        g = math.gcd(g, int(abs(level[u] + 1 - level[v])))
    return g


def chain_is_ergodic(chain: np.ndarray) -> tuple[bool, bool]:
    """(irreducible, aperiodic) for a stochastic matrix, from its support graph."""
    adj = np.asarray(chain) > 0
    irreducible = bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())
    if not irreducible:
        return False, False
    return True, _period(adj) == 1


def validate_mdp(mdp: TabularMdp) -> ValidationReport:
    """Check row sums, entry signs, reward range and a uniform-policy ergodicity witness."""
    report = ValidationReport()
    sums = mdp.transitions.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_TOL)):
        report.row_violations.append((int(s), int(a), float(abs(sums[s, a] - 1.0))))
    for idx in zip(*np.nonzero(mdp.transitions < 0)):
        report.negative_entries.append(tuple(int(i) for i in idx))
    bad = (mdp.rewards < 0) | (mdp.rewards > 1) | ~np.isfinite(mdp.rewards)
    for s, a in zip(*np.nonzero(bad)):
        report.reward_violations.append((int(s), int(a), float(mdp.rewards[s, a])))
    report.initial_dist_deviation = float(abs(mdp.initial_dist.sum() - 1.0))
    uniform_chain = mdp.transitions.mean(axis=1)
    report.irreducible, report.aperiodic = chain_is_ergodic(uniform_chain)
    return report


def gen_random_ergodic(
    n_states: int, n_actions: int, smoothing: float = 0.1, seed: int = 0
) -> TabularMdp:
    """Random MDP whose transition rows all put mass >= smoothing / n_states on every state.

    Rewards are uniform on [0, 1]; each row is a flat-Dirichlet draw mixed with
    the uniform distribution. The initial distribution is uniform.
    """
    if not 0 < smoothing <= 1:
        raise ValueError(f"smoothing must lie in (0, 1], got {smoothing}")
    if n_states < 1 or n_actions < 1:
        raise ValueError("n_states and n_actions must be positive")
    rng = np.random.default_rng(seed)
    rewards = rng.random((n_states, n_actions))
    raw = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    transitions = (1.0 - smoothing) * raw + smoothing / n_states
    transitions /= transitions.sum(axis=2, keepdims=True)
    return TabularMdp(rewards, transitions, np.full(n_states, 1.0 / n_states))


def make_two_state() -> TabularMdp:
    """Two states, two actions; reward 1 in state 1.

    Action 0 stays put with probability 0.9, action 1 with probability 0.2.
    """
    stay = {0: 0.9, 1: 0.2}
    transitions = np.zeros((2, 2, 2))
    for s in range(2):
        for a in range(2):
            transitions[s, a, s] = stay[a]
            transitions[s, a, 1 - s] = 1.0 - stay[a]
    rewards = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularMdp(rewards, transitions, np.array([0.5, 0.5]))


def constant_reward_mdp(
    n_states: int, n_actions: int, value: float, smoothing: float = 0.5, seed: int = 0
) -> TabularMdp:
    base = gen_random_ergodic(n_states, n_actions, smoothing, seed)
    return TabularMdp(np.full((n_states, n_actions), float(value)), base.transitions, base.initial_dist)


# -- serialization -----------------------------------------------------------


def mdp_to_dict(mdp: TabularMdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "rewards": mdp.rewards.tolist(),
        "transitions": mdp.transitions.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
    }


def mdp_from_dict(doc: dict) -> TabularMdp:
    mdp = TabularMdp(
        np.asarray(doc["rewards"], dtype=float),
        np.asarray(doc["transitions"], dtype=float),
        np.asarray(doc["initial_dist"], dtype=float),
    )
    for key in ("n_states", "n_actions"):
        if key in doc and int(doc[key]) != getattr(mdp, key):
            raise ValueError(f"{key}={doc[key]} disagrees with array shapes ({getattr(mdp, key)})")
    return mdp


def save_mdp(mdp: TabularMdp, path, features: np.ndarray | None = None) -> None:
    doc = mdp_to_dict(mdp)
    if features is not None:
        doc["features"] = np.asarray(features, dtype=float).tolist()
    Path(path).write_text(json.dumps(doc, indent=1))


def load_mdp(path) -> tuple[TabularMdp, np.ndarray | None]:
    """Read an MDP document; returns the MDP and its ``features`` array if present."""
    doc = json.loads(Path(path).read_text())
    features = doc.get("features")
    if features is not None:
        features = np.asarray(features, dtype=float)
        if features.ndim != 3 or features.shape[:2] != (len(doc["rewards"]), len(doc["rewards"][0])):
            raise ValueError(f"features must be indexed [s][a][k], got shape {features.shape}")
    return mdp_from_dict(doc), features


# -- sampling ----------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """One contiguous stretch of interaction starting at global step ``start_time``."""

    start_time: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminal_state: int

    def __len__(self) -> int:
        return len(self.states)

    @property
    def steps(self) -> Iterator[tuple[int, int, float]]:
        for s, a, r in zip(self.states, self.actions, self.rewards):
            yield int(s), int(a), float(r)


def cumulative_tables(mdp: TabularMdp, policy: PolicyParams) -> tuple[np.ndarray, np.ndarray]:
    return np.cumsum(prob_table(policy), axis=1), np.cumsum(mdp.transitions, axis=2)


def sample_initial_state(mdp: TabularMdp, rng: np.random.Generator) -> int:
    cum = np.cumsum(mdp.initial_dist)
    return int(min(np.searchsorted(cum, rng.random(), side="right"), mdp.n_states - 1))


def sample_trajectory(
    mdp: TabularMdp,
    policy: PolicyParams,
    start_state: int,
    horizon: int,
    rng: np.random.Generator,
    start_time: int = 0,
) -> Trajectory:
    """Follow ``policy`` for ``horizon`` steps from ``start_state``.

    Consumes exactly ``2 * horizon`` uniforms from ``rng`` (one for the action,
    one for the transition, per step).
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if not 0 <= start_state < mdp.n_states:
        raise ValueError(f"start_state {start_state} out of range")
    cum_pi, cum_p = cumulative_tables(mdp, policy)
    uniforms = rng.random((horizon, 2))
    states, actions, terminal = _kernels.sample_path(cum_pi, cum_p, int(start_state), uniforms)
    return Trajectory(
        start_time=int(start_time),
        states=states,
        actions=actions,
        rewards=mdp.rewards[states, actions],
        terminal_state=int(terminal),
    )
