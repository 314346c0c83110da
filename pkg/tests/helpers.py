"""Shared instance builders for the test suite."""

from __future__ import annotations

import numpy as np

from avgpg.mdp import gen_random_ergodic
from avgpg.policy import tabular_policy


def random_instance(seed: int, max_states: int = 8, max_actions: int = 3, scale: float = 1.0):
    """Random ergodic MDP with a random tabular policy, both drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    n_s = int(rng.integers(2, max_states + 1))
    n_a = int(rng.integers(2, max_actions + 1))
    mdp = gen_random_ergodic(n_s, n_a, smoothing=float(rng.uniform(0.05, 0.5)), seed=seed)
    return mdp, tabular_policy(n_s, n_a, scale * rng.standard_normal(n_s * n_a))
