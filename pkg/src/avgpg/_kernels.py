"""Compiled inner loops for trajectory sampling and the sub-trajectory scan."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _inverse_cdf(cum: np.ndarray, u: float) -> int:
    n = cum.shape[0]
    for i in range(n):
        if u < cum[i]:
            return i
    # cumulative sums may end a few ulps below 1
    return n - 1


@numba.njit(cache=True, nogil=True)
def sample_path(cum_pi, cum_p, start_state, uniforms):
    """Roll out ``len(uniforms)`` steps.

    ``cum_pi[s]`` is the cumulative action distribution at ``s``,
    ``cum_p[s, a]`` the cumulative next-state distribution, and row ``t`` of
    ``uniforms`` holds the two draws (action, transition) for step ``t``.
    """
    horizon = uniforms.shape[0]
    states = np.empty(horizon, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    s = start_state
    for t in range(horizon):
        a = _inverse_cdf(cum_pi[s], uniforms[t, 0])
        states[t] = s
        actions[t] = a
        s = _inverse_cdf(cum_p[s, a], uniforms[t, 1])
    return states, actions, s


@numba.njit(cache=True, nogil=True)
def scan_starts(states, s, n):
    """Local start indices of N-windows beginning in ``s``, spaced by at least 2N."""
    last = states.shape[0] - 1
    out = np.empty(states.shape[0], dtype=np.int64)
    count = 0
    tau = 0
    while tau <= last - n:
        if states[tau] == s:
            out[count] = tau
            count += 1
            tau += 2 * n
        else:
            tau += 1
    return out[:count]
