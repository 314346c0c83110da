"""Exact average-reward quantities for a tabular MDP under a fixed policy.

Everything here is dense linear algebra on |S| x |S| systems; nothing is
sampled. Functions that only need action probabilities accept either a
``PolicyParams`` or a raw (S, A) probability table; those that need the
score function require ``PolicyParams``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from avgpg.mdp import TabularMdp
from avgpg.policy import PolicyParams, prob_table, score_table

MIXING_CAP = 10**6
TAIL_FLOOR = 1e-15
PINV_RTOL = 1e-10
MAX_COND = 1e12


class OracleError(RuntimeError):
    pass


class StationarySolveError(OracleError):
    pass


class MixingCapError(OracleError):
    pass


def _probs(policy) -> np.ndarray:
    if isinstance(policy, PolicyParams):
        return prob_table(policy)
    return np.asarray(policy, dtype=float)


def deterministic_table(actions, n_actions: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=int)
    table = np.zeros((actions.shape[0], n_actions))
    table[np.arange(actions.shape[0]), actions] = 1.0
    return table


def induced_chain(mdp: TabularMdp, policy) -> np.ndarray:
    """P_pi(s, s') = sum_a pi(a|s) P(s'|s, a)."""
    return np.einsum("sa,sat->st", _probs(policy), mdp.transitions)


def stationary_distribution(chain: np.ndarray) -> np.ndarray:
    """Solve d^T P = d^T, sum(d) = 1 with one dense solve.

    The last balance equation is redundant for an irreducible chain and is
    replaced by the normalization row.
    """
    chain = np.asarray(chain, dtype=float)
    n = chain.shape[0]
    system = chain.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise StationarySolveError(
            f"stationary solve failed: irreducibility certificate violated "
            f"(condition number {cond:.3g})"
        )
    d = np.linalg.solve(system, rhs)
    if np.any(d <= 0):
        raise StationarySolveError(
            f"stationary solve failed: irreducibility certificate violated "
            f"(nonpositive mass at states {np.flatnonzero(d <= 0).tolist()})"
        )
    residual = float(np.abs(d @ chain - d).max())
    if residual > 1e-9:
        raise StationarySolveError(f"stationary solve failed: balance residual {residual:.3g}")
    return d


@dataclass
class Evaluation:
    chain: np.ndarray
    d: np.ndarray
    J: float
    V: np.ndarray
    Q: np.ndarray
    A: np.ndarray


def evaluate(mdp: TabularMdp, policy) -> Evaluation:
    """Stationary distribution, gain and differential values in one pass."""
    probs = _probs(policy)
    chain = induced_chain(mdp, probs)
    d = stationary_distribution(chain)
    r_pi = (probs * mdp.rewards).sum(axis=1)
    gain_ = float(d @ r_pi)
    n = mdp.n_states
    # fundamental matrix (I - P + 1 d^T); its solve enforces d . V = 0
    fundamental = np.eye(n) - chain + np.outer(np.ones(n), d)
    cond = np.linalg.cond(fundamental)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise OracleError(f"differential value solve failed (condition number {cond:.3g})")
    V = np.linalg.solve(fundamental, r_pi - gain_)
    Q = mdp.rewards - gain_ + mdp.transitions @ V
    A = Q - V[:, None]
    return Evaluation(chain, d, gain_, V, Q, A)


def gain(mdp: TabularMdp, policy) -> float:
    probs = _probs(policy)
    d = stationary_distribution(induced_chain(mdp, probs))
    return float(d @ (probs * mdp.rewards).sum(axis=1))


def differential_values(mdp: TabularMdp, policy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ev = evaluate(mdp, policy)
    return ev.V, ev.Q, ev.A


# -- mixing and hitting -------------------------------------------------------


def worst_case_distance(chain_power: np.ndarray, d: np.ndarray, norm: str = "tv") -> float:
    """max_s of the distance between row s of ``chain_power`` and ``d``.

    ``norm`` is ``"tv"`` (half L1) or ``"l1"``.
    """
    l1 = float(np.abs(chain_power - d).sum(axis=1).max())
    if norm == "tv":
        return 0.5 * l1
    if norm == "l1":
        return l1
    raise ValueError(f"unknown norm {norm!r}")


def mixing_time(chain: np.ndarray, d: np.ndarray, cap: int = MIXING_CAP, norm: str = "tv") -> int:
    """Smallest t >= 1 with max_s dist(P^t(s, .), d) <= 1/4.

    The worst-case distance is non-increasing in t, so after a short direct
    scan the search proceeds by doubling and bisection on matrix powers.
    """
    chain = np.asarray(chain, dtype=float)
    d = np.asarray(d, dtype=float)

    def mixed(t: int) -> bool:
        return worst_case_distance(np.linalg.matrix_power(chain, t), d, norm) <= 0.25

    power = chain.copy()
    direct = min(64, cap)
    for t in range(1, direct + 1):
        if worst_case_distance(power, d, norm) <= 0.25:
            return t
        power = power @ chain
    if not mixed(cap):
        raise MixingCapError(f"chain not mixed to 1/4 within cap {cap} steps")
    lo, hi = direct, min(2 * direct, cap)
    while not mixed(hi):
        lo, hi = hi, min(2 * hi, cap)
    # invariant: not mixed at lo, mixed at hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mixed(mid):
            hi = mid
        else:
            lo = mid
    return hi


def hitting_time(d: np.ndarray) -> float:
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise OracleError("hitting time undefined: stationary distribution has a nonpositive entry")
    return float(np.max(1.0 / d))


def tail_start(t_mix: int, T: int) -> int:
    return int(math.ceil(4 * t_mix * math.log2(T)))


def mixing_tail(chain: np.ndarray, d: np.ndarray, T: int, t_mix: int | None = None) -> np.ndarray:
    """Per-state sum over t >= N of ||P^t(s, .) - d||_1, with N = ceil(4 t_mix log2 T).

    The sum is truncated once every per-state term drops below 1e-15, or
    once terms stop shrinking at the floating-point floor.
    """
    chain = np.asarray(chain, dtype=float)
    d = np.asarray(d, dtype=float)
    if t_mix is None:
        t_mix = mixing_time(chain, d)
    if T < 4 * t_mix:
        raise OracleError(f"mixing tail needs T >= 4 t_mix, got T={T}, t_mix={t_mix}")
    power = np.linalg.matrix_power(chain, tail_start(t_mix, T))
    total = np.zeros(chain.shape[0])
    prev = np.inf
    for _ in range(MIXING_CAP):
        term = np.abs(power - d).sum(axis=1)
        total += term
        worst = float(term.max())
        if worst < TAIL_FLOOR or (worst < 1e-12 and worst >= prev):
            return total
        prev = worst
        power = power @ chain
    raise MixingCapError(f"mixing tail did not converge within {MIXING_CAP} terms")


# -- gradient, Fisher, natural direction ---------------------------------------


def exact_gradient(mdp: TabularMdp, policy: PolicyParams) -> np.ndarray:
    """sum_{s,a} d(s) pi(a|s) A(s,a) grad log pi(a|s)."""
    ev = evaluate(mdp, policy)
    weights = ev.d[:, None] * prob_table(policy) * ev.A
    return np.einsum("sa,sak->k", weights, score_table(policy))


def fisher(mdp: TabularMdp, policy: PolicyParams) -> np.ndarray:
    probs = prob_table(policy)
    d = stationary_distribution(induced_chain(mdp, probs))
    sc = score_table(policy)
    F = np.einsum("sa,sak,sal->kl", d[:, None] * probs, sc, sc)
    return 0.5 * (F + F.T)


def pinv_apply(F: np.ndarray, g: np.ndarray) -> np.ndarray:
    """F^+ g by eigendecomposition with relative cutoff PINV_RTOL."""
    w, U = np.linalg.eigh(F)
    top = float(np.abs(w).max()) if w.size else 0.0
    if top == 0.0:
        return np.zeros_like(g)
    inv = np.where(w > PINV_RTOL * top, 1.0 / np.where(w == 0, 1.0, w), 0.0)
    return U @ (inv * (U.T @ g))


def npg_direction(mdp: TabularMdp, policy: PolicyParams) -> np.ndarray:
    return pinv_apply(fisher(mdp, policy), exact_gradient(mdp, policy))


def compatible_objective(mdp: TabularMdp, policy: PolicyParams, omega: np.ndarray, weights=None) -> float:
    """E[(score . omega - A)^2] under ``weights`` (S, A); defaults to d_pi x pi."""
    ev = evaluate(mdp, policy)
    if weights is None:
        weights = ev.d[:, None] * prob_table(policy)
    residual = score_table(policy) @ omega - ev.A
    return float((weights * residual**2).sum())


# -- optimal gain and comparisons -----------------------------------------------


def _enumerate_best_gain(mdp: TabularMdp) -> float:
    best = -np.inf
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        best = max(best, gain(mdp, deterministic_table(actions, mdp.n_actions)))
    return best


def optimal_gain(mdp: TabularMdp, max_iter: int = 10**4) -> tuple[float, np.ndarray]:
    """Howard policy iteration for the average-reward criterion.

    Returns the optimal gain and a maximizing deterministic policy as an
    action index per state. Small instances are cross-checked by enumerating
    every deterministic policy.
    """
    n_s, n_a = mdp.n_states, mdp.n_actions
    current = np.argmax(mdp.rewards, axis=1)
    for _ in range(max_iter):
        ev = evaluate(mdp, deterministic_table(current, n_a))
        q = mdp.rewards + mdp.transitions @ ev.V
        best = q.max(axis=1)
        # switch only on strict improvement, which rules out cycling between ties
        keep = q[np.arange(n_s), current] >= best - 1e-12
        improved = np.where(keep, current, np.argmax(q, axis=1))
        if np.array_equal(improved, current):
            break
        current = improved
    else:
        raise OracleError(f"policy iteration did not converge in {max_iter} iterations")
    j_star = ev.J
    if n_s * n_a <= 16:
        j_enum = _enumerate_best_gain(mdp)
        if abs(j_enum - j_star) > 1e-9:
            raise OracleError(f"policy iteration gain {j_star} disagrees with enumeration {j_enum}")
    return j_star, current


def _as_table(pi_star, n_actions: int) -> np.ndarray:
    pi_star = np.asarray(pi_star)
    if pi_star.ndim == 1:
        return deterministic_table(pi_star, n_actions)
    return pi_star.astype(float)


def transfer_error(mdp: TabularMdp, policy: PolicyParams, pi_star) -> float:
    """Compatible-approximation error of the natural direction, weighted by pi_star's occupancy."""
    star = _as_table(pi_star, mdp.n_actions)
    d_star = stationary_distribution(induced_chain(mdp, star))
    omega = npg_direction(mdp, policy)
    return compatible_objective(mdp, policy, omega, weights=d_star[:, None] * star)


def performance_difference(mdp: TabularMdp, policy, other) -> tuple[float, float]:
    """(J(policy) - J(other), E_{d_policy, policy}[A_other])."""
    ev = evaluate(mdp, policy)
    ev_other = evaluate(mdp, other)
    probs = _probs(policy)
    rhs = float((ev.d[:, None] * probs * ev_other.A).sum())
    return ev.J - ev_other.J, rhs


def kl_to_reference(mdp: TabularMdp, pi_star, policy) -> float:
    star = _as_table(pi_star, mdp.n_actions)
    probs = _probs(policy)
    d_star = stationary_distribution(induced_chain(mdp, star))
    support = star > 0
    ratio = np.where(support, star / np.where(support, probs, 1.0), 1.0)
    return float((d_star[:, None] * star * np.log(ratio)).sum())


# -- full report ------------------------------------------------------------------


@dataclass
class OracleReport:
    d_pi: np.ndarray
    J: float
    V: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    grad_J: np.ndarray
    fisher: np.ndarray
    omega_star: np.ndarray
    t_mix: int
    t_hit: float

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


def report(mdp: TabularMdp, policy: PolicyParams) -> OracleReport:
    ev = evaluate(mdp, policy)
    F = fisher(mdp, policy)
    g = exact_gradient(mdp, policy)
    return OracleReport(
        d_pi=ev.d,
        J=ev.J,
        V=ev.V,
        Q=ev.Q,
        A=ev.A,
        grad_J=g,
        fisher=F,
        omega_star=pinv_apply(F, g),
        t_mix=mixing_time(ev.chain, ev.d),
        t_hit=hitting_time(ev.d),
    )


def report_checks(rep: OracleReport, mdp: TabularMdp, policy, tol: float = 1e-9) -> dict[str, bool]:
    """Pass/fail for every report invariant, keyed by a readable name."""
    probs = _probs(policy)
    bellman = rep.Q - (mdp.rewards - rep.J + mdp.transitions @ rep.V)
    return {
        "d_pi positive and normalized": bool(np.all(rep.d_pi > 0) and abs(rep.d_pi.sum() - 1.0) <= 1e-10),
        "zero-mean V under d_pi": abs(float(rep.d_pi @ rep.V)) <= tol,
        "Bellman residual": float(np.abs(bellman).max()) < tol,
        "V equals policy average of Q": float(np.abs(rep.V - (probs * rep.Q).sum(axis=1)).max()) <= tol,
        "|V| <= 5 t_mix": float(np.abs(rep.V).max()) <= 5 * rep.t_mix,
        "|Q| <= 6 t_mix": float(np.abs(rep.Q).max()) <= 6 * rep.t_mix,
        "J in [0, 1]": 0.0 <= rep.J <= 1.0,
    }


def report_violations(rep: OracleReport, mdp: TabularMdp, policy, tol: float = 1e-9) -> list[str]:
    return [name for name, ok in report_checks(rep, mdp, policy, tol).items() if not ok]
