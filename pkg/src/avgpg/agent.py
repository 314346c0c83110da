"""Epoch-based policy gradient with regret accounting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from avgpg import oracle
from avgpg.estimator import MIN_ACTION_PROB, advantage_table, estimate_advantage
from avgpg.mdp import TabularMdp, Trajectory, sample_initial_state, sample_trajectory
from avgpg.policy import PolicyParams, prob_table, score_table
from avgpg.rng import SeedKey, as_key, child_stream


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite parameters after epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class Schedule:
    T_requested: int
    H: int
    N: int
    K: int
    T_effective: int
    c_H: float = 1.0
    c_N: float = 1.0


def make_schedule(T: int, t_mix: float, t_hit: float, c_H: float = 1.0, c_N: float = 1.0) -> Schedule:
    """Epoch length H = c_H 16 t_hit t_mix sqrt(T) log2(T)^2 and window N = c_N 4 t_mix log2(T).

    H is clamped into [2N, T] and the horizon is cut to K = floor(T / H) whole epochs.
    """
    if T < 4:
        raise ValueError(f"T must be >= 4, got {T}")
    if t_mix < 1 or t_hit < 1:
        raise ValueError(f"t_mix and t_hit must be >= 1, got {t_mix}, {t_hit}")
    if c_H <= 0 or c_N <= 0:
        raise ValueError("schedule multipliers must be positive")
    log_t = math.log2(T)
    n = max(1, math.ceil(c_N * 4 * t_mix * log_t))
    h = math.ceil(c_H * 16 * t_hit * t_mix * math.sqrt(T) * log_t**2)
    if 2 * n > T:
        # the clamp range [2N, T] is empty, so no epoch can hold even one window pair
        raise ValueError(
            f"no complete epoch fits: T={T} < 2N={2 * n}; use a larger T or smaller c_N"
        )
    h = min(max(h, 2 * n), T)
    k = T // h
    return Schedule(int(T), int(h), int(n), int(k), int(k * h), float(c_H), float(c_N))


def epoch_gradient(traj: Trajectory, policy: PolicyParams, N: int) -> np.ndarray:
    """Mean over the epoch of A_hat(s_t, a_t) * grad log pi(a_t|s_t).

    Each A_hat comes from the same trajectory. Steps sharing a state-action
    pair share one estimate, so the sum is taken over pair counts.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    adv = advantage_table(traj, policy, N)
    n_s, n_a = policy.n_states, policy.n_actions
    counts = np.bincount(traj.states * n_a + traj.actions, minlength=n_s * n_a).reshape(n_s, n_a)
    weights = counts * adv / len(traj)
    return np.einsum("sa,sak->k", weights, score_table(policy))


def update(theta: np.ndarray, alpha: float, omega: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if theta.shape != omega.shape:
        raise ValueError(f"dimension mismatch: theta {theta.shape} vs omega {omega.shape}")
    if not alpha > 0:
        raise ValueError(f"step size must be positive, got {alpha}")
    return theta + alpha * omega


@dataclass
class EpochRecord:
    k: int
    theta_k: np.ndarray
    omega_k: np.ndarray
    realized_reward_sum: float
    oracle_J_k: float | None = None
    oracle_grad_err_k: float | None = None
    probe_sq_err_k: float | None = None


@dataclass
class RunLog:
    schedule: Schedule
    alpha: float
    seed: tuple[int, ...]
    records: list[EpochRecord] = field(default_factory=list)
    T_effective: int = 0
    total_reward: float = 0.0
    J_star: float = 0.0
    regret: float = 0.0
    avg_optimality_gap: float | None = None

    @property
    def mean_grad_err_sq(self) -> float | None:
        errs = [r.oracle_grad_err_k for r in self.records]
        if not errs or any(e is None for e in errs):
            return None
        return float(np.mean(np.square(errs)))

    @property
    def estimator_mse(self) -> float | None:
        errs = [r.probe_sq_err_k for r in self.records if r.probe_sq_err_k is not None]
        if not errs:
            return None
        return float(np.mean(errs))

    def to_dict(self) -> dict:
        def plain(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, dict):
                return {k: plain(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [plain(v) for v in x]
            return x

        return {
            "schedule": asdict(self.schedule),
            "alpha": self.alpha,
            "seed": list(self.seed),
            "records": [plain(asdict(r)) for r in self.records],
            "summary": {
                "T_effective": self.T_effective,
                "total_reward": self.total_reward,
                "J_star": self.J_star,
                "regret": self.regret,
                "avg_optimality_gap": self.avg_optimality_gap,
                "mean_grad_err_sq": self.mean_grad_err_sq,
                "estimator_mse": self.estimator_mse,
            },
        }


def run(
    mdp: TabularMdp,
    policy: PolicyParams,
    schedule: Schedule,
    alpha: float,
    seed: SeedKey,
    diagnostics: bool = False,
    J_star: float | None = None,
    probe_pair: tuple[int, int] | None = None,
) -> RunLog:
    """Run K epochs from theta_1 = 0 along one unbroken trajectory.

    ``policy`` fixes the parameterization; its theta is ignored. The initial
    state is drawn from the MDP's initial distribution on stream 0 of
    ``seed`` and epoch k uses stream k. With ``diagnostics`` the oracle gain
    and gradient error are logged for every epoch, plus the squared error of
    A_hat at ``probe_pair`` when one is given.
    """
    key = as_key(seed)
    if not alpha > 0:
        raise ValueError(f"step size must be positive, got {alpha}")
    if J_star is None:
        J_star = oracle.optimal_gain(mdp)[0]
    H, N = schedule.H, schedule.N
    log = RunLog(schedule=schedule, alpha=float(alpha), seed=key, J_star=float(J_star))
    theta = np.zeros(policy.dim)
    state = sample_initial_state(mdp, child_stream(key, 0))
    for k in range(1, schedule.K + 1):
        current = policy.with_theta(theta)
        traj = sample_trajectory(mdp, current, state, H, child_stream(key, k), start_time=(k - 1) * H)
        omega = epoch_gradient(traj, current, N)
        record = EpochRecord(k, theta.copy(), omega, float(traj.rewards.sum()))
        if diagnostics:
            ev = oracle.evaluate(mdp, current)
            record.oracle_J_k = ev.J
            grad = oracle.exact_gradient(mdp, current)
            record.oracle_grad_err_k = float(np.linalg.norm(omega - grad))
            if probe_pair is not None:
                s, a = probe_pair
                # diagnostic only: skip instead of tripping the support guard
                if prob_table(current)[s, a] >= MIN_ACTION_PROB:
                    a_hat = estimate_advantage(traj, s, a, current, N)
                    record.probe_sq_err_k = float((a_hat - ev.A[s, a]) ** 2)
        log.records.append(record)
        theta = update(theta, alpha, omega)
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(k)
        state = traj.terminal_state

    log.T_effective = schedule.T_effective
    log.total_reward = math.fsum(r.realized_reward_sum for r in log.records)
    log.regret = log.T_effective * log.J_star - log.total_reward
    if diagnostics:
        log.avg_optimality_gap = log.J_star - float(np.mean([r.oracle_J_k for r in log.records]))
    return log


def regret_decomposition(log: RunLog) -> tuple[float, float]:
    """Split regret into the optimization term H sum(J* - J_k) and the
    fluctuation term sum(H J_k - R_k). Requires a diagnostic run."""
    if any(r.oracle_J_k is None for r in log.records):
        raise ValueError("regret decomposition needs per-epoch oracle gains (diagnostics=True)")
    H = log.schedule.H
    optimization = math.fsum(H * (log.J_star - r.oracle_J_k) for r in log.records)
    fluctuation = math.fsum(H * r.oracle_J_k - r.realized_reward_sum for r in log.records)
    return optimization, fluctuation
