"""Softmax policy classes: tabular logits and linear features."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from avgpg.mdp import TabularMdp


class PolicyKind(str, enum.Enum):
    TABULAR = "tabular"
    LINEAR = "linear"


@dataclass(frozen=True)
class PolicyParams:
    """Parameter vector plus the parameterization it plugs into.

    Tabular softmax uses ``theta.reshape(n_states, n_actions)`` as logits.
    Linear softmax uses logits ``features[s, a] @ theta`` with ``features``
    of shape (S, A, d).
    """

    kind: PolicyKind
    theta: np.ndarray
    n_states: int
    n_actions: int
    features: np.ndarray | None = None

    def __post_init__(self):
        kind = PolicyKind(self.kind)
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        features = self.features
        if kind is PolicyKind.TABULAR:
            if features is not None:
                raise ValueError("tabular softmax takes no features")
            expected = self.n_states * self.n_actions
        else:
            if features is None:
                raise ValueError("linear softmax requires a feature map")
            features = np.array(features, dtype=float)
            if features.ndim != 3 or features.shape[:2] != (self.n_states, self.n_actions):
                raise ValueError(
                    f"features must have shape ({self.n_states}, {self.n_actions}, d), "
                    f"got {features.shape}"
                )
            features.setflags(write=False)
            expected = features.shape[2]
        if theta.shape != (expected,):
            raise ValueError(f"theta must have dimension {expected}, got {theta.shape[0]}")
        theta.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "features", features)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def with_theta(self, theta) -> PolicyParams:
        return PolicyParams(self.kind, theta, self.n_states, self.n_actions, self.features)


def tabular_policy(n_states: int, n_actions: int, theta=None) -> PolicyParams:
    if theta is None:
        theta = np.zeros(n_states * n_actions)
    return PolicyParams(PolicyKind.TABULAR, theta, n_states, n_actions)


def linear_policy(features, theta=None) -> PolicyParams:
    features = np.asarray(features, dtype=float)
    if theta is None:
        theta = np.zeros(features.shape[2])
    return PolicyParams(PolicyKind.LINEAR, theta, features.shape[0], features.shape[1], features)


def make_policy(kind, mdp: TabularMdp, theta=None, features=None) -> PolicyParams:
    if PolicyKind(kind) is PolicyKind.TABULAR:
        return tabular_policy(mdp.n_states, mdp.n_actions, theta)
    if features is None:
        raise ValueError("linear softmax requires a feature map")
    return linear_policy(features, theta)


def logit_table(policy: PolicyParams) -> np.ndarray:
    if policy.kind is PolicyKind.TABULAR:
        return policy.theta.reshape(policy.n_states, policy.n_actions)
    return policy.features @ policy.theta


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def prob_table(policy: PolicyParams) -> np.ndarray:
    """pi(a|s) for all (s, a), shape (S, A)."""
    return _softmax_rows(logit_table(policy))


def action_probs(policy: PolicyParams, s: int) -> np.ndarray:
    return _softmax_rows(logit_table(policy)[s])


def log_prob(policy: PolicyParams, s: int, a: int) -> float:
    logits = logit_table(policy)[s]
    m = logits.max()
    return float(logits[a] - m - np.log(np.exp(logits - m).sum()))


def score_table(policy: PolicyParams) -> np.ndarray:
    """grad_theta log pi(a|s) for all (s, a), shape (S, A, d)."""
    probs = prob_table(policy)
    n_s, n_a = probs.shape
    if policy.kind is PolicyKind.TABULAR:
        out = np.zeros((n_s, n_a, n_s, n_a))
        eye = np.eye(n_a)
        for s in range(n_s):
            out[s, :, s, :] = eye - probs[s]
        return out.reshape(n_s, n_a, n_s * n_a)
    phi = policy.features
    mean_phi = np.einsum("sa,sak->sk", probs, phi)
    return phi - mean_phi[:, None, :]


def score(policy: PolicyParams, s: int, a: int) -> np.ndarray:
    probs = action_probs(policy, s)
    if policy.kind is PolicyKind.TABULAR:
        out = np.zeros((policy.n_states, policy.n_actions))
        out[s] = -probs
        out[s, a] += 1.0
        return out.reshape(-1)
    phi = policy.features[s]
    return phi[a] - probs @ phi


@dataclass(frozen=True)
class ConstantsReport:
    """Empirical lower-bound surrogates for the smoothness constants.

    ``G_hat`` bounds score norms, ``B_hat`` the score Lipschitz ratio,
    ``mu_F_hat`` is the smallest Fisher eigenvalue seen and ``L_hat`` the
    largest gradient-difference ratio. None of these certify a global bound.
    """

    G_hat: float
    B_hat: float
    mu_F_hat: float
    L_hat: float

    @property
    def recommended_alpha(self) -> float:
        return float("inf") if self.L_hat == 0 else 1.0 / (4.0 * self.L_hat)


def measure_constants(
    kind,
    mdp: TabularMdp,
    probe_thetas: Sequence[np.ndarray],
    features: np.ndarray | None = None,
) -> ConstantsReport:
    from avgpg import oracle

    if len(probe_thetas) == 0:
        raise ValueError("probe list must be nonempty")
    policies = [make_policy(kind, mdp, th, features) for th in probe_thetas]
    scores = [score_table(p) for p in policies]
    grads = [oracle.exact_gradient(mdp, p) for p in policies]

    g_hat = max(float(np.linalg.norm(sc, axis=2).max()) for sc in scores)
    mu_f = min(float(np.linalg.eigvalsh(oracle.fisher(mdp, p))[0]) for p in policies)
    b_hat = l_hat = 0.0
    for i, j in itertools.combinations(range(len(policies)), 2):
        gap = float(np.linalg.norm(policies[i].theta - policies[j].theta))
        if gap < 1e-12:
            continue
        b_hat = max(b_hat, float(np.linalg.norm(scores[i] - scores[j], axis=2).max()) / gap)
        l_hat = max(l_hat, float(np.linalg.norm(grads[i] - grads[j])) / gap)
    # eigvalsh can return tiny negatives on a rank-deficient PSD matrix
    return ConstantsReport(g_hat, b_hat, max(mu_f, 0.0), l_hat)
