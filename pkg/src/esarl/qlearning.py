"""Baseline Q-learning on a fixed radial-basis feature grid.

States are normalized per dimension to [-1, 1] (bounds taken from the
training data, queries clamped) and projected onto Gaussian bumps centred on
a regular grid over the normalized cube, all sharing one width. Each action
keeps its own weight vector over those features, updated by a single sweep of
temporal-difference corrections

    w_a += alpha * (r + gamma * max_a' phi(s')^T w_a' - phi(s)^T w_a) * phi(s)

in dataset order. Terminal transitions use the plain reward as target. A
probe subset of (s, a) pairs is re-evaluated at fixed intervals to record how
much the value estimates still move.

With thousands of overlapping bumps the feature vector has a large norm
(||phi||^2 runs into the tens or hundreds), so the raw update rule is not a
contraction at alpha = 0.2 and value estimates generally oscillate with
growing amplitude rather than settle. Training therefore projects the
weights onto a wide box after every update, which keeps a full sweep finite
without touching the update arithmetic at ordinary magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import StateVec, TransitionDataset


@dataclass(frozen=True)
class QlConfig:
    alpha: float = 0.2
    gamma: float = 0.9
    points_per_dim: int = 4
    sigma: float = 1.1
    probe_size: int = 512
    probe_interval: int = 2000

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.points_per_dim < 1 or self.sigma <= 0:
            raise ValueError("grid must be non-empty with positive width")


class RbfNet:
    """Normalizer plus Gaussian feature map with fixed centers."""

    def __init__(self, centers: np.ndarray, sigma: float, lo: np.ndarray,
                 hi: np.ndarray):
        self.centers = np.asarray(centers, dtype=np.float64)
        self.sigma = float(sigma)
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if self.centers.ndim != 2 or self.centers.shape[1] != self.lo.size:
            raise ValueError("centers and bounds disagree on dimension")

    @classmethod
    def grid(cls, lo, hi, points_per_dim: int = 4, sigma: float = 1.1) -> "RbfNet":
        """Centers on the cartesian grid of equally spaced points per axis
        spanning [-1, 1] in normalized coordinates."""
        lo = np.asarray(lo, dtype=np.float64)
        d = lo.size
        if points_per_dim == 1:
            axis = np.zeros(1)
        else:
            axis = np.linspace(-1.0, 1.0, points_per_dim)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        centers = np.stack([m.ravel() for m in mesh], axis=1)
        return cls(centers, sigma, lo, hi)

    @property
    def n_features(self) -> int:
        return self.centers.shape[0]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        span = self.hi - self.lo
        z = np.zeros_like(x)
        ok = span > 0
        z[:, ok] = 2.0 * (x[:, ok] - self.lo[ok]) / span[ok] - 1.0
        return np.clip(z, -1.0, 1.0)

    def features_matrix(self, x: np.ndarray) -> np.ndarray:
        z = self.normalize(x)
        d2 = ((z[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-d2 / (2.0 * self.sigma ** 2))


def featurize(s, net: RbfNet) -> np.ndarray:
    """Feature vector of one state (a StateVec or a length-6 array)."""
    x = s.as_array() if isinstance(s, StateVec) else np.asarray(s, dtype=np.float64)
    return net.features_matrix(x.reshape(1, -1))[0]


# Projection bound for the weights. Far beyond any value the unit-scale
# examples reach, but it stops the divergent oscillation of the dense-feature
# update from overflowing float64 during a full sweep.
WEIGHT_BOUND = 1e6


def _td_update(weights, phi_s, phi_next, a, r, terminal, alpha, gamma):
    q_sa = float(weights[a] @ phi_s)
    target = r if terminal else r + gamma * float((weights @ phi_next).max())
    weights[a] += alpha * (target - q_sa) * phi_s
    np.clip(weights[a], -WEIGHT_BOUND, WEIGHT_BOUND, out=weights[a])
    return weights


def ql_update(weights: np.ndarray, transition, config: QlConfig,
              net: RbfNet) -> np.ndarray:
    """One temporal-difference update; returns a new weight matrix."""
    out = weights.copy()
    return _td_update(out, featurize(transition.s, net),
                      featurize(transition.s_next, net), transition.a,
                      transition.r, transition.terminal, config.alpha,
                      config.gamma)


class RbfPolicy:
    """Greedy policy over the learned weights; mirrors the QModel interface."""

    def __init__(self, doses: tuple, net: RbfNet, weights: np.ndarray):
        self.doses = tuple(doses)
        self.net = net
        self.weights = np.asarray(weights, dtype=np.float64)

    @property
    def n_actions(self) -> int:
        return len(self.doses)

    def q_matrix(self, x: np.ndarray) -> np.ndarray:
        return self.net.features_matrix(x) @ self.weights.T

    def evaluate_pairs(self, x: np.ndarray, a_idx: np.ndarray) -> np.ndarray:
        q = self.q_matrix(x)
        return q[np.arange(q.shape[0]), np.asarray(a_idx, dtype=np.int64)]

    def evaluate(self, s: StateVec, a: int) -> float:
        return float(self.q_matrix(s.as_array().reshape(1, -1))[0, a])

    def greedy(self, x: np.ndarray) -> np.ndarray:
        """Greedy action indices; ties resolve to the lowest dose."""
        return self.q_matrix(x).argmax(axis=1)


def ql_train(data: TransitionDataset, config: QlConfig = QlConfig()):
    """Single sweep over the dataset; returns (RbfPolicy, convergence curve).

    Normalization bounds come from the states seen in the data; an empty
    dataset yields all-zero weights over default bounds, whose greedy policy
    falls back to the lowest dose everywhere.
    """
    n_actions = len(data.actions)
    if len(data) == 0:
        net = RbfNet.grid(np.zeros(6), np.ones(6), config.points_per_dim,
                          config.sigma)
        return RbfPolicy(data.actions.doses, net,
                         np.zeros((n_actions, net.n_features))), []

    x, a_idx, r, x_next, terminal = data.to_arrays()
    lo = np.minimum(x.min(axis=0), x_next.min(axis=0))
    hi = np.maximum(x.max(axis=0), x_next.max(axis=0))
    net = RbfNet.grid(lo, hi, config.points_per_dim, config.sigma)
    weights = np.zeros((n_actions, net.n_features))

    m = x.shape[0]
    probe_n = min(config.probe_size, m)
    probe_phi = net.features_matrix(x[:probe_n])
    probe_a = a_idx[:probe_n]

    def probe_values():
        q = probe_phi @ weights.T
        return q[np.arange(probe_n), probe_a]

    prev = probe_values()
    curve = []
    for i in range(m):
        phi_s = net.features_matrix(x[i:i + 1])[0]
        phi_n = net.features_matrix(x_next[i:i + 1])[0]
        _td_update(weights, phi_s, phi_n, int(a_idx[i]), float(r[i]),
                   bool(terminal[i]), config.alpha, config.gamma)
        if (i + 1) % config.probe_interval == 0 or i == m - 1:
            cur = probe_values()
            curve.append(float(np.mean((cur - prev) ** 2)))
            prev = cur
    return RbfPolicy(data.actions.doses, net, weights), curve
