"""Fitted Q iteration with per-action tree ensembles.

Starting from Q_0 = 0, each iteration regresses the one-step Bellman targets

    target = r + gamma * max_a' Q_{n-1}(s_next, a')

onto the observed states, one ensemble per action (terminal transitions keep
target = r unless configured to bootstrap). The distance between consecutive
approximations, the mean of (Q_n - Q_{n-1})^2 over the (s, a) pairs present
in the dataset, is recorded every iteration and can stop training early.

The leaf-size floor of the ensembles is reselected by cross-validation on the
current targets: folds are drawn over transitions, per-action ensembles are
refit on the training folds and scored on the pooled held-out pairs, and ties
go to the larger floor. The reselection cadence is configurable because the
targets drift slowly once the backup starts converging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import extratrees
from .extratrees import EnsembleConfig, TreeEnsemble
from .mdp import ActionSet, StateVec, TransitionDataset


@dataclass(frozen=True)
class FqiConfig:
    gamma: float = 0.9
    iterations: int = 40
    stop_eps: float | None = None
    trees: int = 50
    k_candidates: int | None = None
    l_min: int | None = None  # None means cross-validate
    lmin_candidates: tuple = (5, 10, 50, 100)
    cv_folds: int = 5
    cv_every: int = 1
    bootstrap_terminals: bool = False
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.cv_every < 1:
            raise ValueError("cv_every must be at least 1")


def _seed_int(*parts) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts))
               .generate_state(1, np.uint64)[0])


class QModel:
    """State-action value model: one tree ensemble per action (an action
    absent from the training data keeps its initial value of zero)."""

    def __init__(self, doses: tuple, ensembles: list, iteration: int = 0,
                 lmin_history: tuple = ()):
        if len(doses) != len(ensembles):
            raise ValueError("need one ensemble slot per action")
        self.doses = tuple(doses)
        self.ensembles = list(ensembles)
        self.iteration = iteration
        self.lmin_history = tuple(lmin_history)

    @property
    def n_actions(self) -> int:
        return len(self.doses)

    def q_matrix(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros((x.shape[0], self.n_actions))
        for a, ens in enumerate(self.ensembles):
            if ens is not None:
                out[:, a] = ens.predict(x)
        return out

    def evaluate_pairs(self, x: np.ndarray, a_idx: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        a_idx = np.asarray(a_idx, dtype=np.int64)
        out = np.zeros(x.shape[0])
        for a, ens in enumerate(self.ensembles):
            rows = a_idx == a
            if ens is not None and rows.any():
                out[rows] = ens.predict(x[rows])
        return out

    def evaluate(self, s: StateVec, a: int) -> float:
        ens = self.ensembles[a]
        return float(ens.predict(s.as_array())) if ens is not None else 0.0

    def greedy(self, x: np.ndarray) -> np.ndarray:
        """Greedy action indices; ties resolve to the lowest dose."""
        return self.q_matrix(x).argmax(axis=1)


def greedy_action(q: QModel, s: StateVec) -> int:
    return int(q.greedy(s.as_array().reshape(1, -1))[0])


def convergence_distance(q_new, q_old, data) -> float:
    """Mean squared value change over the dataset's (s, a) pairs."""
    if isinstance(data, TransitionDataset):
        x, a_idx, _, _, _ = data.to_arrays()
    else:
        x, a_idx = data
    diff = q_new.evaluate_pairs(x, a_idx) - q_old.evaluate_pairs(x, a_idx)
    return float(np.mean(diff ** 2))


def _fit_per_action(x, a_idx, targets, n_actions, cfg: FqiConfig, l_min: int,
                    seed_parts) -> list:
    ensembles = []
    for a in range(n_actions):
        rows = a_idx == a
        if not rows.any():
            ensembles.append(None)
            continue
        e_cfg = EnsembleConfig(m_trees=cfg.trees, k_candidates=cfg.k_candidates,
                               l_min=l_min, seed=_seed_int(*seed_parts, a))
        ensembles.append(extratrees.fit(x[rows], targets[rows], e_cfg,
                                        n_jobs=cfg.n_jobs))
    return ensembles


def _cv_lmin(x, a_idx, targets, n_actions, cfg: FqiConfig, iteration: int) -> int:
    cands = sorted(set(int(c) for c in cfg.lmin_candidates), reverse=True)
    if len(cands) == 1:
        return cands[0]
    n = x.shape[0]
    folds = max(2, min(cfg.cv_folds, n))
    rng = np.random.default_rng(_seed_int(cfg.seed, iteration, 104729))
    perm = rng.permutation(n)
    splits = np.array_split(perm, folds)
    best_lmin, best_mse = cands[0], np.inf
    for l_min in cands:
        se_sum = 0.0
        for fi, val_idx in enumerate(splits):
            mask = np.ones(n, dtype=bool)
            mask[val_idx] = False
            model = QModel(tuple(range(n_actions)), _fit_per_action(
                x[mask], a_idx[mask], targets[mask], n_actions, cfg, l_min,
                (cfg.seed, iteration, 104729, l_min, fi)))
            err = model.evaluate_pairs(x[val_idx], a_idx[val_idx]) - targets[val_idx]
            se_sum += float(err @ err)
        mse = se_sum / n
        if mse < best_mse:
            best_lmin, best_mse = l_min, mse
    return best_lmin


def fqi_train(data: TransitionDataset, config: FqiConfig = FqiConfig()):
    """Run the iteration; returns (QModel, convergence curve)."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    x, a_idx, r, x_next, terminal = data.to_arrays()
    n_actions = len(data.actions)
    if a_idx.max() >= n_actions:
        raise ValueError("action index outside the action set")

    keep_next = (np.ones_like(r) if config.bootstrap_terminals
                 else (~terminal).astype(np.float64))
    prev_pair_values = np.zeros(r.size)
    max_next = np.zeros(r.size)
    curve = []
    lmin_history = []
    model = None
    l_min = config.l_min
    for n in range(1, config.iterations + 1):
        targets = r + config.gamma * keep_next * max_next
        if config.l_min is None and (n == 1 or (n - 1) % config.cv_every == 0):
            l_min = _cv_lmin(x, a_idx, targets, n_actions, config, n)
        lmin_history.append(l_min)
        ensembles = _fit_per_action(x, a_idx, targets, n_actions, config,
                                    l_min, (config.seed, n))
        model = QModel(data.actions.doses, ensembles, iteration=n,
                       lmin_history=tuple(lmin_history))
        pair_values = model.evaluate_pairs(x, a_idx)
        curve.append(float(np.mean((pair_values - prev_pair_values) ** 2)))
        prev_pair_values = pair_values
        if n < config.iterations:
            max_next = model.q_matrix(x_next).max(axis=1)
        if config.stop_eps is not None and curve[-1] < config.stop_eps:
            break
    return model, curve
