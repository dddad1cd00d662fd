"""Experiment configuration and its plain key=value file format.

Files hold one ``key = value`` pair per line; blank lines and ``#`` comments
are ignored. Keys match the `ExperimentConfig` field names; list-valued
fields use comma-separated entries. Unknown keys are configuration errors.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .cohort import CohortSpec
from .fqi import FqiConfig
from .mdp import ActionSet
from .qlearning import QlConfig


class ConfigError(Exception):
    """Bad or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    # Seeds: cohort generation, dose randomization, learner internals.
    seed_cohort: int = 101
    seed_treatment: int = 202
    seed_learning: int = 303

    # Cohort generation.
    base_patients: int = 69
    n_train_patients: int = 1000
    n_eval_patients: int = 60
    sex: str = "male"
    ep_mean: float = 0.3588
    ep_sd: float = 0.0753
    cp_mean: float = 0.2014
    cp_sd: float = 0.0640
    cr_mean: float = 0.1372
    cr_sd: float = 0.0520
    weight_mean: float = 67.97
    weight_sd: float = 12.61
    interp_neighbors: int = 10
    q_clusters: str = "auto"  # "auto" or an integer
    q_min: int = 3
    q_max: int = 10
    kmeans_restarts: int = 10

    # Episode layout.
    train_months: int = 30
    eval_months: int = 30
    warmup_months: int = 4
    actions: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    hb_filter: float = 20.0
    substeps: int = 4

    # Learners.
    gamma: float = 0.9
    fqi_iterations: int = 40
    fqi_trees: int = 50
    fqi_lmin: int = 0  # 0 means cross-validate
    fqi_lmin_candidates: tuple = (5, 10, 50, 100)
    fqi_cv_folds: int = 5
    fqi_cv_every: int = 1
    ql_alpha: float = 0.2
    ql_points_per_dim: int = 4
    ql_sigma: float = 1.1
    ql_probe_size: int = 512
    ql_probe_interval: int = 2000

    # Protocol baseline.
    protocol_init_dose: float = 0.45

    # Execution.
    threads: int = 1
    out_dir: str = "runs/exp"

    def validate(self) -> "ExperimentConfig":
        if self.base_patients < 2:
            raise ConfigError("base_patients must be at least 2")
        if self.n_train_patients < self.base_patients:
            raise ConfigError("n_train_patients must not be below base_patients")
        if self.n_eval_patients < 1:
            raise ConfigError("n_eval_patients must be positive")
        if self.train_months < 2 or self.eval_months < 1:
            raise ConfigError("training needs >= 2 months, evaluation >= 1")
        if self.warmup_months < 2:
            raise ConfigError("need at least 2 warm-up months for a trend")
        if self.q_clusters != "auto":
            try:
                q = int(self.q_clusters)
            except ValueError:
                raise ConfigError("q_clusters must be 'auto' or an integer") from None
            if q < 1:
                raise ConfigError("q_clusters must be positive")
        if self.sex not in ("male", "female"):
            raise ConfigError("sex must be 'male' or 'female'")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        try:
            self.action_set()
            self.fqi_config()
            self.ql_config()
            self.cohort_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def action_set(self) -> ActionSet:
        return ActionSet(doses=tuple(self.actions))

    def cohort_spec(self) -> CohortSpec:
        return CohortSpec(ep_mean=self.ep_mean, ep_sd=self.ep_sd,
                          cp_mean=self.cp_mean, cp_sd=self.cp_sd,
                          cr_mean=self.cr_mean, cr_sd=self.cr_sd,
                          weight_mean=self.weight_mean, weight_sd=self.weight_sd,
                          sex=self.sex)

    def fqi_config(self) -> FqiConfig:
        return FqiConfig(gamma=self.gamma, iterations=self.fqi_iterations,
                         trees=self.fqi_trees,
                         l_min=self.fqi_lmin if self.fqi_lmin > 0 else None,
                         lmin_candidates=tuple(self.fqi_lmin_candidates),
                         cv_folds=self.fqi_cv_folds, cv_every=self.fqi_cv_every,
                         seed=self.seed_learning, n_jobs=self.threads)

    def ql_config(self) -> QlConfig:
        return QlConfig(alpha=self.ql_alpha, gamma=self.gamma,
                        points_per_dim=self.ql_points_per_dim,
                        sigma=self.ql_sigma, probe_size=self.ql_probe_size,
                        probe_interval=self.ql_probe_interval)

    def q_range(self) -> range:
        return range(self.q_min, self.q_max + 1)


_INT_TUPLE_FIELDS = {"fqi_lmin_candidates"}
_FLOAT_TUPLE_FIELDS = {"actions"}


def _parse_value(name: str, text: str, py_type):
    text = text.strip()
    if name in _INT_TUPLE_FIELDS:
        return tuple(int(v) for v in text.split(","))
    if name in _FLOAT_TUPLE_FIELDS:
        return tuple(float(v) for v in text.split(","))
    if name == "q_clusters":
        return text
    if py_type is int:
        return int(text)
    if py_type is float:
        return float(text)
    return text


def read_config_file(path) -> dict:
    """Parse a key=value file into raw string values."""
    raw = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    return raw


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a validated config from defaults, an optional file, and overrides."""
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    types = {f.name: type(getattr(ExperimentConfig(), f.name)) for f in fields(ExperimentConfig)}
    values = {}
    raw = read_config_file(path) if path is not None else {}
    for key, text in raw.items():
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            values[key] = _parse_value(key, text, types[key])
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {text!r}") from None
    for key, val in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = val
    return ExperimentConfig(**values).validate()


def derive_seeds(master_seed: int) -> dict:
    """Expand one master seed into the three stream seeds."""
    state = np.random.SeedSequence(int(master_seed)).generate_state(3, np.uint64)
    return {"seed_cohort": int(state[0]), "seed_treatment": int(state[1]),
            "seed_learning": int(state[2])}


def write_config_file(path, cfg: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        for f in fields(ExperimentConfig):
            val = getattr(cfg, f.name)
            if isinstance(val, tuple):
                val = ",".join(repr(v) if isinstance(v, float) else str(v)
                               for v in val)
            fh.write(f"{f.name} = {val}\n")
