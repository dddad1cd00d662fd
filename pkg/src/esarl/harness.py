"""Experiment harness: cohorts in, trained policies and metrics out.

The pipeline stages mirror the command line interface: generate and group a
cohort, collect randomized-treatment experience, train the learners, then
evaluate every policy on a fresh cohort. Evaluation is paired: all policies
take over the same patients after an identical randomized warm-up, and the
warm-up months are excluded from the metrics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import cohort as cohort_mod
from . import fqi as fqi_mod
from . import qlearning as ql_mod
from .cohort import ClusterModel
from .config import ConfigError, ExperimentConfig
from .mdp import TransitionDataset, build_states, episodes_to_transitions, reward
from .protocol import protocol_init, protocol_step
from .simcore import CohortSim, ModelConstants

TRACE_HEADER = ["patient_id", "month", "hb", "dose", "policy"]
CONVERGENCE_HEADER = ["iteration", "distance"]


@dataclass
class CohortBundle:
    train: list
    eval: list
    cluster: ClusterModel
    train_groups: np.ndarray
    eval_groups: np.ndarray


def build_cohorts(cfg: ExperimentConfig) -> CohortBundle:
    """Seed population, interpolated training and evaluation cohorts, groups.

    The evaluation cohort consists entirely of fresh interpolated patients;
    it shares only the seed population with the training cohort.
    """
    rng = np.random.default_rng(cfg.seed_cohort)
    spec = cfg.cohort_spec()
    base = cohort_mod.sample_seed_population(spec, cfg.base_patients, rng)
    train = cohort_mod.augment_by_interpolation(base, cfg.n_train_patients,
                                                k=cfg.interp_neighbors, rng=rng)
    eval_pats = cohort_mod.augment_by_interpolation(
        base, len(base) + cfg.n_eval_patients, k=cfg.interp_neighbors,
        rng=rng)[len(base):]
    q = cfg.q_clusters if cfg.q_clusters == "auto" else int(cfg.q_clusters)
    cluster = cohort_mod.cluster_cohort(train, q=q, rng=rng,
                                        q_range=cfg.q_range(),
                                        restarts=cfg.kmeans_restarts)
    return CohortBundle(train=train, eval=eval_pats, cluster=cluster,
                        train_groups=cluster.assign(train),
                        eval_groups=cluster.assign(eval_pats))


def _model_constants(cfg: ExperimentConfig) -> ModelConstants:
    return ModelConstants(n_substeps=cfg.substeps)


def generate_experience(cfg: ExperimentConfig, patients,
                        groups: np.ndarray) -> TransitionDataset:
    """Simulate the training cohort under uniformly random monthly doses."""
    actions = cfg.action_set()
    doses_arr = np.array(actions.doses)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed_treatment).spawn(2)[0])
    n = len(patients)
    dose_idx = rng.integers(0, len(actions), size=(n, cfg.train_months))
    dose_matrix = doses_arr[dose_idx]
    sim = CohortSim(patients, consts=_model_constants(cfg))
    hb = sim.run_months(dose_matrix)

    traces = []
    for i in range(n):
        states = build_states(hb[i], dose_matrix[i], int(groups[i]))
        doses_taken = dose_matrix[i, 1:]
        rewards = [reward(hb[i, k], hb[i, k + 1]) for k in range(cfg.train_months - 1)]
        traces.append((states, doses_taken, rewards))
    meta = {"seed_cohort": cfg.seed_cohort, "seed_treatment": cfg.seed_treatment,
            "n_patients": n, "train_months": cfg.train_months}
    return episodes_to_transitions(traces, actions, hb_max=cfg.hb_filter,
                                   metadata=meta)


def train_fqi(cfg: ExperimentConfig, data: TransitionDataset):
    return fqi_mod.fqi_train(data, cfg.fqi_config())


def train_ql(cfg: ExperimentConfig, data: TransitionDataset):
    return ql_mod.ql_train(data, cfg.ql_config())


class GreedyAdapter:
    """Monthly dosing driven by a greedy state-action value model."""

    def __init__(self, model, groups: np.ndarray):
        self.model = model
        self.doses_arr = np.array(model.doses)
        self.groups = np.asarray(groups, dtype=np.float64)

    def reset(self, entry_doses, hb_prev):
        pass

    def decide(self, hb, d_hb, da0, da1, da2) -> np.ndarray:
        x = np.column_stack([hb, d_hb, da0, da1, da2, self.groups])
        return self.doses_arr[self.model.greedy(x)]


class ProtocolAdapter:
    """Monthly dosing driven by per-patient titration state machines.

    Entering evaluation, each machine starts from the dose the patient was
    actually on (the last warm-up dose); a zero warm-up dose falls back to
    the label's initial dose so the multiplicative rules have a footing.
    """

    def __init__(self, init_dose: float = 0.45):
        self.init_dose = init_dose
        self.states = None

    def reset(self, entry_doses, hb_prev):
        self.states = [
            protocol_init(d if d > 0 else self.init_dose, hb_prev=h)
            for d, h in zip(entry_doses, hb_prev)]

    def decide(self, hb, d_hb, da0, da1, da2) -> np.ndarray:
        out = np.empty(len(self.states))
        for i in range(len(self.states)):
            self.states[i], out[i] = protocol_step(self.states[i], float(hb[i]))
        return out


@dataclass
class EvalResult:
    policy: str
    warm_hb: np.ndarray
    warm_doses: np.ndarray
    hb: np.ndarray
    doses: np.ndarray


def evaluate_policies(cfg: ExperimentConfig, patients,
                      adapters: dict) -> dict:
    """Shared random warm-up, then one branch per policy adapter."""
    actions = cfg.action_set()
    doses_arr = np.array(actions.doses)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed_treatment).spawn(2)[1])
    n = len(patients)
    warm_idx = rng.integers(0, len(actions), size=(n, cfg.warmup_months))
    warm_doses = doses_arr[warm_idx]
    warm_sim = CohortSim(patients, consts=_model_constants(cfg))
    warm_hb = warm_sim.run_months(warm_doses)

    def hist_col(mat, back, fill=0.0):
        if mat.shape[1] >= back:
            return mat[:, -back].copy()
        return np.full(n, fill)

    results = {}
    for name, adapter in adapters.items():
        sim = warm_sim.clone()
        hb_now = warm_hb[:, -1].copy()
        hb_prev = hist_col(warm_hb, 2, fill=np.nan)
        d0 = hist_col(warm_doses, 1)
        d1 = hist_col(warm_doses, 2)
        d2 = hist_col(warm_doses, 3)
        adapter.reset(d0, hb_prev)
        hb_mat = np.empty((n, cfg.eval_months))
        dose_mat = np.empty((n, cfg.eval_months))
        for m in range(cfg.eval_months):
            d_hb = np.where(np.isnan(hb_prev), 0.0, hb_now - hb_prev)
            month_doses = adapter.decide(hb_now, d_hb, d0, d1, d2)
            hb_next = sim.run_month(month_doses)
            hb_mat[:, m] = hb_next
            dose_mat[:, m] = month_doses
            hb_prev, hb_now = hb_now, hb_next
            d2, d1, d0 = d1, d0, month_doses
        results[name] = EvalResult(policy=name, warm_hb=warm_hb,
                                   warm_doses=warm_doses, hb=hb_mat,
                                   doses=dose_mat)
    return results


@dataclass
class MetricsReport:
    """Summary of one policy's scored evaluation months."""

    n_patients: int
    n_months: int
    n_observations: int
    in_range_fraction: float
    fraction_hb_lt_10: float
    fraction_hb_10_11: float
    fraction_hb_11_12: float
    fraction_hb_12_13: float
    fraction_hb_gt_13: float
    mean_dose: float
    dose_sd: float
    abrupt_change_fraction: float
    per_month_hb_mean: list
    per_month_hb_sd: list
    per_patient_in_range: list

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compute_metrics(hb: np.ndarray, doses: np.ndarray) -> MetricsReport:
    """Aggregate a (patients, months) block of scored observations."""
    hb = np.asarray(hb, dtype=np.float64)
    doses = np.asarray(doses, dtype=np.float64)
    if hb.ndim != 2 or hb.shape != doses.shape:
        raise ValueError("need matching (patients, months) matrices")
    n, m = hb.shape
    flat = hb.ravel()
    in_range = (flat >= 11.0) & (flat <= 12.0)
    diffs = np.abs(np.diff(hb, axis=1))
    abrupt = float((diffs >= 2.0).mean()) if m > 1 else 0.0
    per_patient = ((hb >= 11.0) & (hb <= 12.0)).mean(axis=1)
    return MetricsReport(
        n_patients=n,
        n_months=m,
        n_observations=n * m,
        in_range_fraction=float(in_range.mean()),
        fraction_hb_lt_10=float((flat < 10.0).mean()),
        fraction_hb_10_11=float(((flat >= 10.0) & (flat < 11.0)).mean()),
        fraction_hb_11_12=float(in_range.mean()),
        fraction_hb_12_13=float(((flat > 12.0) & (flat <= 13.0)).mean()),
        fraction_hb_gt_13=float((flat > 13.0).mean()),
        mean_dose=float(doses.mean()),
        dose_sd=float(doses.std(ddof=1)) if doses.size > 1 else 0.0,
        abrupt_change_fraction=abrupt,
        per_month_hb_mean=[float(v) for v in hb.mean(axis=0)],
        per_month_hb_sd=[float(v) for v in (hb.std(axis=0, ddof=1) if n > 1
                                            else np.zeros(m))],
        per_patient_in_range=[float(v) for v in per_patient],
    )


def write_traces_csv(path, results: dict) -> None:
    """All policies' monthly traces; warm-up months come first per patient."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for name in results:
            res = results[name]
            n, warm = res.warm_hb.shape
            for i in range(n):
                for m in range(warm):
                    w.writerow([i, m, repr(float(res.warm_hb[i, m])),
                                repr(float(res.warm_doses[i, m])), name])
                for m in range(res.hb.shape[1]):
                    w.writerow([i, warm + m, repr(float(res.hb[i, m])),
                                repr(float(res.doses[i, m])), name])


def read_traces_csv(path) -> dict:
    """Traces back as {policy: {"hb": (n, months), "dose": (n, months)}}."""
    rows = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != TRACE_HEADER:
            raise ValueError("unrecognized trace file header")
        for pid, month, hb, dose, policy in rd:
            rows.setdefault(policy, {}).setdefault(int(pid), {})[int(month)] = (
                float(hb), float(dose))
    out = {}
    for policy, patients in rows.items():
        n = len(patients)
        months = len(patients[0])
        hb = np.empty((n, months))
        dose = np.empty((n, months))
        for i in range(n):
            for m in range(months):
                hb[i, m], dose[i, m] = patients[i][m]
        out[policy] = {"hb": hb, "dose": dose}
    return out


def write_convergence_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONVERGENCE_HEADER)
        for i, d in enumerate(curve, start=1):
            w.writerow([i, repr(float(d))])


def write_metrics_json(path, metrics: dict) -> None:
    payload = {name: report.to_dict() for name, report in metrics.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def check_cluster_compatible(policy_cluster: ClusterModel | None,
                             cluster: ClusterModel) -> None:
    if policy_cluster is None:
        return
    if not policy_cluster.same_grouping(cluster):
        raise ConfigError("policy was trained against a different cohort grouping")


def write_report_files(out_dir, scored_hb: dict, warmup_months: int) -> None:
    """Distribution summaries for plotting, from scored {policy: (n, months)}
    hemoglobin blocks: pooled quantiles and per-month mean/SD."""
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    with open(f"{out_dir}/report_quantiles.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "q05", "q25", "q50", "q75", "q95"])
        for name, hb in scored_hb.items():
            vals = np.quantile(hb.ravel(), qs)
            w.writerow([name] + [repr(float(v)) for v in vals])
    with open(f"{out_dir}/report_monthly.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "month", "hb_mean", "hb_sd"])
        for name, hb in scored_hb.items():
            mean = hb.mean(axis=0)
            sd = hb.std(axis=0, ddof=1) if hb.shape[0] > 1 else np.zeros_like(mean)
            for m in range(hb.shape[1]):
                w.writerow([name, warmup_months + m, repr(float(mean[m])),
                            repr(float(sd[m]))])
