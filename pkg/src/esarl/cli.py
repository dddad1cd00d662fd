"""Command line interface.

The subcommands chain through files in the output directory:

    esarl cohort     -> cohort_train.csv, cohort_eval.csv, cluster.npz
    esarl simulate   -> transitions.csv, transitions_meta.json
    esarl train-fqi  -> fqi_policy.npz, fqi_convergence.csv
    esarl train-ql   -> ql_policy.npz, ql_convergence.csv
    esarl evaluate   -> traces.csv, metrics.json
    esarl report     -> report_quantiles.csv, report_monthly.csv (and a summary)

Every subcommand accepts --config (key=value file), --seed (master seed that
derives the three stream seeds), --out and --threads. Exit status is 0 on
success and 2 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, policy
from .cohort import load_cluster_model, read_cohort_csv, save_cluster_model, write_cohort_csv
from .config import ConfigError, ExperimentConfig, derive_seeds, load_config
from .mdp import TransitionDataset

COHORT_TRAIN = "cohort_train.csv"
COHORT_EVAL = "cohort_eval.csv"
CLUSTER_FILE = "cluster.npz"
TRANSITIONS = "transitions.csv"
TRANSITIONS_META = "transitions_meta.json"
FQI_POLICY = "fqi_policy.npz"
FQI_CONVERGENCE = "fqi_convergence.csv"
QL_POLICY = "ql_policy.npz"
QL_CONVERGENCE = "ql_convergence.csv"
TRACES = "traces.csv"
METRICS = "metrics.json"


def _path(cfg: ExperimentConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


def _need(cfg: ExperimentConfig, name: str) -> str:
    p = _path(cfg, name)
    if not os.path.exists(p):
        raise ConfigError(f"missing {p}; run the earlier pipeline stages first")
    return p


def cmd_cohort(cfg: ExperimentConfig) -> int:
    bundle = harness.build_cohorts(cfg)
    write_cohort_csv(_path(cfg, COHORT_TRAIN), bundle.train, bundle.train_groups)
    write_cohort_csv(_path(cfg, COHORT_EVAL), bundle.eval, bundle.eval_groups)
    save_cluster_model(_path(cfg, CLUSTER_FILE), bundle.cluster)
    print(f"cohort: {len(bundle.train)} training and {len(bundle.eval)} "
          f"evaluation patients in {bundle.cluster.q} groups")
    return 0


def cmd_simulate(cfg: ExperimentConfig) -> int:
    patients, groups = read_cohort_csv(_need(cfg, COHORT_TRAIN))
    data = harness.generate_experience(cfg, patients, groups)
    data.to_csv(_path(cfg, TRANSITIONS))
    with open(_path(cfg, TRANSITIONS_META), "w") as fh:
        json.dump(data.metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"simulate: {len(data)} transitions "
          f"({data.metadata['n_dropped_hb_filter']} dropped by the Hb filter)")
    return 0


def _load_transitions(cfg: ExperimentConfig) -> TransitionDataset:
    return TransitionDataset.from_csv(_need(cfg, TRANSITIONS), cfg.action_set())


def _maybe_cluster(cfg: ExperimentConfig):
    p = _path(cfg, CLUSTER_FILE)
    return load_cluster_model(p) if os.path.exists(p) else None


def cmd_train_fqi(cfg: ExperimentConfig) -> int:
    data = _load_transitions(cfg)
    model, curve = harness.train_fqi(cfg, data)
    policy.save_fqi_policy(_path(cfg, FQI_POLICY), model,
                           cluster=_maybe_cluster(cfg),
                           extra_meta={"seed_learning": cfg.seed_learning})
    harness.write_convergence_csv(_path(cfg, FQI_CONVERGENCE), curve)
    print(f"train-fqi: {model.iteration} iterations, "
          f"final distance {curve[-1]:.6g}")
    return 0


def cmd_train_ql(cfg: ExperimentConfig) -> int:
    data = _load_transitions(cfg)
    model, curve = harness.train_ql(cfg, data)
    policy.save_ql_policy(_path(cfg, QL_POLICY), model,
                          cluster=_maybe_cluster(cfg),
                          extra_meta={"seed_learning": cfg.seed_learning})
    harness.write_convergence_csv(_path(cfg, QL_CONVERGENCE), curve)
    final = f"{curve[-1]:.6g}" if curve else "n/a"
    print(f"train-ql: {len(data)} updates, final probe distance {final}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    patients, groups = read_cohort_csv(_need(cfg, COHORT_EVAL))
    cluster = load_cluster_model(_need(cfg, CLUSTER_FILE))
    loaded_fqi = policy.load_policy(_need(cfg, FQI_POLICY))
    loaded_ql = policy.load_policy(_need(cfg, QL_POLICY))
    for lp in (loaded_fqi, loaded_ql):
        harness.check_cluster_compatible(lp.cluster, cluster)
    adapters = {
        "fqi": harness.GreedyAdapter(loaded_fqi.model, groups),
        "ql": harness.GreedyAdapter(loaded_ql.model, groups),
        "protocol": harness.ProtocolAdapter(cfg.protocol_init_dose),
    }
    results = harness.evaluate_policies(cfg, patients, adapters)
    metrics = {name: harness.compute_metrics(res.hb, res.doses)
               for name, res in results.items()}
    harness.write_traces_csv(_path(cfg, TRACES), results)
    harness.write_metrics_json(_path(cfg, METRICS), metrics)
    for name, rep in metrics.items():
        print(f"evaluate: {name:9s} in-range {100 * rep.in_range_fraction:5.1f}%  "
              f"mean dose {rep.mean_dose:.3f} ug/kg/week")
    return 0


def cmd_report(cfg: ExperimentConfig) -> int:
    with open(_need(cfg, METRICS)) as fh:
        metrics = json.load(fh)
    traces = harness.read_traces_csv(_need(cfg, TRACES))
    scored = {name: block["hb"][:, cfg.warmup_months:]
              for name, block in traces.items()}
    harness.write_report_files(cfg.out_dir, scored, cfg.warmup_months)
    cols = ["in_range_fraction", "fraction_hb_lt_10", "fraction_hb_gt_13",
            "mean_dose", "abrupt_change_fraction"]
    print("policy     " + "  ".join(f"{c:>22s}" for c in cols))
    for name, rep in metrics.items():
        print(f"{name:9s}  " + "  ".join(f"{rep[c]:22.4f}" for c in cols))
    return 0


COMMANDS = {
    "cohort": cmd_cohort,
    "simulate": cmd_simulate,
    "train-fqi": cmd_train_fqi,
    "train-ql": cmd_train_ql,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="key=value experiment configuration file")
    common.add_argument("--seed", type=int, metavar="U64",
                        help="master seed; derives the three stream seeds")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N",
                        help="worker threads for tree fitting")
    parser = argparse.ArgumentParser(
        prog="esarl",
        description="Simulated darbepoetin dosing experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "cohort": "generate and group the training and evaluation cohorts",
        "simulate": "collect randomized-treatment transitions",
        "train-fqi": "train the fitted-Q-iteration policy",
        "train-ql": "train the RBF Q-learning baseline",
        "evaluate": "run all policies on the evaluation cohort",
        "report": "summarize metrics and emit plot-ready files",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides.update(derive_seeds(args.seed))
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    try:
        cfg = load_config(args.config, overrides)
        os.makedirs(cfg.out_dir, exist_ok=True)
        return COMMANDS[args.command](cfg)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
