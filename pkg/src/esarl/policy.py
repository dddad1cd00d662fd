"""On-disk container for trained dosing policies.

One ``.npz`` file holds either learner's greedy policy (tagged by kind) plus
the cluster model its group feature refers to, so evaluation can refuse a
policy trained against a different grouping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cohort import ClusterModel
from .extratrees import EnsembleConfig, TreeEnsemble
from .fqi import QModel
from .qlearning import RbfNet, RbfPolicy

FORMAT = "dosing-policy-v1"


@dataclass
class LoadedPolicy:
    kind: str
    model: object  # QModel or RbfPolicy
    cluster: ClusterModel | None
    meta: dict


def _cluster_arrays(cluster: ClusterModel | None) -> dict:
    if cluster is None:
        return {}
    return {"cluster_mean": cluster.feature_mean,
            "cluster_sd": cluster.feature_sd,
            "cluster_centroids": cluster.centroids_std}


def save_fqi_policy(path, model: QModel, cluster: ClusterModel | None = None,
                    extra_meta: dict | None = None) -> None:
    arrays = _cluster_arrays(cluster)
    fitted = []
    for a, ens in enumerate(model.ensembles):
        if ens is None:
            continue
        fitted.append(a)
        for name in ("feat", "thr", "left", "right", "value", "count", "offsets"):
            arrays[f"a{a}_{name}"] = getattr(ens, name)
    first = model.ensembles[fitted[0]] if fitted else None
    meta = {"format": FORMAT, "kind": "fqi", "doses": list(model.doses),
            "iteration": model.iteration,
            "lmin_history": list(model.lmin_history),
            "fitted_actions": fitted,
            "n_features": first.n_features if first else 6,
            "ensemble_config": None if first is None else {
                "m_trees": first.config.m_trees,
                "k_candidates": first.config.k_candidates,
                "l_min": first.config.l_min, "seed": first.config.seed},
            "has_cluster": cluster is not None}
    meta.update(extra_meta or {})
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def save_ql_policy(path, policy: RbfPolicy, cluster: ClusterModel | None = None,
                   extra_meta: dict | None = None) -> None:
    arrays = _cluster_arrays(cluster)
    arrays["weights"] = policy.weights
    arrays["bounds_lo"] = policy.net.lo
    arrays["bounds_hi"] = policy.net.hi
    arrays["centers"] = policy.net.centers
    meta = {"format": FORMAT, "kind": "ql", "doses": list(policy.doses),
            "sigma": policy.net.sigma, "has_cluster": cluster is not None}
    meta.update(extra_meta or {})
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def load_policy(path) -> LoadedPolicy:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != FORMAT:
            raise ValueError("not a dosing policy file")
        cluster = None
        if meta.get("has_cluster"):
            cluster = ClusterModel(feature_mean=z["cluster_mean"],
                                   feature_sd=z["cluster_sd"],
                                   centroids_std=z["cluster_centroids"])
        doses = tuple(meta["doses"])
        if meta["kind"] == "fqi":
            cfg_meta = meta["ensemble_config"]
            ensembles = [None] * len(doses)
            for a in meta["fitted_actions"]:
                cfg = EnsembleConfig(m_trees=cfg_meta["m_trees"],
                                     k_candidates=cfg_meta["k_candidates"],
                                     l_min=cfg_meta["l_min"],
                                     seed=cfg_meta["seed"])
                ensembles[a] = TreeEnsemble(
                    cfg, meta["n_features"], z[f"a{a}_feat"], z[f"a{a}_thr"],
                    z[f"a{a}_left"], z[f"a{a}_right"], z[f"a{a}_value"],
                    z[f"a{a}_count"], z[f"a{a}_offsets"])
            model = QModel(doses, ensembles, iteration=meta["iteration"],
                           lmin_history=tuple(meta["lmin_history"]))
        elif meta["kind"] == "ql":
            net = RbfNet(z["centers"], meta["sigma"], z["bounds_lo"],
                         z["bounds_hi"])
            model = RbfPolicy(doses, net, z["weights"])
        else:
            raise ValueError(f"unknown policy kind {meta['kind']!r}")
        return LoadedPolicy(kind=meta["kind"], model=model, cluster=cluster,
                            meta=meta)
