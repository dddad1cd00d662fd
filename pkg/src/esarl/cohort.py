"""Synthetic patient cohorts and their grouping.

A small seed population is drawn from per-parameter normal distributions
(truncated below at 10% of the mean, resampling on violation), then enlarged
by convex interpolation between each drawn patient and one of its nearest
neighbours in (ep, cp, cr) space. Cohorts are grouped by k-means on the
standardized response parameters; the number of groups can be picked by the
mean silhouette coefficient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .simcore import MCH_FEMALE, MCH_MALE, PatientParams


@dataclass(frozen=True)
class CohortSpec:
    """Sampling statistics for the seed population (hemodialysis cohort)."""

    ep_mean: float = 0.3588
    ep_sd: float = 0.0753
    cp_mean: float = 0.2014
    cp_sd: float = 0.0640
    cr_mean: float = 0.1372
    cr_sd: float = 0.0520
    weight_mean: float = 67.97
    weight_sd: float = 12.61
    sex: str = "male"

    def __post_init__(self):
        if self.sex not in ("male", "female"):
            raise ValueError("sex must be 'male' or 'female'")
        for name in ("ep_mean", "cp_mean", "cr_mean", "weight_mean"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("ep_sd", "cp_sd", "cr_sd", "weight_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def mch(self) -> float:
        return MCH_MALE if self.sex == "male" else MCH_FEMALE


def _draw_truncated(rng: np.random.Generator, mean: float, sd: float) -> float:
    floor = 0.1 * mean
    while True:
        v = rng.normal(mean, sd)
        if v >= floor:
            return v


def sample_seed_population(spec: CohortSpec, size: int,
                           rng: np.random.Generator) -> list[PatientParams]:
    """Draw ``size`` independent patients from ``spec``'s distributions."""
    if size < 1:
        raise ValueError("population size must be positive")
    out = []
    for _ in range(size):
        out.append(PatientParams(
            ep=_draw_truncated(rng, spec.ep_mean, spec.ep_sd),
            cp=_draw_truncated(rng, spec.cp_mean, spec.cp_sd),
            cr=_draw_truncated(rng, spec.cr_mean, spec.cr_sd),
            mch=spec.mch,
            weight_kg=_draw_truncated(rng, spec.weight_mean, spec.weight_sd),
        ))
    return out


def response_points(patients) -> np.ndarray:
    """(n, 3) matrix of the clustering features (ep, cp, cr)."""
    if isinstance(patients, np.ndarray):
        return np.asarray(patients, dtype=np.float64)
    return np.array([[p.ep, p.cp, p.cr] for p in patients], dtype=np.float64)


def augment_by_interpolation(base, target_n: int, k: int = 10,
                             rng: np.random.Generator | None = None) -> list[PatientParams]:
    """Grow ``base`` to ``target_n`` patients by convex interpolation.

    Each synthetic patient blends a randomly picked base patient with one of
    its ``k`` nearest neighbours in (ep, cp, cr) space; body weight is blended
    with the same coefficient and mch is copied.
    """
    if target_n < len(base):
        raise ValueError("target size must not shrink the base population")
    if rng is None:
        rng = np.random.default_rng()
    out = list(base)
    if target_n == len(base):
        return out
    pts = response_points(base)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    k_eff = min(k, len(base) - 1)
    if k_eff < 1:
        raise ValueError("need at least two base patients to interpolate")
    neighbours = np.argsort(d2, axis=1)[:, :k_eff]
    while len(out) < target_n:
        i = int(rng.integers(0, len(base)))
        j = int(neighbours[i, rng.integers(0, k_eff)])
        lam = float(rng.uniform(0.0, 1.0))
        a, b = base[i], base[j]
        out.append(PatientParams(
            ep=lam * a.ep + (1.0 - lam) * b.ep,
            cp=lam * a.cp + (1.0 - lam) * b.cp,
            cr=lam * a.cr + (1.0 - lam) * b.cr,
            mch=a.mch,
            weight_kg=lam * a.weight_kg + (1.0 - lam) * b.weight_kg,
        ))
    return out


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    inertia_history: list


def _assign(points: np.ndarray, centroids: np.ndarray):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(points.shape[0]), labels].sum()


def kmeans_fit(points: np.ndarray, q: int, rng: np.random.Generator,
               max_iters: int = 100) -> KMeansResult:
    """Plain Lloyd iteration.

    Initial centroids are ``q`` distinct point values chosen at random (drawn
    from the deduplicated point set, so exact duplicates in the input do not
    change the draw). A cluster that empties is re-seeded at the point
    currently farthest from its own centroid, first empty cluster first.
    """
    points = np.asarray(points, dtype=np.float64)
    uniq = np.unique(points, axis=0)
    if q < 1 or q > uniq.shape[0]:
        raise ValueError("q must be between 1 and the number of distinct points")
    centroids = uniq[rng.choice(uniq.shape[0], size=q, replace=False)].copy()
    labels, inertia = _assign(points, centroids)
    history = [inertia]
    for _ in range(max_iters):
        new_centroids = centroids.copy()
        for c in range(q):
            members = labels == c
            if members.any():
                new_centroids[c] = points[members].mean(axis=0)
            else:
                dist_own = ((points - new_centroids[labels]) ** 2).sum(axis=1)
                far = int(dist_own.argmax())
                new_centroids[c] = points[far]
                labels[far] = c
        new_labels, new_inertia = _assign(points, new_centroids)
        centroids = new_centroids
        converged = np.array_equal(new_labels, labels)
        labels = new_labels
        history.append(new_inertia)
        inertia = new_inertia
        if converged:
            break
    return KMeansResult(centroids=centroids, labels=labels,
                        inertia=float(inertia), inertia_history=history)


def _best_of_restarts(points, q, rng, restarts):
    best = None
    for _ in range(restarts):
        cand = kmeans_fit(points, q, rng)
        if best is None or cand.inertia < best.inertia:
            best = cand
    return best


def silhouette_mean(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient; singleton clusters score 0 by convention."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    n = points.shape[0]
    groups = np.unique(labels)
    if groups.size < 2:
        raise ValueError("silhouette needs at least two clusters")
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    scores = np.zeros(n)
    counts = {g: int((labels == g).sum()) for g in groups}
    for i in range(n):
        g = labels[i]
        if counts[g] == 1:
            continue
        a = dist[i][labels == g].sum() / (counts[g] - 1)
        b = min(dist[i][labels == h].mean() for h in groups if h != g)
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def select_q_by_silhouette(points: np.ndarray, q_range=range(3, 11),
                           rng: np.random.Generator | None = None,
                           restarts: int = 10):
    """Pick the cluster count maximizing the mean silhouette.

    Each candidate q is fit ``restarts`` times keeping the best inertia; ties
    on the silhouette go to the smaller q.
    """
    if rng is None:
        rng = np.random.default_rng()
    best_q, best_score, best_model = None, -np.inf, None
    for q in q_range:
        model = _best_of_restarts(points, q, rng, restarts)
        score = silhouette_mean(points, model.labels)
        if score > best_score:
            best_q, best_score, best_model = q, score, model
    return best_q, best_model, best_score


@dataclass
class ClusterModel:
    """Grouping of a cohort: standardizing scaler plus k-means centroids.

    Clustering runs on z-scored (ep, cp, cr) so no parameter dominates by
    scale; `assign` maps arbitrary patients to their nearest centroid in that
    standardized space.
    """

    feature_mean: np.ndarray
    feature_sd: np.ndarray
    centroids_std: np.ndarray

    @property
    def q(self) -> int:
        return self.centroids_std.shape[0]

    @property
    def centroids(self) -> np.ndarray:
        """Centroids expressed back in raw (ep, cp, cr) units."""
        return self.centroids_std * self.feature_sd + self.feature_mean

    def assign(self, patients) -> np.ndarray:
        pts = response_points(patients)
        z = (pts - self.feature_mean) / self.feature_sd
        labels, _ = _assign(z, self.centroids_std)
        return labels

    def same_grouping(self, other: "ClusterModel") -> bool:
        return (np.array_equal(self.feature_mean, other.feature_mean)
                and np.array_equal(self.feature_sd, other.feature_sd)
                and np.array_equal(self.centroids_std, other.centroids_std))


def cluster_cohort(patients, q: int | str = "auto",
                   rng: np.random.Generator | None = None,
                   q_range=range(3, 11), restarts: int = 10) -> ClusterModel:
    """Standardize the cohort's response parameters and group them by k-means."""
    if rng is None:
        rng = np.random.default_rng()
    pts = response_points(patients)
    mean = pts.mean(axis=0)
    sd = pts.std(axis=0)
    sd[sd == 0] = 1.0
    z = (pts - mean) / sd
    if q == "auto":
        _, model, _ = select_q_by_silhouette(z, q_range=q_range, rng=rng,
                                             restarts=restarts)
    else:
        model = _best_of_restarts(z, int(q), rng, restarts)
    return ClusterModel(feature_mean=mean, feature_sd=sd,
                        centroids_std=model.centroids)


def save_cluster_model(path, model: ClusterModel) -> None:
    np.savez(path, feature_mean=model.feature_mean, feature_sd=model.feature_sd,
             centroids_std=model.centroids_std)


def load_cluster_model(path) -> ClusterModel:
    with np.load(path) as z:
        return ClusterModel(feature_mean=z["feature_mean"],
                            feature_sd=z["feature_sd"],
                            centroids_std=z["centroids_std"])


COHORT_CSV_HEADER = ["patient_id", "ep", "cp", "cr", "mch", "weight_kg", "cluster"]


def write_cohort_csv(path, patients, clusters) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COHORT_CSV_HEADER)
        for i, (p, c) in enumerate(zip(patients, clusters)):
            w.writerow([i, repr(float(p.ep)), repr(float(p.cp)),
                        repr(float(p.cr)), repr(float(p.mch)),
                        repr(float(p.weight_kg)), int(c)])


def read_cohort_csv(path):
    patients, clusters = [], []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != COHORT_CSV_HEADER:
            raise ValueError("unrecognized cohort file header")
        for row in rd:
            patients.append(PatientParams(ep=float(row[1]), cp=float(row[2]),
                                          cr=float(row[3]), mch=float(row[4]),
                                          weight_kg=float(row[5])))
            clusters.append(int(row[6]))
    return patients, np.array(clusters, dtype=np.int64)
