"""Population sampling, interpolation growth, and k-means grouping."""

import numpy as np
import pytest

from esarl.cohort import (
    CohortSpec,
    augment_by_interpolation,
    cluster_cohort,
    kmeans_fit,
    load_cluster_model,
    read_cohort_csv,
    response_points,
    sample_seed_population,
    save_cluster_model,
    select_q_by_silhouette,
    silhouette_mean,
    write_cohort_csv,
)


def blobs(rng, centers, n_per, sd):
    pts = np.concatenate([c + sd * rng.standard_normal((n_per, len(c)))
                          for c in centers])
    labels = np.repeat(np.arange(len(centers)), n_per)
    return pts, labels


def test_sampler_matches_requested_statistics():
    rng = np.random.default_rng(0)
    spec = CohortSpec()
    pats = sample_seed_population(spec, 10000, rng)
    eps = np.array([p.ep for p in pats])
    # Standard-error bound on the sample mean (truncation at 10% of the mean
    # is ~4.6 SD out, so its bias is far below this tolerance).
    assert abs(eps.mean() - spec.ep_mean) < 3.0 * spec.ep_sd / np.sqrt(10000)
    assert abs(eps.std() - spec.ep_sd) < 0.1 * spec.ep_sd
    assert all(p.mch == 2.7 for p in pats[:50])


def test_sampler_truncates_at_ten_percent_of_mean():
    rng = np.random.default_rng(1)
    spec = CohortSpec(ep_mean=0.1, ep_sd=0.5)  # heavy left tail without floor
    pats = sample_seed_population(spec, 2000, rng)
    assert min(p.ep for p in pats) >= 0.01


def test_sampler_degenerate_sd_gives_identical_patients():
    rng = np.random.default_rng(2)
    spec = CohortSpec(ep_sd=0.0, cp_sd=0.0, cr_sd=0.0, weight_sd=0.0)
    pats = sample_seed_population(spec, 5, rng)
    assert all(p == pats[0] for p in pats)
    assert pats[0].ep == spec.ep_mean


def test_sampler_sex_switches_mch():
    rng = np.random.default_rng(3)
    male = sample_seed_population(CohortSpec(sex="male"), 1, rng)[0]
    female = sample_seed_population(CohortSpec(sex="female"), 1, rng)[0]
    assert male.mch == 2.7
    assert female.mch == 2.4
    with pytest.raises(ValueError):
        CohortSpec(sex="child")


def test_augmentation_keeps_base_and_appends():
    rng = np.random.default_rng(4)
    base = sample_seed_population(CohortSpec(), 69, rng)
    grown = augment_by_interpolation(base, 200, k=10, rng=rng)
    assert len(grown) == 200
    assert grown[:69] == base
    assert augment_by_interpolation(base, 69, rng=rng) == base
    with pytest.raises(ValueError):
        augment_by_interpolation(base, 68, rng=rng)


def test_interpolated_patients_stay_in_convex_hull():
    rng = np.random.default_rng(5)
    base = sample_seed_population(CohortSpec(), 30, rng)
    pts = response_points(base)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    grown = augment_by_interpolation(base, 150, k=5, rng=rng)
    new_pts = response_points(grown[30:])
    assert np.all(new_pts >= lo - 1e-12) and np.all(new_pts <= hi + 1e-12)
    weights = [p.weight_kg for p in grown[30:]]
    assert min(weights) >= min(p.weight_kg for p in base) - 1e-12
    assert all(p.mch == 2.7 for p in grown)


def test_kmeans_recovers_separated_blobs():
    rng = np.random.default_rng(6)
    pts, truth = blobs(rng, [(0, 0, 0), (10, 0, 0), (0, 10, 0)], 40, 0.5)
    res = kmeans_fit(pts, 3, rng)
    # Same partition up to label permutation: one cluster per true blob.
    for g in range(3):
        members = res.labels[truth == g]
        assert len(set(members.tolist())) == 1
    assert len(set(res.labels[::40].tolist())) == 3


def test_kmeans_inertia_never_increases():
    rng = np.random.default_rng(7)
    pts = rng.standard_normal((200, 3))
    res = kmeans_fit(pts, 4, rng)
    hist = res.inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_kmeans_ignores_exact_duplicates_in_seeding():
    rng1 = np.random.default_rng(8)
    rng2 = np.random.default_rng(8)
    pts, _ = blobs(np.random.default_rng(9), [(0, 0), (5, 5)], 20, 0.2)
    doubled = np.concatenate([pts, pts])
    a = kmeans_fit(pts, 2, rng1)
    b = kmeans_fit(doubled, 2, rng2)
    np.testing.assert_allclose(np.sort(a.centroids, axis=0),
                               np.sort(b.centroids, axis=0), atol=1e-9)


def test_kmeans_rejects_bad_q():
    rng = np.random.default_rng(10)
    pts = np.zeros((5, 3))
    with pytest.raises(ValueError):
        kmeans_fit(pts, 2, rng)  # only one distinct point


def test_silhouette_approaches_one_for_distant_blobs():
    rng = np.random.default_rng(11)
    pts, labels = blobs(rng, [(0, 0, 0), (50, 0, 0)], 30, 0.3)
    assert silhouette_mean(pts, labels) > 0.95
    with pytest.raises(ValueError):
        silhouette_mean(pts, np.zeros(60, dtype=int))


def test_silhouette_selection_finds_five_blobs():
    centers = [(0, 0, 0), (12, 0, 0), (0, 12, 0), (0, 0, 12), (12, 12, 12)]
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        pts, _ = blobs(rng, centers, 25, 1.0)
        q, _, score = select_q_by_silhouette(pts, q_range=range(3, 11),
                                             rng=rng, restarts=5)
        hits += q == 5
        assert -1.0 <= score <= 1.0
    assert hits >= 9


def test_cluster_cohort_standardizes_and_assigns():
    rng = np.random.default_rng(12)
    base = sample_seed_population(CohortSpec(), 69, rng)
    pats = augment_by_interpolation(base, 300, rng=rng)
    model = cluster_cohort(pats, q=4, rng=rng)
    assert model.q == 4
    labels = model.assign(pats)
    assert labels.shape == (300,)
    assert set(labels.tolist()) <= set(range(4))
    # Raw-unit centroids undo the standardization.
    pts = response_points(pats)
    z = (pts - model.feature_mean) / model.feature_sd
    assert np.allclose(model.centroids,
                       model.centroids_std * model.feature_sd + model.feature_mean)
    assert np.all(model.centroids[:, 0] > 0)
    # Assignment is nearest-centroid in standardized space.
    d2 = ((z[:, None, :] - model.centroids_std[None, :, :]) ** 2).sum(axis=2)
    np.testing.assert_array_equal(labels, d2.argmin(axis=1))


def test_cluster_model_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    pats = sample_seed_population(CohortSpec(), 80, rng)
    model = cluster_cohort(pats, q=3, rng=rng)
    path = tmp_path / "groups.npz"
    save_cluster_model(path, model)
    back = load_cluster_model(path)
    assert back.same_grouping(model)
    np.testing.assert_array_equal(back.assign(pats), model.assign(pats))
    other = cluster_cohort(pats, q=4, rng=rng)
    assert not other.same_grouping(model)


def test_cohort_csv_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    base = sample_seed_population(CohortSpec(), 20, rng)
    pats = augment_by_interpolation(base, 40, k=5, rng=rng)
    clusters = np.arange(40) % 3
    path = tmp_path / "cohort.csv"
    write_cohort_csv(path, pats, clusters)
    back_pats, back_clusters = read_cohort_csv(path)
    np.testing.assert_array_equal(back_clusters, clusters)
    for p_in, p_out in zip(pats, back_pats):
        assert p_out.ep == p_in.ep
        assert p_out.cp == p_in.cp
        assert p_out.cr == p_in.cr
        assert p_out.weight_kg == p_in.weight_kg


def test_cohort_generation_is_deterministic():
    spec = CohortSpec()
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(99)
        base = sample_seed_population(spec, 40, rng)
        pats = augment_by_interpolation(base, 80, rng=rng)
        model = cluster_cohort(pats, q="auto", rng=rng, q_range=range(3, 6),
                               restarts=3)
        runs.append((pats, model))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1].same_grouping(runs[1][1])
