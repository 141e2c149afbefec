import numpy as np
import pytest

from divdrop.clustering import (
    ClusteringConfig,
    assign_pseudo_labels,
    dbscan,
    dump_assignments,
    pairwise_distances,
    united_feature,
)
from divdrop.datagen import DomainGenConfig, generate_domain
from divdrop.encoder import encode, init_model
from divdrop.errors import ConfigurationError, EmptyClusteringError
from reference import dbscan_reference, partition_signature


def labels_array(pseudo, n):
    out = np.full(n, -1, dtype=int)
    for i, c in pseudo.assignments.items():
        out[i] = c
    return out


# ---------------------------------------------------------- plumbing

def test_united_feature_layout():
    m = init_model([5, 12, 6], 4, seed=3)
    x = np.random.default_rng(0).standard_normal((7, 5))
    united = united_feature(m, x)
    assert united.shape == (7, 12)
    h1, _ = encode(m.mean_f1, x)
    h2, _ = encode(m.mean_f2, x)
    assert np.array_equal(united[:, :6], h1)
    assert np.array_equal(united[:, 6:], h2)
    assert np.allclose(np.linalg.norm(united, axis=1), np.sqrt(2.0), atol=1e-9)


def test_pairwise_single_point():
    d = pairwise_distances(np.array([[1.0, 2.0]]))
    assert d.shape == (1, 1) and d[0, 0] == 0.0


def test_pairwise_analytic():
    d = pairwise_distances(np.array([[0.0, 0.0], [3.0, 4.0]]))
    assert d[0, 1] == pytest.approx(5.0, abs=1e-12)


def test_pairwise_symmetric_zero_diag(rng):
    x = rng.standard_normal((40, 7))
    d = pairwise_distances(x)
    assert np.array_equal(d, d.T)  # exactly, by construction
    assert np.all(np.diag(d) == 0.0)
    assert np.all(d >= 0.0)


# ------------------------------------------------------------- dbscan

def two_blobs(rng, n_per=5, gap=100.0):
    a = rng.standard_normal((n_per, 2)) * 0.05
    b = rng.standard_normal((n_per, 2)) * 0.05 + gap
    return np.vstack([a, b])


def test_two_tight_groups(rng):
    pts = two_blobs(rng)
    d = pairwise_distances(pts)
    result = dbscan(d, ClusteringConfig(eps=0.5, min_pts=3))
    assert result.num_clusters == 2
    assert result.outliers == set()
    ref_labels, ref_k = dbscan_reference(d, 0.5, 3)
    assert ref_k == 2
    assert partition_signature(labels_array(result, 10)) == partition_signature(ref_labels)


def test_all_isolated_points_are_outliers():
    pts = np.arange(6, dtype=float).reshape(-1, 1) * 10.0
    d = pairwise_distances(pts)
    result = dbscan(d, ClusteringConfig(eps=1.0, min_pts=2))
    assert result.num_clusters == 0
    assert result.outliers == set(range(6))


def test_min_pts_one_makes_every_point_core():
    pts = np.arange(4, dtype=float).reshape(-1, 1) * 10.0
    d = pairwise_distances(pts)
    result = dbscan(d, ClusteringConfig(eps=1.0, min_pts=1))
    assert result.num_clusters == 4
    assert result.outliers == set()


def test_cluster_ids_ordered_by_first_core_index(rng):
    pts = two_blobs(rng)
    d = pairwise_distances(pts)
    result = dbscan(d, ClusteringConfig(eps=0.5, min_pts=3))
    # lowest-index member of cluster 0 must precede lowest of cluster 1
    firsts = {}
    for i, c in sorted(result.assignments.items()):
        firsts.setdefault(c, i)
    assert list(firsts.keys()) == sorted(firsts.keys())
    assert firsts[0] < firsts[1]


def test_matches_reference_on_random_instances():
    # module-level check on 100 seeds; the acceptance suite runs 200
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        n = int(rng.integers(5, 50))
        pts = rng.uniform(0, 1, size=(n, 2))
        d = pairwise_distances(pts)
        eps = float(rng.uniform(0.05, 0.4))
        min_pts = int(rng.integers(2, 6))
        result = dbscan(d, ClusteringConfig(eps=eps, min_pts=min_pts))
        ref_labels, ref_k = dbscan_reference(d, eps, min_pts)
        assert result.num_clusters == ref_k, f"seed {seed}"
        assert partition_signature(labels_array(result, n)) == partition_signature(ref_labels), f"seed {seed}"


def test_partition_invariants(rng):
    pts = rng.uniform(0, 1, size=(30, 2))
    d = pairwise_distances(pts)
    result = dbscan(d, ClusteringConfig(eps=0.15, min_pts=3))
    assigned = set(result.assignments)
    assert assigned | result.outliers == set(range(30))
    assert assigned & result.outliers == set()
    if result.num_clusters:
        ids = sorted(set(result.assignments.values()))
        assert ids == list(range(result.num_clusters))  # no gaps


def test_order_independence_up_to_renaming(rng):
    pts = rng.uniform(0, 1, size=(35, 2))
    d = pairwise_distances(pts)
    cfg = ClusteringConfig(eps=0.18, min_pts=3)
    base = dbscan(d, cfg)
    perm = rng.permutation(35)
    d_perm = d[np.ix_(perm, perm)]
    permuted = dbscan(d_perm, cfg)
    # map permuted indices back and compare partitions
    back = np.full(35, -1, dtype=int)
    for i, c in permuted.assignments.items():
        back[perm[i]] = c
    assert partition_signature(labels_array(base, 35)) == partition_signature(back)


def test_dbscan_validates_config():
    d = pairwise_distances(np.zeros((3, 2)))
    with pytest.raises(ConfigurationError):
        dbscan(d, ClusteringConfig(eps=0.0, min_pts=2))
    with pytest.raises(ConfigurationError):
        dbscan(d, ClusteringConfig(eps=0.5, min_pts=0))


# ------------------------------------------------- assign_pseudo_labels

def one_identity_dataset():
    # nonzero separation keeps the lone center off the origin, where
    # feature normalization would scatter directions
    cfg = DomainGenConfig(num_identities=1, samples_per_identity=12, dim=5,
                          intra_class_spread=0.01, inter_class_separation=2.0, seed=4)
    return generate_domain(cfg, "target")


def test_single_dense_cluster():
    ds = one_identity_dataset()
    model = init_model([5, 12, 6], 3, seed=1)
    pseudo = assign_pseudo_labels(model, ds, ClusteringConfig(eps=0.6, min_pts=4))
    assert pseudo.num_clusters == 1
    assert set(pseudo.assignments) == set(ds.ids.tolist())
    assert pseudo.outliers == set()


def test_centroids_are_renormalized_half_means():
    ds = one_identity_dataset()
    model = init_model([5, 12, 6], 3, seed=1)
    pseudo = assign_pseudo_labels(model, ds, ClusteringConfig(eps=0.6, min_pts=4))
    feats = united_feature(model, ds.inputs)
    half = feats.shape[1] // 2
    m1 = feats[:, :half].mean(axis=0)
    m1 /= np.linalg.norm(m1)
    m2 = feats[:, half:].mean(axis=0)
    m2 /= np.linalg.norm(m2)
    c1, c2 = pseudo.centroids_per_branch
    assert np.allclose(c1[0], m1, atol=1e-12)
    assert np.allclose(c2[0], m2, atol=1e-12)
    assert np.linalg.norm(c1[0]) == pytest.approx(1.0, abs=1e-12)


def test_zero_spread_recovers_true_partition():
    cfg = DomainGenConfig(num_identities=6, samples_per_identity=8, dim=6,
                          intra_class_spread=0.0, inter_class_separation=8.0, seed=2)
    ds = generate_domain(cfg, "target")
    model = init_model([6, 16, 8], 3, seed=5)
    pseudo = assign_pseudo_labels(model, ds, ClusteringConfig(eps=0.05, min_pts=4))
    assert pseudo.outliers == set()
    # pseudo labels must be a relabeling of true labels
    mapping = {}
    truth = ds.labels_by_id()
    for sid, cid in pseudo.assignments.items():
        mapping.setdefault(cid, set()).add(truth[sid])
    assert pseudo.num_clusters == 6
    assert all(len(v) == 1 for v in mapping.values())


def test_eps_retry_then_error():
    # two points far apart: min_pts=2 can never make a core point
    from divdrop.datagen import LabeledDataset, Sample

    samples = [Sample(0, np.array([0.0, 0.0]), 0, "target"),
               Sample(1, np.array([50.0, 50.0]), 0, "target")]
    ds = LabeledDataset(samples, 1, 2)
    model = init_model([2, 6, 4], 2, seed=0)
    with pytest.raises(EmptyClusteringError):
        assign_pseudo_labels(model, ds, ClusteringConfig(eps=1e-6, min_pts=2))


def test_dump_assignments_format():
    ds = one_identity_dataset()
    model = init_model([5, 12, 6], 3, seed=1)
    pseudo = assign_pseudo_labels(model, ds, ClusteringConfig(eps=0.6, min_pts=4))
    lines = dump_assignments(pseudo, epoch=3)
    assert lines[0] == "3,0,0"
    assert len(lines) == len(ds)
