"""United-feature extraction, DBSCAN, and pseudo-label assignment.

The clustering view of a sample is the concatenation of both mean
encoders' outputs. DBSCAN runs on the Euclidean distance matrix of those
united features; border points are attached to the cluster of their
nearest core point, which makes the partition independent of input order.
"""

from dataclasses import dataclass, replace

import numpy as np

from .datagen import LabeledDataset
from .encoder import DualBranchModel, encode
from .errors import ConfigurationError, EmptyClusteringError, ShapeError


@dataclass
class ClusteringConfig:
    eps: float = 0.6
    min_pts: int = 4
    metric: str = "euclidean"

    def validate(self) -> None:
        if self.eps <= 0:
            raise ConfigurationError("eps must be > 0")
        if self.min_pts < 1:
            raise ConfigurationError("min_pts must be >= 1")
        if self.metric != "euclidean":
            raise ConfigurationError(f"unsupported metric {self.metric!r}")


@dataclass
class PseudoLabeling:
    assignments: dict          # sample_id -> cluster id, 0..num_clusters-1
    outliers: set              # sample_ids with no cluster
    num_clusters: int
    centroids_per_branch: tuple | None = None  # (branch-1 matrix, branch-2 matrix)


def united_feature(model: DualBranchModel, batch: np.ndarray) -> np.ndarray:
    """Rows [mean_f1(x); mean_f2(x)]; each half is unit-norm, so rows have
    norm sqrt(2)."""
    half1, _ = encode(model.mean_f1, batch)
    half2, _ = encode(model.mean_f2, batch)
    return np.hstack([half1, half2])


def pairwise_distances(features: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix: exactly symmetric, zero diagonal."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[0] < 1:
        raise ShapeError("pairwise_distances needs at least one row")
    sq = np.sum(features * features, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (features @ features.T)
    np.clip(d2, 0.0, None, out=d2)
    d = np.sqrt(d2)
    # mirror the strict upper triangle so d[i,j] == d[j,i] bitwise
    upper = np.triu(d, 1)
    return upper + upper.T


def dbscan(distances: np.ndarray, config: ClusteringConfig) -> PseudoLabeling:
    """Density clustering on a precomputed distance matrix.

    Core point: >= min_pts neighbors within eps, itself included. Clusters
    are the connected components of core points under the eps relation,
    numbered by their lowest core index. Non-core points join the cluster
    of their nearest core within eps (ties: lowest core index) or become
    outliers. Keys of the result are row indices of `distances`.
    """
    config.validate()
    distances = np.asarray(distances, dtype=float)
    n = distances.shape[0]
    if distances.shape != (n, n):
        raise ShapeError("distances must be square")
    within = distances <= config.eps
    core = within.sum(axis=1) >= config.min_pts
    labels = np.full(n, -1, dtype=int)
    cid = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cid
        stack = [i]
        while stack:
            j = stack.pop()
            for k in np.flatnonzero(within[j] & core):
                if labels[k] == -1:
                    labels[k] = cid
                    stack.append(int(k))
        cid += 1
    for i in range(n):
        if core[i] or not (within[i] & core).any():
            continue
        cand = np.flatnonzero(within[i] & core)
        labels[i] = labels[cand[np.argmin(distances[i, cand])]]
    assignments = {int(i): int(labels[i]) for i in range(n) if labels[i] != -1}
    outliers = {int(i) for i in range(n) if labels[i] == -1}
    return PseudoLabeling(assignments, outliers, cid)


def assign_pseudo_labels(
    model: DualBranchModel, subset: LabeledDataset, config: ClusteringConfig
) -> PseudoLabeling:
    """United features -> DBSCAN -> per-branch centroids for the rebuild.

    If no cluster forms, retries once with eps * 1.5; a second failure
    raises EmptyClusteringError for the caller to skip the epoch.
    """
    if len(subset) == 0:
        raise ConfigurationError("assign_pseudo_labels: empty subset")
    feats = united_feature(model, subset.inputs)
    dists = pairwise_distances(feats)
    result = dbscan(dists, config)
    if result.num_clusters == 0:
        result = dbscan(dists, replace(config, eps=config.eps * 1.5))
        if result.num_clusters == 0:
            raise EmptyClusteringError(
                f"no clusters at eps={config.eps} nor at eps={config.eps * 1.5}"
            )

    half = feats.shape[1] // 2
    cents1, cents2 = [], []
    for c in range(result.num_clusters):
        rows = np.array(sorted(i for i, lab in result.assignments.items() if lab == c))
        for cents, block in ((cents1, feats[rows, :half]), (cents2, feats[rows, half:])):
            m = block.mean(axis=0)
            m = m / max(np.linalg.norm(m), 1e-12)
            cents.append(m)

    ids = subset.ids
    return PseudoLabeling(
        assignments={int(ids[i]): c for i, c in result.assignments.items()},
        outliers={int(ids[i]) for i in result.outliers},
        num_clusters=result.num_clusters,
        centroids_per_branch=(np.stack(cents1), np.stack(cents2)),
    )


def dump_assignments(pseudo: PseudoLabeling, epoch: int) -> list[str]:
    """CSV lines `epoch,sample_id,cluster_id|OUTLIER`, ids ascending."""
    lines = []
    for sid in sorted(set(pseudo.assignments) | pseudo.outliers):
        tag = "OUTLIER" if sid in pseudo.outliers else str(pseudo.assignments[sid])
        lines.append(f"{epoch},{sid},{tag}")
    return lines
