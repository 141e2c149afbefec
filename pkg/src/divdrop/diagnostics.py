"""Measurement apparatus: noisy-label bookkeeping and retrieval metrics.

A pseudo label is "noisy" when the sample's true label differs from the
dominant true label of its cluster. Counting noisy assignments per sample
across epochs yields the hardness record behind the concentration curves;
retrieval quality is scored as mAP and Rank-k over united features.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .clustering import PseudoLabeling, united_feature
from .datagen import LabeledDataset
from .encoder import DualBranchModel, encode
from .errors import DiagnosticsError, EvaluationError


@dataclass
class NoiseHistory:
    """Per-sample counts of clustered epochs and noisy-label epochs."""

    participated: dict = field(default_factory=dict)  # sample_id -> epochs clustered
    noisy: dict = field(default_factory=dict)         # sample_id -> epochs flagged noisy

    @classmethod
    def for_ids(cls, sample_ids) -> "NoiseHistory":
        ids = [int(i) for i in sample_ids]
        return cls({i: 0 for i in ids}, {i: 0 for i in ids})

    def record(self, flags: dict) -> None:
        for sid, noisy in flags.items():
            self.participated[sid] = self.participated.get(sid, 0) + 1
            self.noisy[sid] = self.noisy.get(sid, 0) + int(noisy)

    def total_noisy(self) -> int:
        return sum(self.noisy.values())


@dataclass
class EvalMetrics:
    mAP: float
    rank1: float
    rank5: float
    rank10: float


def noisy_label_flags(pseudo: PseudoLabeling, true_labels: dict) -> dict:
    """sample_id -> True iff its true label differs from its cluster's
    dominant true label (mode; ties broken by the smallest label value).
    Outliers carry no pseudo label and do not appear in the result."""
    members: dict[int, list[int]] = {}
    for sid, cid in pseudo.assignments.items():
        if sid not in true_labels:
            raise DiagnosticsError(f"sample {sid} has no true label")
        members.setdefault(cid, []).append(sid)
    flags: dict[int, bool] = {}
    for cid, sids in members.items():
        counts = Counter(true_labels[s] for s in sids)
        top = max(counts.values())
        dominant = min(lab for lab, c in counts.items() if c == top)
        for s in sids:
            flags[s] = true_labels[s] != dominant
    return flags


def clustering_error_rate(flags: dict) -> float:
    """Fraction of assigned pseudo labels that are noisy."""
    if not flags:
        raise DiagnosticsError("clustering_error_rate: no assigned samples")
    return sum(flags.values()) / len(flags)


def hardest_relative_error(history: NoiseHistory, percent: float) -> float:
    """Share of all noisy assignments that fell on the `percent` hardest
    samples (ranked by noisy count, ties by ascending sample id)."""
    if not (0.0 < percent <= 1.0):
        raise DiagnosticsError("percent must be in (0, 1]")
    total = history.total_noisy()
    if total == 0:
        raise DiagnosticsError("hardest_relative_error undefined: no noisy labels recorded")
    n = len(history.noisy)
    top = math.ceil(percent * n)
    ranked = sorted(history.noisy.items(), key=lambda kv: (-kv[1], kv[0]))
    return sum(c for _, c in ranked[:top]) / total


def ap_from_relevance(relevance: np.ndarray) -> float:
    """Average precision of one ranked relevance list (True = correct),
    i.e. the mean of precision-at-rank over the relevant positions."""
    relevance = np.asarray(relevance, dtype=bool)
    hits = relevance.sum()
    if hits == 0:
        raise EvaluationError("query has no relevant gallery sample")
    ranks = np.arange(1, len(relevance) + 1)
    precision_at_hit = np.cumsum(relevance)[relevance] / ranks[relevance]
    return float(precision_at_hit.sum() / hits)


def evaluate_cmc_map(
    model: DualBranchModel, query: LabeledDataset, gallery: LabeledDataset
) -> EvalMetrics:
    """Rank the gallery per query by Euclidean distance in united-feature
    space; mAP plus Rank-1/5/10 match rates."""
    missing = set(query.labels.tolist()) - set(gallery.labels.tolist())
    if missing:
        raise EvaluationError(f"query identities absent from gallery: {sorted(missing)[:5]}")
    qf = united_feature(model, query.inputs)
    gf = united_feature(model, gallery.inputs)
    aps = []
    first_hit = []
    for i in range(qf.shape[0]):
        diffs = gf - qf[i]
        d = np.sqrt(np.sum(diffs * diffs, axis=1))
        order = np.argsort(d, kind="stable")
        rel = gallery.labels[order] == query.labels[i]
        aps.append(ap_from_relevance(rel))
        first_hit.append(int(np.flatnonzero(rel)[0]) + 1)
    first_hit = np.array(first_hit)
    return EvalMetrics(
        mAP=float(np.mean(aps)),
        rank1=float(np.mean(first_hit <= 1)),
        rank5=float(np.mean(first_hit <= 5)),
        rank10=float(np.mean(first_hit <= 10)),
    )


def split_query_gallery(dataset: LabeledDataset) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic per-identity alternation (by ascending sample id):
    first sample to the gallery, next to the query, and so on. Singleton
    identities land in the gallery only."""
    gallery_ids, query_ids = [], []
    for ident in range(dataset.num_identities):
        ids = sorted(int(i) for i in dataset.ids[dataset.labels == ident])
        for pos, sid in enumerate(ids):
            (gallery_ids if pos % 2 == 0 else query_ids).append(sid)
    return dataset.subset(query_ids), dataset.subset(gallery_ids)


def cross_branch_similarity(model: DualBranchModel, dataset: LabeledDataset) -> float:
    """Mean per-sample cosine between branch-1 features and the branch-2
    mean encoder's features (both unit-norm, so the dot product)."""
    f1, _ = encode(model.f1, dataset.inputs)
    m2, _ = encode(model.mean_f2, dataset.inputs)
    return float(np.mean(np.sum(f1 * m2, axis=1)))
