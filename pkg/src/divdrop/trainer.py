"""Training loop: source pretraining, then per-epoch sample dropout,
pseudo-labeling, and mini-batch optimization of the weighted loss.

Every epoch recomputes pseudo labels from scratch on the selected target
subset, rebuilds the classifiers' target heads from cluster centroids,
then runs PK-structured mini-batches from both domains through plain
gradient descent. Mean encoders take one EMA step per optimization step.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import ClusteringConfig, assign_pseudo_labels
from .datagen import LabeledDataset
from .diagnostics import (
    EvalMetrics,
    NoiseHistory,
    clustering_error_rate,
    cross_branch_similarity,
    evaluate_cmc_map,
    hardest_relative_error,
    noisy_label_flags,
    split_query_gallery,
)
from .encoder import (
    DualBranchModel,
    encode,
    encoder_backward,
    ema_update,
    head_backward,
    head_logits,
    init_model,
    rebuild_target_classifier,
    softmax,
)
from .errors import BatchCompositionError, ConfigurationError, EmptyClusteringError
from .losses import LossBreakdown, cross_entropy_loss, fdl_loss, total_loss, triplet_loss
from .rngutil import substream
from .sample_dropout import select_epoch_subset

SELECTION_LOG_LIMIT = 200  # above this many target samples, log counts only


@dataclass
class ExperimentConfig:
    rho: float = 0.4                 # sample dropout rate
    alpha: float = 0.999             # mean-encoder momentum
    beta: float = 1.0                # classification weight
    gamma: float = 1.0               # triplet weight
    delta: float = 0.5               # diversity weight
    tau: float = 0.3                 # triplet margin
    lr_initial: float = 0.00035
    lr_decay_every: int = 20         # epochs between decays
    lr_decay_factor: float = 0.1
    epochs_total: int = 55           # includes the pretraining epochs
    pretrain_epochs: int = 1
    batch_p: int = 15                # identities per batch
    batch_k: int = 4                 # instances per identity
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    arch: tuple = (64, 32)           # hidden/output widths; input dim from data
    activation: str = "relu"
    seed: int = 0
    fdl_enabled: bool = True         # False is exactly delta = 0

    @property
    def batch_size(self) -> int:
        return self.batch_p * self.batch_k

    def validate(self) -> None:
        if not (0.0 <= self.rho < 1.0):
            raise ConfigurationError(f"rho must be in [0, 1), got {self.rho}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigurationError("alpha must be in [0, 1]")
        for name in ("beta", "gamma", "delta", "tau", "lr_initial", "lr_decay_factor"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        if self.lr_decay_every < 1:
            raise ConfigurationError("lr_decay_every must be >= 1")
        if self.epochs_total < self.pretrain_epochs or self.pretrain_epochs < 0:
            raise ConfigurationError("need epochs_total >= pretrain_epochs >= 0")
        if self.batch_p < 2 or self.batch_k < 1:
            raise ConfigurationError("batch needs >= 2 identities and >= 1 instance")
        if self.seed < 0:
            raise ConfigurationError("seed must be >= 0")
        if not self.arch or any(a < 1 for a in self.arch):
            raise ConfigurationError("arch must list positive layer sizes")
        self.clustering.validate()

    def learning_rate(self, epoch: int) -> float:
        return self.lr_initial * self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class EpochRecord:
    epoch: int                 # global epoch index, pretraining included
    kind: str                  # "pretrain" | "adapt"
    ce: float
    tri: float
    fdl: float
    total: float
    lr: float
    steps: int
    num_selected: int
    num_clusters: int
    num_outliers: int
    num_trainable: int
    clustering_error_rate: float | None
    aborted: bool
    abort_reason: str | None
    selected_ids: list | None  # elided when the target set is large
    wall_clock: float          # never serialized; reports must be reproducible


@dataclass
class TrainingReport:
    config: dict
    epochs: list
    noise_participated: dict
    noise_noisy: dict
    final_metrics: EvalMetrics | None
    final_clustering_error_rate: float | None
    rel_err_10: float | None
    rel_err_20: float | None
    cross_branch_cosine: float
    final_model: DualBranchModel | None = None  # not serialized

    def to_json_dict(self) -> dict:
        """Deterministic content only: wall clocks and the model stay out."""
        epochs = []
        for r in self.epochs:
            epochs.append({
                "epoch": r.epoch,
                "kind": r.kind,
                "ce": r.ce,
                "tri": r.tri,
                "fdl": r.fdl,
                "total": r.total,
                "lr": r.lr,
                "steps": r.steps,
                "num_selected": r.num_selected,
                "num_clusters": r.num_clusters,
                "num_outliers": r.num_outliers,
                "num_trainable": r.num_trainable,
                "clustering_error_rate": r.clustering_error_rate,
                "aborted": r.aborted,
                "abort_reason": r.abort_reason,
                "selected_ids": r.selected_ids,
            })
        metrics = None
        if self.final_metrics is not None:
            metrics = {
                "mAP": self.final_metrics.mAP,
                "rank1": self.final_metrics.rank1,
                "rank5": self.final_metrics.rank5,
                "rank10": self.final_metrics.rank10,
            }
        return {
            "config": self.config,
            "epochs": epochs,
            "noise_participated": {str(k): v for k, v in sorted(self.noise_participated.items())},
            "noise_noisy": {str(k): v for k, v in sorted(self.noise_noisy.items())},
            "final_metrics": metrics,
            "final_clustering_error_rate": self.final_clustering_error_rate,
            "rel_err_10": self.rel_err_10,
            "rel_err_20": self.rel_err_20,
            "cross_branch_cosine": self.cross_branch_cosine,
        }


def sample_pk_batch(
    dataset: LabeledDataset, labels, p: int, k_inst: int, rng: np.random.Generator
) -> np.ndarray:
    """Indices (into `dataset.samples`) of a P-identity x K-instance batch.

    `labels` supplies the identity of each sample (true or pseudo), aligned
    with the dataset order. Identities with fewer than k_inst members are
    resampled with replacement, so every label appears exactly k_inst times.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.shape[0] != len(dataset):
        raise BatchCompositionError("labels must align with the dataset")
    distinct = np.unique(labels)
    if distinct.shape[0] < p:
        raise BatchCompositionError(f"need {p} distinct labels, have {distinct.shape[0]}")
    chosen = rng.choice(distinct, size=p, replace=False)
    picks = []
    for lab in chosen:
        members = np.flatnonzero(labels == lab)
        replace_flag = members.shape[0] < k_inst
        picks.append(rng.choice(members, size=k_inst, replace=replace_flag))
    return np.concatenate(picks)


def _optimize_step(
    model: DualBranchModel,
    src_x: np.ndarray,
    src_y: np.ndarray,
    tgt_x: np.ndarray | None,
    tgt_y: np.ndarray | None,
    lr: float,
    cfg: ExperimentConfig,
) -> LossBreakdown:
    """One gradient-descent step on both branches plus one EMA step each.

    The target batch may be absent (pretraining); then only the source
    terms of each loss are active. Mutates the model in place.
    """
    delta_eff = cfg.delta if cfg.fdl_enabled else 0.0
    have_tgt = tgt_x is not None

    f1_s, cache1_s = encode(model.f1, src_x)
    f2_s, cache2_s = encode(model.f2, src_x)
    m1_s, _ = encode(model.mean_f1, src_x)
    m2_s, _ = encode(model.mean_f2, src_x)

    w1_src, b1_src = model.c1.source_head()
    w2_src, b2_src = model.c2.source_head()
    p1_s = softmax(head_logits(w1_src, b1_src, f1_s))
    p2_s = softmax(head_logits(w2_src, b2_src, f2_s))
    ce_s, gz1_s, gz2_s = cross_entropy_loss(p1_s, p2_s, src_y)
    tri1_s, gtri1_s = triplet_loss(f1_s, src_y, cfg.tau)
    tri2_s, gtri2_s = triplet_loss(f2_s, src_y, cfg.tau)
    fdl_s, gfdl1_s, gfdl2_s = fdl_loss(f1_s, f2_s, m1_s, m2_s)

    ce_val, tri_val, fdl_val = ce_s, tri1_s + tri2_s, fdl_s

    if have_tgt:
        f1_t, cache1_t = encode(model.f1, tgt_x)
        f2_t, cache2_t = encode(model.f2, tgt_x)
        m1_t, _ = encode(model.mean_f1, tgt_x)
        m2_t, _ = encode(model.mean_f2, tgt_x)
        w1_tgt, b1_tgt = model.c1.target_head()
        w2_tgt, b2_tgt = model.c2.target_head()
        p1_t = softmax(head_logits(w1_tgt, b1_tgt, f1_t))
        p2_t = softmax(head_logits(w2_tgt, b2_tgt, f2_t))
        ce_t, gz1_t, gz2_t = cross_entropy_loss(p1_t, p2_t, tgt_y)
        tri1_t, gtri1_t = triplet_loss(f1_t, tgt_y, cfg.tau)
        tri2_t, gtri2_t = triplet_loss(f2_t, tgt_y, cfg.tau)
        fdl_t, gfdl1_t, gfdl2_t = fdl_loss(f1_t, f2_t, m1_t, m2_t)
        ce_val += ce_t
        tri_val += tri1_t + tri2_t
        fdl_val += fdl_t

    breakdown = total_loss(ce_val, tri_val, fdl_val, cfg.beta, cfg.gamma, delta_eff)

    # feature-level gradients per branch and batch
    gce1_s, dw1_src, db1_src = head_backward(w1_src, f1_s, gz1_s)
    gce2_s, dw2_src, db2_src = head_backward(w2_src, f2_s, gz2_s)
    g1_s = cfg.beta * gce1_s + cfg.gamma * gtri1_s + delta_eff * gfdl1_s
    g2_s = cfg.beta * gce2_s + cfg.gamma * gtri2_s + delta_eff * gfdl2_s
    gw1, gb1 = encoder_backward(model.f1, cache1_s, g1_s)
    gw2, gb2 = encoder_backward(model.f2, cache2_s, g2_s)

    if have_tgt:
        gce1_t, dw1_tgt, db1_tgt = head_backward(w1_tgt, f1_t, gz1_t)
        gce2_t, dw2_tgt, db2_tgt = head_backward(w2_tgt, f2_t, gz2_t)
        g1_t = cfg.beta * gce1_t + cfg.gamma * gtri1_t + delta_eff * gfdl1_t
        g2_t = cfg.beta * gce2_t + cfg.gamma * gtri2_t + delta_eff * gfdl2_t
        gw1_t, gb1_t = encoder_backward(model.f1, cache1_t, g1_t)
        gw2_t, gb2_t = encoder_backward(model.f2, cache2_t, g2_t)
        gw1 = [a + b for a, b in zip(gw1, gw1_t)]
        gb1 = [a + b for a, b in zip(gb1, gb1_t)]
        gw2 = [a + b for a, b in zip(gw2, gw2_t)]
        gb2 = [a + b for a, b in zip(gb2, gb2_t)]

    # plain gradient descent
    for enc, gws, gbs in ((model.f1, gw1, gb1), (model.f2, gw2, gb2)):
        for w, gw in zip(enc.weights, gws):
            w -= lr * gw
        for b, gb in zip(enc.biases, gbs):
            b -= lr * gb
    n_src = model.c1.num_source_classes
    model.c1.weight[:n_src] -= lr * cfg.beta * dw1_src
    model.c1.bias[:n_src] -= lr * cfg.beta * db1_src
    model.c2.weight[:n_src] -= lr * cfg.beta * dw2_src
    model.c2.bias[:n_src] -= lr * cfg.beta * db2_src
    if have_tgt:
        model.c1.weight[n_src:] -= lr * cfg.beta * dw1_tgt
        model.c1.bias[n_src:] -= lr * cfg.beta * db1_tgt
        model.c2.weight[n_src:] -= lr * cfg.beta * dw2_tgt
        model.c2.bias[n_src:] -= lr * cfg.beta * db2_tgt

    # one EMA step per branch, from the just-updated encoders
    model.mean_f1 = ema_update(model.mean_f1, model.f1, cfg.alpha)
    model.mean_f2 = ema_update(model.mean_f2, model.f2, cfg.alpha)
    return breakdown


def _mean_breakdown(parts: list[LossBreakdown]) -> tuple[float, float, float, float]:
    if not parts:
        return 0.0, 0.0, 0.0, 0.0
    return (
        float(np.mean([p.ce for p in parts])),
        float(np.mean([p.tri for p in parts])),
        float(np.mean([p.fdl for p in parts])),
        float(np.mean([p.total for p in parts])),
    )


def pretrain(
    model: DualBranchModel,
    source: LabeledDataset,
    config: ExperimentConfig,
    rng_batches: np.random.Generator | None = None,
    epoch_offset: int = 0,
    records: list | None = None,
) -> DualBranchModel:
    """Source-only optimization of the full loss (target batch empty) for
    config.pretrain_epochs epochs, EMA after every step."""
    config.validate()
    if rng_batches is None:
        rng_batches = substream(config.seed, "batches")
    steps_per_epoch = max(1, math.ceil(len(source) / config.batch_size))
    for e in range(config.pretrain_epochs):
        epoch = epoch_offset + e
        lr = config.learning_rate(epoch)
        t0 = time.perf_counter()
        parts = []
        for _ in range(steps_per_epoch):
            idx = sample_pk_batch(
                source, source.labels, min(config.batch_p, source.num_identities),
                config.batch_k, rng_batches,
            )
            parts.append(
                _optimize_step(model, source.inputs[idx], source.labels[idx], None, None, lr, config)
            )
        if records is not None:
            ce, tri, fdl, tot = _mean_breakdown(parts)
            records.append(EpochRecord(
                epoch=epoch, kind="pretrain", ce=ce, tri=tri, fdl=fdl, total=tot, lr=lr,
                steps=steps_per_epoch, num_selected=0, num_clusters=0, num_outliers=0,
                num_trainable=0, clustering_error_rate=None, aborted=False, abort_reason=None,
                selected_ids=None, wall_clock=time.perf_counter() - t0,
            ))
    return model


def run(
    source: LabeledDataset,
    target: LabeledDataset,
    config: ExperimentConfig,
    verbose: bool = False,
) -> TrainingReport:
    """Full training: pretrain on source, then adapt for the remaining
    epochs with per-epoch dropout, clustering, and PK-batch optimization.

    Deterministic for a fixed config; epochs whose clustering collapses
    (no clusters after the eps retry, or a single cluster) are recorded as
    aborted and skipped, and the run continues.
    """
    config.validate()
    if source.dim != target.dim:
        raise ConfigurationError(f"source dim {source.dim} != target dim {target.dim}")

    model = init_model([source.dim] + list(config.arch), source.num_identities,
                       config.seed, config.activation)
    rng_batches = substream(config.seed, "batches")
    records: list[EpochRecord] = []
    history = NoiseHistory.for_ids(target.ids)
    true_labels = target.labels_by_id()
    log_ids = len(target) <= SELECTION_LOG_LIMIT

    model = pretrain(model, source, config, rng_batches, epoch_offset=0, records=records)

    adapt_epochs = config.epochs_total - config.pretrain_epochs
    for k in range(adapt_epochs):
        epoch = config.pretrain_epochs + k
        lr = config.learning_rate(epoch)
        t0 = time.perf_counter()
        sel = select_epoch_subset(target, config.rho, k, config.seed)
        subset = target.subset(sel.selected_ids)

        def aborted_record(reason: str, num_clusters: int = 0, num_outliers: int = 0) -> EpochRecord:
            return EpochRecord(
                epoch=epoch, kind="adapt", ce=0.0, tri=0.0, fdl=0.0, total=0.0, lr=lr,
                steps=0, num_selected=len(subset), num_clusters=num_clusters,
                num_outliers=num_outliers, num_trainable=0, clustering_error_rate=None,
                aborted=True, abort_reason=reason,
                selected_ids=sel.selected_ids.tolist() if log_ids else None,
                wall_clock=time.perf_counter() - t0,
            )

        try:
            pseudo = assign_pseudo_labels(model, subset, config.clustering)
        except EmptyClusteringError:
            records.append(aborted_record("empty clustering after eps retry"))
            if verbose:
                print(f"[epoch {epoch}] aborted: empty clustering")
            continue
        flags = noisy_label_flags(pseudo, true_labels)
        history.record(flags)
        err = clustering_error_rate(flags)
        if pseudo.num_clusters < 2:
            # CE and triplet both degenerate with one pseudo class
            records.append(aborted_record("fewer than 2 clusters", pseudo.num_clusters,
                                          len(pseudo.outliers)))
            if verbose:
                print(f"[epoch {epoch}] aborted: {pseudo.num_clusters} cluster(s)")
            continue

        model = rebuild_target_classifier(model, *pseudo.centroids_per_branch)
        trainable_ids = sorted(pseudo.assignments)
        tgt_train = target.subset(trainable_ids)
        tgt_labels = np.array([pseudo.assignments[int(i)] for i in tgt_train.ids], dtype=int)

        steps = max(1, math.ceil(len(tgt_train) / config.batch_size))
        p_src = min(config.batch_p, source.num_identities)
        p_tgt = min(config.batch_p, pseudo.num_clusters)
        parts = []
        for _ in range(steps):
            src_idx = sample_pk_batch(source, source.labels, p_src, config.batch_k, rng_batches)
            tgt_idx = sample_pk_batch(tgt_train, tgt_labels, p_tgt, config.batch_k, rng_batches)
            parts.append(_optimize_step(
                model,
                source.inputs[src_idx], source.labels[src_idx],
                tgt_train.inputs[tgt_idx], tgt_labels[tgt_idx],
                lr, config,
            ))
        ce, tri, fdl, tot = _mean_breakdown(parts)
        records.append(EpochRecord(
            epoch=epoch, kind="adapt", ce=ce, tri=tri, fdl=fdl, total=tot, lr=lr,
            steps=steps, num_selected=len(subset), num_clusters=pseudo.num_clusters,
            num_outliers=len(pseudo.outliers), num_trainable=len(tgt_train),
            clustering_error_rate=err, aborted=False, abort_reason=None,
            selected_ids=sel.selected_ids.tolist() if log_ids else None,
            wall_clock=time.perf_counter() - t0,
        ))
        if verbose:
            print(f"[epoch {epoch}] clusters={pseudo.num_clusters} outliers={len(pseudo.outliers)} "
                  f"err={err:.3f} total={tot:.4f}")

    # final diagnostics on the converged model
    final_err = None
    try:
        final_pseudo = assign_pseudo_labels(model, target, config.clustering)
        final_err = clustering_error_rate(noisy_label_flags(final_pseudo, true_labels))
    except EmptyClusteringError:
        pass
    rel10 = rel20 = None
    if history.total_noisy() > 0:
        rel10 = hardest_relative_error(history, 0.10)
        rel20 = hardest_relative_error(history, 0.20)
    metrics = None
    query, gallery = split_query_gallery(target)
    if len(query) > 0:
        metrics = evaluate_cmc_map(model, query, gallery)
    cosine = cross_branch_similarity(model, target)

    return TrainingReport(
        config=config_to_dict(config),
        epochs=records,
        noise_participated=dict(history.participated),
        noise_noisy=dict(history.noisy),
        final_metrics=metrics,
        final_clustering_error_rate=final_err,
        rel_err_10=rel10,
        rel_err_20=rel20,
        cross_branch_cosine=cosine,
        final_model=model,
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "rho": config.rho,
        "alpha": config.alpha,
        "beta": config.beta,
        "gamma": config.gamma,
        "delta": config.delta,
        "tau": config.tau,
        "lr_initial": config.lr_initial,
        "lr_decay_every": config.lr_decay_every,
        "lr_decay_factor": config.lr_decay_factor,
        "epochs_total": config.epochs_total,
        "pretrain_epochs": config.pretrain_epochs,
        "batch_p": config.batch_p,
        "batch_k": config.batch_k,
        "clustering_eps": config.clustering.eps,
        "clustering_min_pts": config.clustering.min_pts,
        "arch": list(config.arch),
        "activation": config.activation,
        "seed": config.seed,
        "fdl_enabled": config.fdl_enabled,
    }
