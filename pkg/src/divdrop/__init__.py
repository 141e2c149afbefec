"""Desk-scale lab for pseudo-label domain adaptation on synthetic vector
domains: per-epoch sample dropout, density-based pseudo-labeling, and
dual-branch training with EMA mean encoders and a feature-diversity loss."""

__version__ = "0.1.0"

from .clustering import ClusteringConfig, PseudoLabeling, assign_pseudo_labels, dbscan
from .datagen import (
    AffineShift,
    DomainGenConfig,
    LabeledDataset,
    Sample,
    apply_domain_shift,
    generate_domain,
    inject_hard_samples,
    load_dataset,
    save_dataset,
)
from .diagnostics import (
    EvalMetrics,
    NoiseHistory,
    clustering_error_rate,
    evaluate_cmc_map,
    hardest_relative_error,
    noisy_label_flags,
)
from .encoder import (
    Classifier,
    DualBranchModel,
    EncoderParams,
    MeanEncoderParams,
    classify,
    ema_update,
    encode,
    encoder_backward,
    init_model,
    rebuild_target_classifier,
)
from .losses import LossBreakdown, cross_entropy_loss, fdl_loss, softplus, total_loss, triplet_loss
from .sample_dropout import EpochSelection, select_epoch_subset
from .trainer import ExperimentConfig, TrainingReport, pretrain, run, sample_pk_batch
