"""Training losses, each returning its value and exact gradients.

Three components feed the weighted total:
  - classification: mean negative log-probability of the labeled class
    under both branch classifiers, gradients w.r.t. the logits;
  - metric: batch-hard triplet with squared Euclidean distances,
    hinge [tau + d_pos^2 - d_neg^2]_+ per anchor;
  - diversity: softplus of the per-sample dot product between one branch's
    features and the other branch's mean-encoder features, batch-averaged.
    Mean-encoder features are constants here; gradients flow only into the
    live branches.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BatchCompositionError, LabelError, NumericError, ShapeError


def softplus(x):
    """ln(1 + exp(x)), stable for |x| up to ~700; elementwise on arrays."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericError("softplus: non-finite input")
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    """Derivative of softplus; stable in both tails."""
    x = np.asarray(x, dtype=float)
    t = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    return float(out) if out.ndim == 0 else out


@dataclass
class LossBreakdown:
    ce: float
    tri: float
    fdl: float
    total: float
    beta: float
    gamma: float
    delta: float


def fdl_loss(
    f1: np.ndarray, f2: np.ndarray, mean_f1: np.ndarray, mean_f2: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-branch diversity penalty, batch mean of
    softplus(f1_i . mean_f2_i) + softplus(f2_i . mean_f1_i).

    Lower means more diverse branches. Returns (value, grad_f1, grad_f2);
    the mean-encoder inputs get no gradient.
    """
    for name, arr in (("f2", f2), ("mean_f1", mean_f1), ("mean_f2", mean_f2)):
        if arr.shape != f1.shape:
            raise ShapeError(f"fdl_loss: {name} shape {arr.shape} != f1 {f1.shape}")
    b = f1.shape[0]
    d12 = np.sum(f1 * mean_f2, axis=1)
    d21 = np.sum(f2 * mean_f1, axis=1)
    value = float(np.mean(softplus(d12) + softplus(d21)))
    grad_f1 = (sigmoid(d12)[:, None] * mean_f2) / b
    grad_f2 = (sigmoid(d21)[:, None] * mean_f1) / b
    return value, grad_f1, grad_f2


def cross_entropy_loss(
    probs_c1: np.ndarray, probs_c2: np.ndarray, labels
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean of -(log p1[label] + log p2[label]) over the batch.

    `probs_*` must be softmax outputs; the returned gradients are w.r.t.
    the logits behind them: (p - onehot) / B.
    """
    labels = np.asarray(labels, dtype=int)
    if probs_c1.shape != probs_c2.shape:
        raise ShapeError("cross_entropy_loss: probability shapes differ")
    if labels.shape[0] != probs_c1.shape[0]:
        raise ShapeError("cross_entropy_loss: label count != batch size")
    k = probs_c1.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"label out of range for {k} classes")
    b = labels.shape[0]
    rows = np.arange(b)
    p1 = probs_c1[rows, labels]
    p2 = probs_c2[rows, labels]
    if np.any(p1 <= 0) or np.any(p2 <= 0):
        raise NumericError("cross_entropy_loss: zero probability on a label")
    value = float(-(np.log(p1) + np.log(p2)).mean())
    onehot = np.zeros_like(probs_c1)
    onehot[rows, labels] = 1.0
    grad_z1 = (probs_c1 - onehot) / b
    grad_z2 = (probs_c2 - onehot) / b
    return value, grad_z1, grad_z2


def triplet_loss(features: np.ndarray, labels, tau: float) -> tuple[float, np.ndarray]:
    """Batch-hard triplet loss with squared Euclidean distances.

    Per anchor: hardest positive = same-label sample (not the anchor) at
    maximal squared distance, hardest negative = different-label sample at
    minimal squared distance; ties go to the lowest index. Value is the
    batch mean of [tau + d_p^2 - d_n^2]_+ with subgradient 0 at the kink.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if features.ndim != 2 or labels.shape[0] != features.shape[0]:
        raise ShapeError("triplet_loss: features must be (B, F) with one label per row")
    b = features.shape[0]
    value = 0.0
    grad = np.zeros_like(features)
    for a in range(b):
        diffs = features - features[a]
        # contiguous-axis sums keep the arithmetic identical to a per-pair scan
        d2 = np.sum(diffs * diffs, axis=1)
        pos_mask = labels == labels[a]
        pos_mask[a] = False
        neg_mask = labels != labels[a]
        if not pos_mask.any():
            raise BatchCompositionError(f"anchor {a}: no positive sample in batch")
        if not neg_mask.any():
            raise BatchCompositionError(f"anchor {a}: no negative sample in batch")
        pos_idx = np.flatnonzero(pos_mask)
        neg_idx = np.flatnonzero(neg_mask)
        p = pos_idx[np.argmax(d2[pos_idx])]
        n = neg_idx[np.argmin(d2[neg_idx])]
        hinge = tau + d2[p] - d2[n]
        if hinge > 0:
            value += hinge
            grad[a] += 2.0 * (features[n] - features[p])  # d/da of d_p^2 - d_n^2
            grad[p] += 2.0 * (features[p] - features[a])
            grad[n] += 2.0 * (features[a] - features[n])
    return value / b, grad / b


def total_loss(
    ce: float, tri: float, fdl: float, beta: float, gamma: float, delta: float
) -> LossBreakdown:
    """Weighted combination beta*ce + gamma*tri + delta*fdl."""
    for name, v in (("beta", beta), ("gamma", gamma), ("delta", delta)):
        if not np.isfinite(v):
            raise NumericError(f"total_loss: {name} is not finite")
    total = beta * ce + gamma * tri + delta * fdl
    return LossBreakdown(ce=ce, tri=tri, fdl=fdl, total=total, beta=beta, gamma=gamma, delta=delta)
