"""Dual-branch MLP encoders with exact analytic gradients.

Each branch is a small feed-forward net: activations on hidden layers, a
linear last layer, then row-wise L2 normalization of the output. Every
branch has an exponential-moving-average twin ("mean encoder") that is
never trained by gradients, only by ema_update. Classifiers are linear
heads over the normalized features: a fixed block of source-class rows
followed by a target block that gets rebuilt from cluster centroids each
epoch.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptyClusteringError, ShapeError
from .rngutil import substream

_NORM_FLOOR = 1e-12  # guards the division; never active for trained nets


@dataclass
class EncoderParams:
    weights: list  # per layer, shape (out, in)
    biases: list   # per layer, shape (out,)
    activation: str = "relu"  # "relu" | "tanh"

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)


# A mean encoder is shape-identical to its paired encoder; only its update
# rule differs, so it shares the parameter type.
MeanEncoderParams = EncoderParams


@dataclass
class Classifier:
    weight: np.ndarray  # (num_classes, feature_dim)
    bias: np.ndarray    # (num_classes,)
    num_source_classes: int

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def source_head(self) -> tuple[np.ndarray, np.ndarray]:
        return self.weight[: self.num_source_classes], self.bias[: self.num_source_classes]

    def target_head(self) -> tuple[np.ndarray, np.ndarray]:
        return self.weight[self.num_source_classes :], self.bias[self.num_source_classes :]

    def copy(self) -> "Classifier":
        return Classifier(self.weight.copy(), self.bias.copy(), self.num_source_classes)


@dataclass
class DualBranchModel:
    f1: EncoderParams
    f2: EncoderParams
    mean_f1: MeanEncoderParams
    mean_f2: MeanEncoderParams
    c1: Classifier
    c2: Classifier

    def copy(self) -> "DualBranchModel":
        return DualBranchModel(
            self.f1.copy(), self.f2.copy(), self.mean_f1.copy(), self.mean_f2.copy(),
            self.c1.copy(), self.c2.copy(),
        )


@dataclass
class ForwardCache:
    layer_inputs: list   # input to each layer (first is the batch itself)
    pre_acts: list       # z per layer
    raw: np.ndarray      # last-layer output before normalization
    norms: np.ndarray    # (B, 1) clamped row norms
    features: np.ndarray


def _init_encoder(layer_sizes, activation: str, rng: np.random.Generator) -> EncoderParams:
    weights, biases = [], []
    gain = 2.0 if activation == "relu" else 1.0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * math.sqrt(gain / fan_in))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights, biases, activation)


def init_model(
    arch, num_source_classes: int, seed: int, activation: str = "relu"
) -> DualBranchModel:
    """Fresh model: two independently initialized branches, mean encoders as
    exact copies, zero-initialized classifiers with the source head only.

    `arch` lists layer widths input-first, e.g. [8, 64, 32].
    """
    arch = list(arch)
    if len(arch) < 2:
        raise ConfigurationError("arch needs an input size and at least one layer")
    if any(a < 1 for a in arch):
        raise ConfigurationError("layer sizes must be >= 1")
    if num_source_classes < 1:
        raise ConfigurationError("num_source_classes must be >= 1")
    if activation not in ("relu", "tanh"):
        raise ConfigurationError(f"unknown activation {activation!r}")
    f1 = _init_encoder(arch, activation, substream(seed, "init", "f1"))
    f2 = _init_encoder(arch, activation, substream(seed, "init", "f2"))
    feat = arch[-1]
    c1 = Classifier(np.zeros((num_source_classes, feat)), np.zeros(num_source_classes), num_source_classes)
    c2 = Classifier(np.zeros((num_source_classes, feat)), np.zeros(num_source_classes), num_source_classes)
    return DualBranchModel(f1, f2, f1.copy(), f2.copy(), c1, c2)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0).astype(float) if kind == "relu" else 1.0 - a * a


def encode(params: EncoderParams, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass; output rows are L2-normalized."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[1] != params.input_dim:
        raise ShapeError(f"input dim {batch.shape[1]} != encoder input {params.input_dim}")
    layer_inputs, pre_acts = [], []
    a = batch
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(a)
        z = a @ w.T + b
        pre_acts.append(z)
        a = z if l == last else _act(z, params.activation)
    raw = a
    norms = np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), _NORM_FLOOR)
    features = raw / norms
    return features, ForwardCache(layer_inputs, pre_acts, raw, norms, features)


def encoder_backward(
    params: EncoderParams, cache: ForwardCache, grad_features: np.ndarray
) -> tuple[list, list]:
    """Exact gradients of sum(grad_features * features) w.r.t. all weights
    and biases, including the normalization layer."""
    g = np.asarray(grad_features, dtype=float)
    if g.shape != cache.features.shape:
        raise ShapeError(f"grad shape {g.shape} != features {cache.features.shape}")
    # through f = raw / ||raw||:  df = (g - (g.f) f) / ||raw||
    dots = np.sum(g * cache.features, axis=1, keepdims=True)
    da = (g - dots * cache.features) / cache.norms

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    last = len(params.weights) - 1
    for l in range(last, -1, -1):
        if l == last:
            dz = da
        else:
            a_l = _act(cache.pre_acts[l], params.activation)
            dz = da * _act_grad(cache.pre_acts[l], a_l, params.activation)
        grad_w[l] = dz.T @ cache.layer_inputs[l]
        grad_b[l] = dz.sum(axis=0)
        if l > 0:
            da = dz @ params.weights[l]
    return grad_w, grad_b


def ema_update(mean: MeanEncoderParams, current: EncoderParams, alpha: float) -> MeanEncoderParams:
    """new_mean = alpha * mean + (1 - alpha) * current, elementwise."""
    if not (0.0 <= alpha <= 1.0):
        raise ConfigurationError("alpha must be in [0, 1]")
    if len(mean.weights) != len(current.weights):
        raise ShapeError("mean/current layer counts differ")
    new_w, new_b = [], []
    for mw, cw in zip(mean.weights, current.weights):
        if mw.shape != cw.shape:
            raise ShapeError(f"weight shape mismatch {mw.shape} vs {cw.shape}")
        new_w.append(alpha * mw + (1.0 - alpha) * cw)
    for mb, cb in zip(mean.biases, current.biases):
        if mb.shape != cb.shape:
            raise ShapeError(f"bias shape mismatch {mb.shape} vs {cb.shape}")
        new_b.append(alpha * mb + (1.0 - alpha) * cb)
    return EncoderParams(new_w, new_b, mean.activation)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def head_logits(weight: np.ndarray, bias: np.ndarray, features: np.ndarray) -> np.ndarray:
    if features.shape[1] != weight.shape[1]:
        raise ShapeError(f"feature dim {features.shape[1]} != head dim {weight.shape[1]}")
    return features @ weight.T + bias


def classify(c: Classifier, features: np.ndarray) -> np.ndarray:
    """Softmax probabilities over all classifier rows; rows sum to 1."""
    return softmax(head_logits(c.weight, c.bias, features))


def head_backward(
    weight: np.ndarray, features: np.ndarray, grad_logits: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backprop through logits = features @ W.T + b.

    Returns (grad_features, grad_weight, grad_bias).
    """
    if grad_logits.shape != (features.shape[0], weight.shape[0]):
        raise ShapeError("grad_logits shape does not match head")
    return grad_logits @ weight, grad_logits.T @ features, grad_logits.sum(axis=0)


def rebuild_target_classifier(
    model: DualBranchModel, centroids_f1: np.ndarray, centroids_f2: np.ndarray | None = None
) -> DualBranchModel:
    """Replace the target head of each classifier with that branch's cluster
    centroids (zero bias); source head rows are preserved bit for bit.

    With one centroid matrix both branches receive the same rows.
    """
    if centroids_f2 is None:
        centroids_f2 = centroids_f1
    for cents, cls in ((centroids_f1, model.c1), (centroids_f2, model.c2)):
        if cents.ndim != 2 or cents.shape[0] == 0:
            raise EmptyClusteringError("target head rebuild needs at least one centroid")
        if cents.shape[1] != cls.weight.shape[1]:
            raise ShapeError(f"centroid dim {cents.shape[1]} != feature dim {cls.weight.shape[1]}")

    def rebuilt(cls: Classifier, cents: np.ndarray) -> Classifier:
        src_w, src_b = cls.source_head()
        weight = np.vstack([src_w, cents])
        bias = np.concatenate([src_b, np.zeros(cents.shape[0])])
        return Classifier(weight, bias, cls.num_source_classes)

    return DualBranchModel(
        model.f1, model.f2, model.mean_f1, model.mean_f2,
        rebuilt(model.c1, centroids_f1), rebuilt(model.c2, centroids_f2),
    )


def save_checkpoint(model: DualBranchModel, path) -> None:
    """Flat text: `name shape... values...` per line, exact decimal reprs."""
    def emit(fh, key, arr):
        arr = np.asarray(arr)
        dims = " ".join(str(d) for d in arr.shape)
        vals = " ".join(repr(float(v)) for v in arr.ravel())
        fh.write(f"{key} {dims} {vals}\n")

    with open(path, "w") as fh:
        fh.write(f"meta.activation {model.f1.activation}\n")
        fh.write(f"meta.num_source_classes {model.c1.num_source_classes}\n")
        for name, enc in (("f1", model.f1), ("f2", model.f2), ("mean_f1", model.mean_f1), ("mean_f2", model.mean_f2)):
            for l, (w, b) in enumerate(zip(enc.weights, enc.biases)):
                emit(fh, f"{name}.{l}.weight", w)
                emit(fh, f"{name}.{l}.bias", b)
        for name, cls in (("c1", model.c1), ("c2", model.c2)):
            emit(fh, f"{name}.weight", cls.weight)
            emit(fh, f"{name}.bias", cls.bias)


def load_checkpoint(path) -> DualBranchModel:
    activation = "relu"
    num_source_classes = None
    arrays: dict[str, np.ndarray] = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            key = parts[0]
            if key == "meta.activation":
                activation = parts[1]
            elif key == "meta.num_source_classes":
                num_source_classes = int(parts[1])
            else:
                ndim = 1 if key.endswith("bias") else 2
                shape = tuple(int(p) for p in parts[1 : 1 + ndim])
                vals = np.array([float(p) for p in parts[1 + ndim :]])
                arrays[key] = vals.reshape(shape)
    if num_source_classes is None:
        raise ConfigurationError(f"{path}: missing meta.num_source_classes")

    def load_encoder(name: str) -> EncoderParams:
        weights, biases = [], []
        l = 0
        while f"{name}.{l}.weight" in arrays:
            weights.append(arrays[f"{name}.{l}.weight"])
            biases.append(arrays[f"{name}.{l}.bias"])
            l += 1
        if not weights:
            raise ConfigurationError(f"{path}: no layers for encoder {name}")
        return EncoderParams(weights, biases, activation)

    def load_classifier(name: str) -> Classifier:
        return Classifier(arrays[f"{name}.weight"], arrays[f"{name}.bias"], num_source_classes)

    return DualBranchModel(
        load_encoder("f1"), load_encoder("f2"), load_encoder("mean_f1"), load_encoder("mean_f2"),
        load_classifier("c1"), load_classifier("c2"),
    )
