"""Synthetic source/target domain generator.

Each domain is a Gaussian-blob identity mixture: per-identity centers are
sampled on a hypersphere (radius chosen so the RMS center-to-center distance
equals the configured separation), samples are centers plus isotropic noise.
A domain gap is modelled as an affine map applied to every input, and "hard"
samples are made by interpolating a sample toward a foreign identity's
center while keeping its true label, so it clusters wrongly on purpose.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, ShapeError
from .rngutil import substream

DOMAINS = ("source", "target")


@dataclass
class Sample:
    sample_id: int
    input: np.ndarray  # shape (dim,)
    true_label: int
    domain: str  # "source" | "target"


class LabeledDataset:
    """Immutable-by-convention collection of samples with cached array views.

    Invariants checked at construction: unique sample ids, constant input
    dimension, labels in [0, num_identities).
    """

    def __init__(self, samples: list[Sample], num_identities: int, dim: int):
        self.samples = list(samples)
        self.num_identities = int(num_identities)
        self.dim = int(dim)
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("sample ids must be unique within a dataset")
        for s in self.samples:
            if s.input.shape != (self.dim,):
                raise ShapeError(f"sample {s.sample_id}: input dim {s.input.shape} != ({self.dim},)")
            if not (0 <= s.true_label < self.num_identities):
                raise ConfigurationError(f"sample {s.sample_id}: label {s.true_label} out of range")
            if s.domain not in DOMAINS:
                raise ConfigurationError(f"sample {s.sample_id}: unknown domain {s.domain!r}")
        self.ids = np.array(ids, dtype=int)
        self.inputs = (
            np.stack([s.input for s in self.samples]) if self.samples else np.zeros((0, self.dim))
        )
        self.labels = np.array([s.true_label for s in self.samples], dtype=int)
        self._pos_by_id = {sid: i for i, sid in enumerate(ids)}

    def __len__(self) -> int:
        return len(self.samples)

    def labels_by_id(self) -> dict[int, int]:
        return {s.sample_id: s.true_label for s in self.samples}

    def subset(self, sample_ids) -> "LabeledDataset":
        """New dataset restricted to the given ids, original order preserved."""
        wanted = set(int(i) for i in sample_ids)
        picked = [s for s in self.samples if s.sample_id in wanted]
        if len(picked) != len(wanted):
            missing = wanted - {s.sample_id for s in picked}
            raise ConfigurationError(f"unknown sample ids in subset: {sorted(missing)[:5]}")
        return LabeledDataset(picked, self.num_identities, self.dim)


@dataclass
class AffineShift:
    """x -> matrix @ x + offset; either part may be omitted."""

    matrix: np.ndarray | None = None  # (dim, dim)
    offset: np.ndarray | None = None  # (dim,)

    def apply(self, inputs: np.ndarray) -> np.ndarray:
        out = inputs
        if self.matrix is not None:
            out = out @ self.matrix.T
        if self.offset is not None:
            out = out + self.offset
        return out

    @staticmethod
    def identity() -> "AffineShift":
        return AffineShift()

    @staticmethod
    def translation(offset: np.ndarray) -> "AffineShift":
        return AffineShift(offset=np.asarray(offset, dtype=float))

    @staticmethod
    def block_rotation(dim: int, angle_rad: float) -> "AffineShift":
        """Rotation by the same angle in every consecutive coordinate plane
        (0,1), (2,3), ...; an isometry that touches all coordinates."""
        m = np.eye(dim)
        c, s = math.cos(angle_rad), math.sin(angle_rad)
        for i in range(0, dim - 1, 2):
            m[i, i], m[i, i + 1] = c, -s
            m[i + 1, i], m[i + 1, i + 1] = s, c
        return AffineShift(matrix=m)

    def compose(self, other: "AffineShift") -> "AffineShift":
        """Shift equivalent to applying `self` first, then `other`."""
        a = self.matrix if self.matrix is not None else None
        b = other.matrix if other.matrix is not None else None
        if a is None:
            mat = b
        elif b is None:
            mat = a
        else:
            mat = b @ a
        off = self.offset
        if off is not None and b is not None:
            off = b @ off
        if other.offset is not None:
            off = other.offset if off is None else off + other.offset
        return AffineShift(matrix=mat, offset=off)


@dataclass
class DomainGenConfig:
    num_identities: int = 20
    samples_per_identity: int = 25
    dim: int = 8
    intra_class_spread: float = 0.12      # std of isotropic per-sample noise
    inter_class_separation: float = 3.0   # RMS distance between identity centers
    domain_shift: AffineShift | None = None
    hard_fraction: float = 0.1            # fraction of samples turned hard
    hard_overlap: float = 4.0             # >= 1; weight w = o/(o+1) toward foreign center
    seed: int = 0


def _validate_gen_config(config: DomainGenConfig) -> None:
    if config.num_identities < 1:
        raise ConfigurationError("num_identities must be >= 1")
    if config.samples_per_identity < 1:
        raise ConfigurationError("samples_per_identity must be >= 1")
    if config.dim < 1:
        raise ConfigurationError("dim must be >= 1")
    if config.intra_class_spread < 0:
        raise ConfigurationError("intra_class_spread must be >= 0")
    if config.inter_class_separation < 0:
        raise ConfigurationError("inter_class_separation must be >= 0")
    if not (0.0 <= config.hard_fraction <= 1.0):
        raise ConfigurationError("hard_fraction must be in [0, 1]")
    if config.hard_overlap < 1.0:
        raise ConfigurationError("hard_overlap must be >= 1")


def identity_centers(config: DomainGenConfig) -> np.ndarray:
    """Per-identity centers on a hypersphere of radius separation/sqrt(2).

    For independent uniform directions the expected squared distance between
    two centers is 2 r^2, so this radius makes the RMS pairwise distance
    equal to inter_class_separation regardless of dimension.
    """
    rng = substream(config.seed, "centers")
    dirs = rng.standard_normal((config.num_identities, config.dim))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radius = config.inter_class_separation / math.sqrt(2.0)
    return radius * dirs / norms


def generate_domain(config: DomainGenConfig, domain: str = "source") -> LabeledDataset:
    """Draw num_identities x samples_per_identity samples around the centers.

    Deterministic for a fixed config.seed; identity i occupies the
    contiguous id block [i*spi, (i+1)*spi).
    """
    _validate_gen_config(config)
    if domain not in DOMAINS:
        raise ConfigurationError(f"unknown domain {domain!r}")
    centers = identity_centers(config)
    rng = substream(config.seed, "noise")
    spi = config.samples_per_identity
    samples = []
    for ident in range(config.num_identities):
        noise = rng.standard_normal((spi, config.dim)) * config.intra_class_spread
        block = centers[ident] + noise
        for j in range(spi):
            samples.append(Sample(ident * spi + j, block[j], ident, domain))
    return LabeledDataset(samples, config.num_identities, config.dim)


def apply_domain_shift(dataset: LabeledDataset, shift: AffineShift) -> LabeledDataset:
    """Apply one affine map to every input; ids, labels, domain unchanged."""
    if shift.matrix is not None and shift.matrix.shape != (dataset.dim, dataset.dim):
        raise ConfigurationError(
            f"shift matrix shape {shift.matrix.shape} != ({dataset.dim}, {dataset.dim})"
        )
    if shift.offset is not None and shift.offset.shape != (dataset.dim,):
        raise ConfigurationError(f"shift offset shape {shift.offset.shape} != ({dataset.dim},)")
    moved = shift.apply(dataset.inputs)
    samples = [
        Sample(s.sample_id, moved[i], s.true_label, s.domain)
        for i, s in enumerate(dataset.samples)
    ]
    return LabeledDataset(samples, dataset.num_identities, dataset.dim)


def inject_hard_samples(
    dataset: LabeledDataset, hard_fraction: float, hard_overlap: float, seed: int
) -> tuple[LabeledDataset, set[int]]:
    """Move floor(hard_fraction*N) random samples toward a foreign identity.

    Empirical class centers are computed once before any move. A moved
    sample becomes (1-w)*x + w*foreign_center with w = overlap/(overlap+1),
    so larger overlap parks it closer to the foreign center. True labels are
    never changed; the returned set holds the moved sample ids.
    """
    if not (0.0 <= hard_fraction <= 1.0):
        raise ConfigurationError("hard_fraction must be in [0, 1]")
    if hard_overlap < 1.0:
        raise ConfigurationError("hard_overlap must be >= 1")
    n_move = int(math.floor(hard_fraction * len(dataset)))
    if n_move == 0:
        return dataset, set()
    if dataset.num_identities < 2:
        raise ConfigurationError("hard samples need at least 2 identities")

    centers = np.stack(
        [dataset.inputs[dataset.labels == ident].mean(axis=0) for ident in range(dataset.num_identities)]
    )
    rng = substream(seed, "hard")
    positions = np.sort(rng.choice(len(dataset), size=n_move, replace=False))
    w = hard_overlap / (hard_overlap + 1.0)

    new_samples = list(dataset.samples)
    hard_ids = set()
    for pos in positions:
        s = dataset.samples[pos]
        others = [i for i in range(dataset.num_identities) if i != s.true_label]
        foreign = int(rng.choice(others))
        moved = (1.0 - w) * s.input + w * centers[foreign]
        new_samples[pos] = Sample(s.sample_id, moved, s.true_label, s.domain)
        hard_ids.add(s.sample_id)
    return LabeledDataset(new_samples, dataset.num_identities, dataset.dim), hard_ids


def save_dataset(dataset: LabeledDataset, path) -> None:
    """One sample per line: sample_id,domain,true_label,v_1,...,v_d."""
    with open(path, "w") as fh:
        for s in dataset.samples:
            coords = ",".join(repr(float(v)) for v in s.input)
            fh.write(f"{s.sample_id},{s.domain},{s.true_label},{coords}\n")


def load_dataset(path) -> LabeledDataset:
    samples = []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 4:
                raise ConfigurationError(f"{path}:{lineno}: expected id,domain,label,v_1,...")
            sid, domain, label = int(parts[0]), parts[1], int(parts[2])
            vec = np.array([float(p) for p in parts[3:]])
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ConfigurationError(f"{path}:{lineno}: inconsistent dimension")
            samples.append(Sample(sid, vec, label, domain))
    if not samples:
        raise ConfigurationError(f"{path}: empty dataset file")
    num_identities = max(s.true_label for s in samples) + 1
    return LabeledDataset(samples, num_identities, dim)
