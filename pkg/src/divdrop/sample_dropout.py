"""Per-epoch random discarding of a fixed fraction of target samples.

Each epoch keeps a fresh uniform subset of floor((1-rho)*N) samples, drawn
without replacement from a stream keyed by (seed, epoch), so no sample is
ever permanently excluded and any single epoch's selection can be replayed
in isolation.
"""

import math
from dataclasses import dataclass

import numpy as np

from .datagen import LabeledDataset
from .errors import ConfigurationError
from .rngutil import substream


@dataclass
class EpochSelection:
    epoch_index: int
    selected_ids: np.ndarray  # sorted ascending
    dropped_ids: np.ndarray   # sorted ascending
    rho: float


def selected_count(n: int, rho: float) -> int:
    """floor((1-rho)*n), guarded so decimal rhos hit the exact integer:
    1-0.8 is slightly below 0.2 in binary, and a bare floor would lose a
    whole sample at boundaries like rho=0.8, n=100."""
    return int(math.floor((1.0 - rho) * n + 1e-9))


def select_epoch_subset(
    target: LabeledDataset, rho: float, epoch_index: int, seed: int
) -> EpochSelection:
    """Uniform sample of exactly floor((1-rho)*N) target ids for one epoch."""
    if not (0.0 <= rho < 1.0):
        raise ConfigurationError(f"rho must be in [0, 1), got {rho}")
    n = len(target)
    keep = selected_count(n, rho)
    rng = substream(seed, "sd", epoch_index)
    picked = rng.choice(n, size=keep, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[picked] = True
    return EpochSelection(
        epoch_index=epoch_index,
        selected_ids=np.sort(target.ids[mask]),
        dropped_ids=np.sort(target.ids[~mask]),
        rho=rho,
    )
