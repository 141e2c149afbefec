import numpy as np
import pytest

from divdrop.encoder import EncoderParams


def small_encoder(rng: np.random.Generator, sizes=(4, 6, 5), activation="relu") -> EncoderParams:
    weights = [rng.standard_normal((o, i)) * 0.7 for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [rng.standard_normal(o) * 0.1 for o in sizes[1:]]
    return EncoderParams(weights, biases, activation)


def pk_labels(p: int, k: int) -> np.ndarray:
    return np.repeat(np.arange(p), k)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
