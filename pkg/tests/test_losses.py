import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divdrop.encoder import encode, encoder_backward, softmax
from divdrop.errors import BatchCompositionError, LabelError, NumericError, ShapeError
from divdrop.losses import (
    cross_entropy_loss,
    fdl_loss,
    sigmoid,
    softplus,
    total_loss,
    triplet_loss,
)
from reference import (
    central_difference,
    hardest_triplet_scan,
    relative_grad_error,
    triplet_loss_reference,
)

from conftest import pk_labels


def unit_rows(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ---------------------------------------------------------------- softplus

def test_softplus_at_zero():
    assert softplus(0.0) == pytest.approx(math.log(2.0), abs=1e-12)


def test_softplus_tails():
    assert softplus(-50.0) < 1e-20
    assert softplus(50.0) - 50.0 < 1e-20
    assert np.isfinite(softplus(700.0))


def test_softplus_rejects_non_finite():
    with pytest.raises(NumericError):
        softplus(float("nan"))
    with pytest.raises(NumericError):
        softplus(float("inf"))


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=-600, max_value=600), st.floats(min_value=1e-6, max_value=10))
def test_softplus_positive_and_increasing(x, gap):
    assert softplus(x) > 0
    assert softplus(x + gap) > softplus(x)


def test_sigmoid_is_softplus_derivative():
    for x in (-3.0, -0.5, 0.0, 0.7, 4.0):
        fd = (softplus(x + 1e-6) - softplus(x - 1e-6)) / 2e-6
        assert sigmoid(x) == pytest.approx(fd, abs=1e-9)


# ---------------------------------------------------------------- fdl_loss

def test_fdl_orthogonal_branches(rng):
    f1 = np.eye(4)[:3]
    f2 = np.eye(4)[:3]
    m1 = np.roll(np.eye(4)[:3], 1, axis=1)  # orthogonal to f2 rowwise
    m2 = np.roll(np.eye(4)[:3], 1, axis=1)
    value, _, _ = fdl_loss(f1, f2, m1, m2)
    assert value == pytest.approx(2.0 * math.log(2.0), abs=1e-12)


def test_fdl_aligned_unit_rows(rng):
    f1 = unit_rows(rng, (5, 6))
    f2 = unit_rows(rng, (5, 6))
    value, _, _ = fdl_loss(f1, f2, mean_f1=f2, mean_f2=f1)
    assert value == pytest.approx(2.0 * softplus(1.0), abs=1e-9)


def test_fdl_gradient_matches_fd(rng):
    f1 = rng.standard_normal((4, 5))
    f2 = rng.standard_normal((4, 5))
    m1 = unit_rows(rng, (4, 5))
    m2 = unit_rows(rng, (4, 5))
    _, g1, g2 = fdl_loss(f1, f2, m1, m2)

    numeric = central_difference(lambda: fdl_loss(f1, f2, m1, m2)[0], [f1, f2])
    assert relative_grad_error([g1, g2], numeric) < 1e-5


def test_fdl_monotone_in_cross_dot(rng):
    f1 = unit_rows(rng, (3, 4))
    f2 = unit_rows(rng, (3, 4))
    m1 = unit_rows(rng, (3, 4))
    m2 = unit_rows(rng, (3, 4))
    base, _, _ = fdl_loss(f1, f2, m1, m2)
    bumped = f1 + 0.05 * m2  # raises every f1_i . mean_f2_i
    higher, _, _ = fdl_loss(bumped, f2, m1, m2)
    assert higher > base


def test_fdl_shape_mismatch():
    with pytest.raises(ShapeError):
        fdl_loss(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((3, 3)))


# ------------------------------------------------------------ cross entropy

def test_ce_perfect_prediction_zero():
    probs = np.eye(4)[[0, 1, 2]]
    # exact ones: value is -log(1) = 0
    value, g1, g2 = cross_entropy_loss(probs, probs, [0, 1, 2])
    assert value == 0.0


def test_ce_uniform_value():
    k = 7
    probs = np.full((5, k), 1.0 / k)
    value, _, _ = cross_entropy_loss(probs, probs, [0, 3, 6, 2, 1])
    assert value == pytest.approx(2.0 * math.log(k), abs=1e-12)


def test_ce_gradient_matches_fd(rng):
    z1 = rng.standard_normal((6, 5))
    z2 = rng.standard_normal((6, 5))
    labels = rng.integers(0, 5, size=6)

    def value():
        v, _, _ = cross_entropy_loss(softmax(z1), softmax(z2), labels)
        return v

    _, g1, g2 = cross_entropy_loss(softmax(z1), softmax(z2), labels)
    numeric = central_difference(value, [z1, z2])
    assert relative_grad_error([g1, g2], numeric) < 1e-5


def test_ce_label_out_of_range():
    probs = np.full((2, 3), 1 / 3)
    with pytest.raises(LabelError):
        cross_entropy_loss(probs, probs, [0, 3])


# ---------------------------------------------------------------- triplet

def test_triplet_hinge_inactive():
    # anchor 0 geometry: d_p^2 = 0.1, d_n^2 = 0.5 -> [0.3 + 0.1 - 0.5]_+ = 0
    from reference import hardest_triplet_scan

    feats = np.array([[0.0, 0.0], [math.sqrt(0.1), 0.0], [0.0, math.sqrt(0.5)], [0.0, 9.0]])
    labels = np.array([0, 0, 1, 1])
    _, dp2, _, dn2 = hardest_triplet_scan(feats, labels, 0)
    assert dp2 == pytest.approx(0.1) and dn2 == pytest.approx(0.5)
    assert max(0.3 + dp2 - dn2, 0.0) == 0.0
    value, _ = triplet_loss(feats, labels, tau=0.3)
    assert value == pytest.approx(triplet_loss_reference(feats, labels, 0.3), abs=1e-12)


def test_triplet_hinge_arithmetic():
    # isolate a single active anchor: d_p^2 = 0.4, d_n^2 = 0.5 -> 0.2
    a = np.zeros(2)
    p = np.array([math.sqrt(0.4), 0.0])
    n = np.array([0.0, math.sqrt(0.5)])
    far = np.array([50.0, 50.0])  # second identity's far member
    feats = np.stack([a, p, n, far])
    labels = np.array([0, 0, 1, 1])
    value, _ = triplet_loss(feats, labels, tau=0.3)
    # anchor a: 0.3+0.4-0.5=0.2; anchor p: 0.3+0.4-d(p,n)^2=0.3+0.4-0.9=-0.2 -> 0
    # anchor n: positives {far}: d^2 huge -> hinge huge? check by reference instead
    expected = triplet_loss_reference(feats, labels, 0.3)
    assert value == pytest.approx(expected, abs=1e-12)
    anchor0 = max(0.3 + 0.4 - 0.5, 0.0)
    assert anchor0 == pytest.approx(0.2)


def test_triplet_matches_bruteforce_on_pk_batch(rng):
    feats = rng.standard_normal((60, 8))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    labels = pk_labels(15, 4)
    value, _ = triplet_loss(feats, labels, tau=0.3)
    assert value == pytest.approx(triplet_loss_reference(feats, labels, 0.3), abs=1e-12)


def test_triplet_selection_matches_bruteforce(rng):
    feats = rng.standard_normal((20, 5))
    labels = pk_labels(5, 4)
    # re-derive the implementation's choices from its gradient structure:
    # perturbing the hardest positive/negative changes the loss, others do not
    for a in range(20):
        p, dp2, n, dn2 = hardest_triplet_scan(feats, labels, a)
        hinge = 0.3 + dp2 - dn2
        value, grad = triplet_loss(feats, labels, 0.3)
        if hinge > 0:
            assert np.any(grad[p] != 0) or np.any(grad[n] != 0) or np.any(grad[a] != 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_triplet_equals_reference_property(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(2, 6))
    k = int(rng.integers(2, 5))
    feats = rng.standard_normal((p * k, 4))
    labels = pk_labels(p, k)
    value, _ = triplet_loss(feats, labels, 0.3)
    assert value == pytest.approx(triplet_loss_reference(feats, labels, 0.3), abs=1e-12)


def test_triplet_gradient_matches_fd(rng):
    feats = rng.standard_normal((12, 5))
    labels = pk_labels(3, 4)
    value, grad = triplet_loss(feats, labels, 0.3)
    numeric = central_difference(lambda: triplet_loss(feats, labels, 0.3)[0], [feats])
    assert relative_grad_error([grad], numeric) < 1e-5


def test_triplet_missing_positive_or_negative():
    feats = np.zeros((3, 2))
    with pytest.raises(BatchCompositionError):
        triplet_loss(feats, [0, 1, 2], 0.3)  # no positives
    with pytest.raises(BatchCompositionError):
        triplet_loss(feats, [0, 0, 0], 0.3)  # no negatives


def test_triplet_nonnegative(rng):
    feats = rng.standard_normal((16, 6))
    value, _ = triplet_loss(feats, pk_labels(4, 4), 0.3)
    assert value >= 0.0


# ------------------------------------------------------------------ total

def test_total_arithmetic():
    bd = total_loss(2.0, 1.0, 0.4, beta=1.0, gamma=1.0, delta=0.5)
    assert bd.total == pytest.approx(3.2, abs=1e-12)


def test_total_delta_zero_ignores_fdl():
    a = total_loss(2.0, 1.0, 0.4, 1.0, 1.0, 0.0)
    b = total_loss(2.0, 1.0, 123.0, 1.0, 1.0, 0.0)
    assert a.total == b.total


def test_total_gradient_is_weighted_sum(rng):
    g_ce = rng.standard_normal((4, 3))
    g_tri = rng.standard_normal((4, 3))
    g_fdl = rng.standard_normal((4, 3))
    beta, gamma, delta = 1.0, 1.0, 0.5
    combined = beta * g_ce + gamma * g_tri + delta * g_fdl
    assert np.allclose(combined, g_ce + g_tri + 0.5 * g_fdl, atol=1e-12)


def test_total_rejects_non_finite():
    with pytest.raises(NumericError):
        total_loss(1.0, 1.0, 1.0, float("inf"), 1.0, 0.5)


# ------------------------------------------- losses composed with encoder

def test_fdl_through_encoder_matches_fd(rng):
    from conftest import small_encoder

    enc = small_encoder(rng)
    x = rng.standard_normal((6, 4))
    f2 = unit_rows(rng, (6, 5))
    m1 = unit_rows(rng, (6, 5))
    m2 = unit_rows(rng, (6, 5))

    feats, cache = encode(enc, x)
    _, g1, _ = fdl_loss(feats, f2, m1, m2)
    gw, gb = encoder_backward(enc, cache, g1)

    def scalar():
        f, _ = encode(enc, x)
        return fdl_loss(f, f2, m1, m2)[0]

    numeric = central_difference(scalar, enc.weights + enc.biases)
    assert relative_grad_error(gw + gb, numeric) < 1e-5
