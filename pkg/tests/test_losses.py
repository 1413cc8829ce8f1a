import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attacksearch.losses import DLR_GUARD, LossSpec, all_loss_specs, loss_value, softmax


def central_diff(f, z, h=1e-6):
    g = np.zeros_like(z)
    for i in range(len(z)):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def test_seven_losses_enumerated_in_order():
    labels = [s.label for s in all_loss_specs()]
    assert labels == ["CE", "Hinge_logit", "Hinge_prob", "L1_logit", "L1_prob", "DLR_logit", "DLR_prob"]


def test_ce_rejects_logit_mode():
    with pytest.raises(ValueError):
        LossSpec("CE", "logit")


def test_uniform_logits_ce_is_log_k():
    for k in (2, 5, 10):
        v, _ = loss_value(LossSpec("CE"), np.zeros(k), 1)
        assert v == pytest.approx(math.log(k), abs=1e-14)


def test_hinge_saturates_at_minus_kappa():
    spec = LossSpec("Hinge", "logit", kappa=0.5)
    v, g = loss_value(spec, np.array([3.0, 1.0, 0.0]), 0)
    assert v == -0.5
    assert np.all(g == 0)


def test_dlr_hand_value():
    v, _ = loss_value(LossSpec("DLR", "logit"), np.array([3.0, 2.0, 1.0]), 0)
    assert v == pytest.approx(-(3 - 2) / (3 - 1 + DLR_GUARD), abs=1e-15)
    assert v == pytest.approx(-0.5, abs=1e-11)


def test_dlr_needs_three_classes():
    with pytest.raises(ValueError):
        loss_value(LossSpec("DLR", "logit"), np.array([1.0, 0.0]), 0)


def test_dlr_finite_when_top_and_third_tie():
    v, g = loss_value(LossSpec("DLR", "logit"), np.array([1.0, 1.0, 1.0]), 0)
    assert np.isfinite(v) and np.all(np.isfinite(g))


def test_softmax_examples():
    assert np.allclose(softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-15)
    e = [math.exp(1), math.exp(2), math.exp(3)]
    assert np.allclose(softmax(np.array([1.0, 2.0, 3.0])), [x / sum(e) for x in e], rtol=1e-14)
    assert np.allclose(softmax(np.array([7.0, 7.5])), softmax(np.array([0.0, 0.5])), atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12), st.floats(-100, 100))
def test_softmax_normalised_and_shift_invariant(z, c):
    z = np.array(z)
    p = softmax(z)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.allclose(softmax(z + c), p, atol=1e-12)


def test_ce_stable_for_confident_wrong_logits():
    v, g = loss_value(LossSpec("CE"), np.array([0.0, 800.0]), 0)
    assert v == pytest.approx(800.0)
    assert np.all(np.isfinite(g))


@pytest.mark.parametrize("spec", all_loss_specs(), ids=lambda s: s.label)
def test_logit_gradient_matches_finite_differences(spec, rng):
    for _ in range(10):
        z = rng.normal(0, 2, size=6)
        y = int(rng.integers(6))
        _, g = loss_value(spec, z, y)
        fd = central_diff(lambda t: loss_value(spec, t, y)[0], z)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("spec", all_loss_specs(), ids=lambda s: s.label)
def test_targeted_gradient_matches_finite_differences(spec, rng):
    for _ in range(10):
        z = rng.normal(0, 2, size=5)
        y = int(rng.integers(5))
        t = (y + 1 + int(rng.integers(4))) % 5
        _, g = loss_value(spec, z, y, target=t)
        fd = central_diff(lambda u: loss_value(spec, u, y, target=t)[0], z)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_targeted_variants_definitions():
    z = np.array([2.0, 0.5, 1.0])
    assert loss_value(LossSpec("L1", "logit"), z, 0, target=1)[0] == 0.5
    ce_t = loss_value(LossSpec("CE"), z, 0, target=2)[0]
    assert ce_t == pytest.approx(math.log(softmax(z)[2]))
    h = loss_value(LossSpec("Hinge", "logit"), z, 0, target=1)[0]
    assert h == pytest.approx(0.5 - 2.0)
    with pytest.raises(ValueError):
        loss_value(LossSpec("CE"), z, 0, target=0)


def test_batch_matches_rows(rng):
    z = rng.normal(size=(8, 4))
    y = rng.integers(4, size=8)
    for spec in all_loss_specs():
        v, g = loss_value(spec, z, y)
        for i in range(8):
            vi, gi = loss_value(spec, z[i], y[i])
            assert v[i] == vi and np.array_equal(g[i], gi)


@pytest.mark.parametrize("label,kind,mode", [
    ("CE", "CE", "prob"), ("DLR_logit", "DLR", "logit"), ("Hinge_prob", "Hinge", "prob"),
    ("DLR", "DLR", "prob"), ("DLR_P", "DLR", "logit"), ("L1_P", "L1", "logit"),
])
def test_label_parsing(label, kind, mode):
    s = LossSpec.from_label(label)
    assert (s.kind, s.mode) == (kind, mode)


def test_bad_label_rejected():
    with pytest.raises(ValueError):
        LossSpec.from_label("DLR_x")
    with pytest.raises(ValueError):
        LossSpec.from_label("Focal")
