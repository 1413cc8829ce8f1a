import numpy as np
import pytest

from attacksearch.attacks import pgd
from attacksearch.diffmodel import (
    Classifier, Dataset, TrainConfig, TrainingDivergedError, accuracy, forward, input_gradient,
    make_desk_dataset, train_adversarial, train_standard,
)
from attacksearch.losses import LossSpec, all_loss_specs

from conftest import random_net


def naive_forward(model, x):
    h = list(x)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        out = []
        for j in range(w.shape[1]):
            s = b[j]
            for k in range(w.shape[0]):
                s += h[k] * w[k, j]
            out.append(s)
        if i < len(model.weights) - 1:
            act = model.activations[i]
            out = [np.tanh(v) if act == "tanh" else (np.logaddexp(0, v) if act == "softplus" else max(v, 0.0))
                   for v in out]
        h = out
    return np.array(h)


def test_zero_weights_give_zero_logits():
    m = Classifier([4, 3, 2], [np.zeros((4, 3)), np.zeros((3, 2))], [np.zeros(3), np.zeros(2)])
    assert np.array_equal(forward(m, np.random.default_rng(0).random((5, 4))), np.zeros((5, 2)))


def test_identity_layer():
    m = Classifier([3, 3], [np.eye(3)], [np.zeros(3)])
    assert np.array_equal(forward(m, np.array([[1.0, 0.0, 0.0]])), [[1.0, 0.0, 0.0]])


@pytest.mark.parametrize("activation", ["tanh", "softplus", "relu"])
def test_forward_matches_naive_loops(activation, rng):
    m = random_net(3, dims=(5, 6, 4, 3), activation=activation)
    x = rng.random((4, 5))
    out = forward(m, x)
    for i in range(4):
        assert np.allclose(out[i], naive_forward(m, x[i]), rtol=1e-13, atol=1e-13)


def test_dimension_mismatch_rejected():
    m = random_net(0)
    with pytest.raises(ValueError, match="columns"):
        forward(m, np.zeros((2, 5)))


def test_linear_l1_gradient_is_minus_weight_row():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(4, 3))
    m = Classifier([4, 3], [w], [np.zeros(3)])
    g = input_gradient(m, rng.random(4), 2, LossSpec("L1", "logit"))
    assert np.allclose(g, -w[:, 2], rtol=0, atol=0)


def fd_input_gradient(model, x, y, spec, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        from attacksearch.diffmodel import value_and_input_gradient
        fp = value_and_input_gradient(model, x + e, y, spec)[0]
        fm = value_and_input_gradient(model, x - e, y, spec)[0]
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b):
    # the floor keeps exactly-zero gradients (e.g. a constant DLR ratio) from dividing by round-off
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-6)


@pytest.mark.parametrize("spec", all_loss_specs(), ids=lambda s: s.label)
def test_input_gradient_matches_finite_differences(spec):
    for seed in range(5):
        m = random_net(seed, activation="softplus" if seed % 2 else "tanh")
        r = np.random.default_rng(seed)
        x = r.random(6)
        y = int(r.integers(5))
        assert relative_error(input_gradient(m, x, y, spec), fd_input_gradient(m, x, y, spec)) <= 1e-5


def test_gradient_respects_class_permutation():
    base = random_net(11, dims=(4, 6, 4))
    perm = np.array([2, 0, 3, 1])
    permuted = base.copy()
    permuted.weights[-1] = base.weights[-1][:, perm]
    permuted.biases[-1] = base.biases[-1][perm]
    x = np.zeros(4)
    for spec in all_loss_specs():
        for y in range(4):
            y_perm = int(np.flatnonzero(perm == y)[0])
            assert np.allclose(input_gradient(base, x, y, spec), input_gradient(permuted, x, y_perm, spec),
                               rtol=1e-12, atol=1e-14)


def test_dlr_gradient_rejects_two_classes():
    m = random_net(0, dims=(3, 2))
    with pytest.raises(ValueError):
        input_gradient(m, np.zeros(3), 0, LossSpec("DLR", "logit"))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.array([[1.5]]), np.array([0]), "test", 2)
    with pytest.raises(ValueError):
        Dataset(np.array([[0.5]]), np.array([2]), "test", 2)


def test_desk_dataset_contract():
    train, test = make_desk_dataset(seed=4)
    assert train.dim == 64 and train.n_classes == 10 and len(train) == 2000 and len(test) == 500
    assert train.images.min() >= 0 and train.images.max() <= 1
    counts = np.bincount(train.labels, minlength=10)
    assert counts.min() >= 0.9 * 200 and counts.max() <= 1.1 * 200
    again, _ = make_desk_dataset(seed=4)
    assert np.array_equal(again.images, train.images)


def blobs(n, seed):
    r = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = np.where(y[:, None] == 1, 0.75, 0.25) + 0.05 * r.standard_normal((n, 4))
    return Dataset(np.clip(x, 0, 1), y, "train", 2)


def test_separable_blobs_learned():
    m = train_standard(blobs(400, 0), TrainConfig(epochs=20, hidden=(8,)))
    assert accuracy(m, blobs(200, 1)) >= 0.99


def test_zero_epochs_returns_initialisation():
    data = blobs(50, 0)
    m = train_standard(data, TrainConfig(epochs=0, hidden=(8,), seed=3))
    init = Classifier.initialize([4, 8, 2], "tanh", seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(m.parameters(), init.parameters()))


def test_training_is_deterministic():
    data = blobs(200, 0)
    cfg = TrainConfig(epochs=3, hidden=(8,), seed=9)
    a, b = train_standard(data, cfg), train_standard(data, cfg)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    cfg = TrainConfig(epochs=2, hidden=(8,), seed=9, adversarial=True, at_epsilon=0.05)
    a, b = train_adversarial(data, cfg), train_adversarial(data, cfg)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_zero_inner_steps_equals_standard_training():
    data = blobs(200, 0)
    std = train_standard(data, TrainConfig(epochs=3, hidden=(8,)))
    at = train_adversarial(data, TrainConfig(epochs=3, hidden=(8,), adversarial=True, at_steps=0))
    assert all(np.array_equal(p, q) for p, q in zip(std.parameters(), at.parameters()))


def test_divergence_is_reported():
    data = blobs(200, 0)
    with pytest.raises(TrainingDivergedError):
        with np.errstate(all="ignore"):
            train_standard(data, TrainConfig(epochs=3, learning_rate=1e300, activation="relu", hidden=(8,)))


def test_parameters_finite_after_training(std_victim):
    assert std_victim.is_finite()


def test_clean_accuracy_floor(desk, std_victim):
    assert accuracy(std_victim, desk[1]) >= 0.9


def test_adversarial_training_raises_pgd_robustness(desk, std_victim, at_victim):
    test = desk[1]

    def ra(m):
        adv = pgd(m, test.images, test.labels, LossSpec("CE"), 0.031, "linf", 20).x
        return accuracy(m, Dataset(adv, test.labels, "test", 10))

    assert ra(at_victim) > ra(std_victim)
    assert accuracy(at_victim, test) <= accuracy(std_victim, test)
