from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import kendalltau

from attacksearch.attacks import AttackOp
from attacksearch.diffmodel import Dataset, accuracy
from attacksearch.evaluator import (
    REPORT_COLUMNS, EvalOutcome, Evaluator, RoughEvaluator, clean_losses, cost, kendall_tau, outcomes_to_csv,
    robust_accuracy, select_representative,
)
from attacksearch.sequence import ExecutionOptions, SearchSpace, decode, execute, parse_listing

from conftest import random_net

LINF = SearchSpace.for_norm("linf")


def test_robust_accuracy_is_exact():
    o = EvalOutcome(253, 500, 0)
    assert o.robust_accuracy == 0.506
    assert o.robust_accuracy_exact == Fraction(253, 500)
    assert o.robust_accuracy * o.n_total == 253


@pytest.fixture(scope="module")
def case():
    m = random_net(2, dims=(6, 8, 4), scale=2.5)
    x = np.random.default_rng(0).uniform(0.2, 0.8, size=(60, 6))
    y = m.predict(x)
    y[:5] = (y[:5] + 1) % 4
    return m, Dataset(x, y, "test", 4)


def test_all_fooled_gives_zero():
    w = np.zeros((2, 3))
    from attacksearch.diffmodel import Classifier

    m = Classifier([2, 3], [w], [np.array([0.0, 5.0, 0.0])])
    data = Dataset(np.full((4, 2), 0.5), np.zeros(4, int), "test", 3)
    tr = execute(decode([1, 1, 8, 1, 0], LINF), m, data)
    assert robust_accuracy(tr) == 0.0 and cost(tr) == 0


def test_identity_attack_gives_clean_accuracy(case):
    m, data = case
    zero = SearchSpace("linf", 0.0)
    seq = parse_listing("'A': PGD-LinfAttack, 'L': CE, 'M': 0, 'I': 50, 'R': 0", zero)
    assert robust_accuracy(execute(seq, m, data)) == accuracy(m, data)
    sub = select_representative(data, m, 12)
    assert Evaluator.rough(m, data, sub).evaluate(seq).robust_accuracy == accuracy(m, data.subset(list(sub.indices)))


def test_empty_trace_rejected(case):
    m, data = case
    with pytest.raises(ValueError):
        robust_accuracy(execute(decode([1, 1, 8, 1, 0], LINF), m, data.subset([])))


def test_fgsm_and_pgd_cost(case):
    m, data = case
    correct = np.flatnonzero(m.predict(data.images) == data.labels)
    d = data.subset(correct)
    fg = LINF.ops.index(AttackOp("FGSM", "linf")) + 1
    pg = LINF.ops.index(AttackOp("PGD", "linf")) + 1
    assert cost(execute(decode([fg, 1, 8, 1, 0], LINF), m, d)) == len(d)
    assert cost(execute(decode([pg, 1, 8, 4, 0], LINF), m, d)) == 100 * len(d)


def test_cost_counts_only_survivors():
    # class-0 logit 4 * x0 - 2 against 0: cell 1 fools the two images near x0 = 0.5,
    # so cell 2 is charged on the other two only
    from attacksearch.diffmodel import Classifier

    w = np.array([[4.0, 0.0], [0.0, 0.0]])
    m = Classifier([2, 2], [w], [np.array([-2.0, 0.0])])
    x = np.array([[0.51, 0.5], [0.52, 0.5], [0.9, 0.5], [0.95, 0.5]])
    data = Dataset(x, np.zeros(4, int), "test", 2)
    space = SearchSpace("linf", 0.05, max_iters=8)
    fg = space.ops.index(AttackOp("FGSM", "linf")) + 1
    pg = space.ops.index(AttackOp("PGD", "linf")) + 1
    seq = decode([fg, 1, 8, 1, 0, pg, 1, 8, 3, 0], space)
    tr = execute(seq, m, data)
    assert tr.first_fool[:2].tolist() == [1, 1]
    assert cost(tr) == 4 * 1 + 2 * 3
    assert tr.grad_evals.tolist() == [1, 1, 4, 4]


def test_selection_positions():
    m = random_net(4, dims=(6, 8, 4))
    x = np.random.default_rng(1).random((360, 6))
    data = Dataset(x, m.predict(x), "test", 4)
    order = np.argsort(-clean_losses(m, data), kind="stable")
    sub = select_representative(data, m, 36)
    assert list(sub.indices) == [int(order[p]) for p in range(0, 360, 10)]
    assert int(order[0]) in sub.indices and int(order[350]) in sub.indices
    whole = select_representative(data, m, 360)
    assert sorted(whole.indices) == list(range(360))
    with pytest.raises(ValueError):
        select_representative(data, m, 361)


def test_random_selection_distinct_and_seeded(case):
    m, data = case
    a = select_representative(data, m, 20, "random", seed=3)
    b = select_representative(data, m, 20, "random", seed=3)
    assert a == b and len(set(a.indices)) == 20


def test_rough_evaluator_requires_distinct_indices():
    with pytest.raises(ValueError):
        RoughEvaluator((1, 1, 2))


def test_evaluate_is_deterministic_and_cached(case):
    m, data = case
    seq = decode([2, 1, 8, 2, 0, 4, 6, 8, 1, 1], LINF)
    ev = Evaluator.accurate(m, data, ExecutionOptions(seed=4))
    a = ev.evaluate(seq)
    fresh = Evaluator.accurate(m, data, ExecutionOptions(seed=4)).evaluate(seq)
    assert (a.n_correct, a.cost_units) == (fresh.n_correct, fresh.cost_units)
    assert ev.evaluate(seq) is a and ev.n_evaluations == 1


def test_rough_subset_uses_stable_image_ids(case):
    m, data = case
    seq = decode([2, 1, 8, 2, 0], LINF)
    sub = select_representative(data, m, 15)
    acc_tr = Evaluator.accurate(m, data).trace(seq)
    rough_tr = Evaluator.rough(m, data, sub).trace(seq)
    assert np.array_equal(rough_tr.adversarial, acc_tr.adversarial[list(sub.indices)])


def test_kendall_examples():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        kendall_tau([1], [1])


def test_kendall_matches_scipy_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 25))
        a = rng.integers(0, 5, size=n)
        b = rng.integers(0, 5, size=n)
        ours = kendall_tau(a, b)
        ref = kendalltau(a, b).statistic
        if np.isnan(ref):
            assert np.isnan(ours)
        else:
            assert ours == pytest.approx(ref, abs=1e-12)
            assert kendall_tau(b, a) == pytest.approx(ours, abs=1e-15)


def test_csv_export():
    text = outcomes_to_csv([("s1", EvalOutcome(3, 4, 10, 0.5, "rough"))])
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert lines[1] == "s1,0.75,10,0.500000,rough"
