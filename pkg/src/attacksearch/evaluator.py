"""Objectives and the two-fidelity evaluation scheme.

The accurate evaluator runs a sequence on the whole evaluation set.  The
rough evaluator runs it on a small representative subset: images are sorted
by clean cross-entropy loss (descending) and every ``N/m``-th one is kept, so
the subset spans easy and hard images alike.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .diffmodel import Classifier, Dataset, forward
from .losses import LossSpec, loss_value
from .sequence import AttackSequence, ExecutionOptions, ExecutionTrace, encode, execute

SELECTION_METHODS = ("loss_sorted", "random")


@dataclass(frozen=True)
class EvalOutcome:
    n_correct: int
    n_total: int
    cost_units: int
    wall_clock: float = 0.0
    evaluator: str = "accurate"

    @property
    def robust_accuracy(self) -> float:
        return self.n_correct / self.n_total

    @property
    def robust_accuracy_exact(self) -> Fraction:
        return Fraction(self.n_correct, self.n_total)

    @property
    def objectives(self) -> tuple[float, int]:
        return (self.robust_accuracy, self.cost_units)

    def key(self) -> tuple[float, int]:
        """Lexicographic order used by local search: lower RA first, then lower cost."""
        return (self.robust_accuracy, self.cost_units)


def robust_accuracy(trace: ExecutionTrace) -> float:
    """Fraction of images still correctly classified after the attack."""
    if trace.n_total == 0:
        raise ValueError("robust accuracy of an empty dataset is undefined")
    return trace.n_correct / trace.n_total


def cost(trace: ExecutionTrace) -> int:
    """Gradient evaluations spent over all (image, executed cell) pairs."""
    return int(trace.grad_evals.sum())


@dataclass(frozen=True)
class RoughEvaluator:
    """The representative subset backing a rough evaluator."""

    indices: tuple[int, ...]
    model_id: str = ""
    method: str = "loss_sorted"

    def __post_init__(self) -> None:
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("subset indices must be distinct")

    def __len__(self) -> int:
        return len(self.indices)


def clean_losses(model: Classifier, data: Dataset) -> np.ndarray:
    value, _ = loss_value(LossSpec("CE", "prob"), forward(model, data.images), data.labels)
    return np.asarray(value)


def select_representative(data: Dataset, model: Classifier, m: int = 36,
                          method: str = "loss_sorted", seed: int = 0) -> RoughEvaluator:
    """Pick ``m`` images for the rough evaluator.

    ``loss_sorted`` sorts by clean CE loss, largest first, and keeps sorted
    positions ``floor(i * N / m)``.  ``random`` draws ``m`` distinct indices.
    """
    n = len(data)
    if not 1 <= m <= n:
        raise ValueError(f"subset size {m} must lie in [1, {n}]")
    if method == "loss_sorted":
        order = np.argsort(-clean_losses(model, data), kind="stable")
        idx = order[(np.arange(m) * n) // m]
    elif method == "random":
        idx = np.random.default_rng([seed, 7]).choice(n, size=m, replace=False)
    else:
        raise ValueError(f"unknown selection method {method!r}; expected one of {SELECTION_METHODS}")
    from .model_io import model_fingerprint

    return RoughEvaluator(tuple(int(i) for i in idx), model_fingerprint(model), method)


@dataclass
class Evaluator:
    """Evaluates sequences on a fixed (model, image set), caching by design vector."""

    model: Classifier
    data: Dataset
    ids: np.ndarray
    tag: str = "accurate"
    options: ExecutionOptions = field(default_factory=ExecutionOptions)
    cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def accurate(cls, model: Classifier, data: Dataset, options: ExecutionOptions | None = None):
        return cls(model, data, np.arange(len(data)), "accurate", options or ExecutionOptions())

    @classmethod
    def rough(cls, model: Classifier, data: Dataset, subset: RoughEvaluator,
              options: ExecutionOptions | None = None):
        idx = np.asarray(subset.indices, dtype=np.int64)
        return cls(model, data.subset(idx), idx, "rough", options or ExecutionOptions())

    def __len__(self) -> int:
        return len(self.data)

    @property
    def n_evaluations(self) -> int:
        return len(self.cache)

    def trace(self, seq: AttackSequence) -> ExecutionTrace:
        return execute(seq, self.model, self.data, ids=self.ids, options=self.options)

    def evaluate(self, seq: AttackSequence) -> EvalOutcome:
        key = (seq.space, encode(seq))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        t0 = time.perf_counter()
        tr = self.trace(seq)
        outcome = EvalOutcome(tr.n_correct, tr.n_total, cost(tr), time.perf_counter() - t0, self.tag)
        self.cache[key] = outcome
        return outcome

    def clean_accuracy(self) -> float:
        return float((self.model.predict(self.data.images) == self.data.labels).mean())


def evaluate(seq: AttackSequence, evaluator: Evaluator) -> EvalOutcome:
    return evaluator.evaluate(seq)


def kendall_tau(rank_a, rank_b) -> float:
    """Kendall's tau-b by pair enumeration (equals tau-a when there are no ties)."""
    a = np.asarray(rank_a, dtype=np.float64)
    b = np.asarray(rank_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("rankings must be 1-d and of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two items to rank")
    da = np.sign(a[:, None] - a[None, :])
    db = np.sign(b[:, None] - b[None, :])
    iu = np.triu_indices(n, 1)
    da, db = da[iu], db[iu]
    s = float((da * db).sum())
    pairs_a = float(np.count_nonzero(da))
    pairs_b = float(np.count_nonzero(db))
    if pairs_a == 0 or pairs_b == 0:
        return float("nan")
    return s / np.sqrt(pairs_a * pairs_b)


REPORT_COLUMNS = ("sequence_id", "robust_accuracy", "cost_units", "wall_clock", "evaluator")


def outcomes_to_csv(rows) -> str:
    """CSV text for ``(sequence_id, EvalOutcome)`` pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for seq_id, o in rows:
        w.writerow([seq_id, repr(o.robust_accuracy), o.cost_units, f"{o.wall_clock:.6f}", o.evaluator])
    return buf.getvalue()


def restart_ablation(seq: AttackSequence, evaluator: Evaluator) -> list[tuple[tuple[int, ...], EvalOutcome]]:
    """Evaluate ``seq`` under every restart configuration, in enumeration order."""
    from .sequence import restart_configurations

    return [(cfg, evaluator.evaluate(seq.with_restarts(cfg))) for cfg in restart_configurations(len(seq))]


@dataclass
class RankFidelity:
    seed: int
    tau_ra_sorted: float
    tau_ra_random: float
    tau_cost_sorted: float
    tau_cost_random: float
    accurate: list = field(default_factory=list)
    rough_sorted: list = field(default_factory=list)
    rough_random: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def rows(outs):
            return [{"robust_accuracy": o.robust_accuracy, "cost_units": o.cost_units} for o in outs]

        return {
            "seed": self.seed,
            "tau_ra_loss_sorted": self.tau_ra_sorted,
            "tau_ra_random": self.tau_ra_random,
            "tau_cost_loss_sorted": self.tau_cost_sorted,
            "tau_cost_random": self.tau_cost_random,
            "accurate": rows(self.accurate),
            "rough_loss_sorted": rows(self.rough_sorted),
            "rough_random": rows(self.rough_random),
        }


def rank_fidelity(model: Classifier, data: Dataset, space, n_attacks: int = 20, m: int = 36,
                  seed: int = 0, options: ExecutionOptions | None = None) -> RankFidelity:
    """Rank ``n_attacks`` random sequences on rough and accurate evaluators.

    Sequences are sampled as in population initialisation (maximum
    magnitudes).  One rough evaluator uses the loss-sorted subset, the other
    a random subset of the same size; both are compared with the accurate
    ranking through Kendall's tau on RA and on cost.
    """
    from .search import random_vector
    from .sequence import decode

    options = ExecutionOptions(seed=seed) if options is None else options
    rng = np.random.default_rng([seed, 11])
    seqs = [decode(random_vector(space, rng), space) for _ in range(n_attacks)]
    acc = Evaluator.accurate(model, data, options)
    srt = Evaluator.rough(model, data, select_representative(data, model, m, "loss_sorted", seed), options)
    rnd = Evaluator.rough(model, data, select_representative(data, model, m, "random", seed), options)
    a = [acc.evaluate(s) for s in seqs]
    r1 = [srt.evaluate(s) for s in seqs]
    r2 = [rnd.evaluate(s) for s in seqs]

    def tau(x, z, attr):
        return kendall_tau([getattr(o, attr) for o in x], [getattr(o, attr) for o in z])

    return RankFidelity(seed, tau(a, r1, "robust_accuracy"), tau(a, r2, "robust_accuracy"),
                        tau(a, r1, "cost_units"), tau(a, r2, "cost_units"), a, r1, r2)
