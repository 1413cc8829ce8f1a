"""Attack cells, attack sequences and their execution.

A sequence is an ordered list of at most ``max_cells`` cells.  Each cell
carries five integer genes (operation, loss, magnitude level, iteration
level, restart); the flat concatenation of those genes is the design vector
the optimizer works on.

Execution is per image with skip-on-success: once an image is misclassified
no later cell touches it.  The restart gene picks a cell's input: 0 means the
clean image, ``r > 0`` means the output of cell ``r`` for that image.  So
``[0, 0, 0]`` chains like AutoAttack and ``[0, 1, 2]`` chains each cell on
its predecessor's output.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import (
    AttackOp,
    analytic_grad_evals,
    operations,
    perturbation_norm,
    project,
    run_operator,
)
from .diffmodel import Classifier, Dataset
from .losses import DEFAULT_KAPPA, LossSpec, all_loss_specs

GENES_PER_CELL = 5
DEFAULT_EPS_MAX = {"linf": 0.031, "l2": 0.5}
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SearchSpace:
    """Discretisation of the attack design space for one norm family."""

    norm: str = "linf"
    eps_max: float = 0.031
    max_iters: int = 200
    max_cells: int = 4
    n_eps: int = 8
    n_step: int = 8
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self) -> None:
        if self.norm not in DEFAULT_EPS_MAX:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.eps_max < 0 or self.max_iters < 1:
            raise ValueError("eps_max must be non-negative and max_iters >= 1")
        if min(self.max_cells, self.n_eps, self.n_step) < 1:
            raise ValueError("max_cells, n_eps and n_step must be positive")

    @classmethod
    def for_norm(cls, norm: str, **kwargs) -> "SearchSpace":
        kwargs.setdefault("eps_max", DEFAULT_EPS_MAX[norm])
        return cls(norm=norm, **kwargs)

    @property
    def ops(self) -> list[AttackOp]:
        return operations(self.norm)

    @property
    def losses(self) -> list[LossSpec]:
        return all_loss_specs(self.kappa)

    @property
    def n_attacker(self) -> int:
        return len(self.ops)

    @property
    def n_loss(self) -> int:
        return len(self.losses)

    def magnitude(self, level: int) -> float:
        return level / self.n_eps * self.eps_max

    def iterations(self, level: int) -> int:
        return max(1, int(round(level / self.n_step * self.max_iters)))

    def gene_bounds(self) -> list[tuple[int, int]]:
        """Inclusive (low, high) bounds of the five genes of one cell."""
        return [
            (1, self.n_attacker),
            (1, self.n_loss),
            (1, self.n_eps),
            (1, self.n_step),
            (0, self.max_cells - 1),
        ]

    def to_dict(self) -> dict:
        return {
            "norm": self.norm,
            "eps_max": self.eps_max,
            "max_iters": self.max_iters,
            "max_cells": self.max_cells,
            "n_eps": self.n_eps,
            "n_step": self.n_step,
        }


@dataclass(frozen=True)
class AttackCell:
    op: AttackOp
    loss: LossSpec
    magnitude: int
    iteration: int
    restart: int = 0

    def with_(self, **changes) -> "AttackCell":
        return replace(self, **changes)


@dataclass(frozen=True)
class AttackSequence:
    cells: tuple[AttackCell, ...]
    space: SearchSpace = field(default_factory=SearchSpace)

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", tuple(self.cells))

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def norm(self) -> str:
        return self.space.norm

    @property
    def eps_max(self) -> float:
        return self.space.eps_max

    @property
    def restarts(self) -> list[int]:
        return [c.restart for c in self.cells]

    def eps(self, k: int) -> float:
        """Decoded magnitude of cell ``k`` (0-based)."""
        return self.space.magnitude(self.cells[k].magnitude)

    def iters(self, k: int) -> int:
        """Decoded iteration count of cell ``k`` (the grid value)."""
        return self.space.iterations(self.cells[k].iteration)

    def with_restarts(self, restarts) -> "AttackSequence":
        cells = [c.with_(restart=int(r)) for c, r in zip(self.cells, restarts)]
        return AttackSequence(tuple(cells), self.space)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            **self.space.to_dict(),
            "cells": [
                {
                    "A": c.op.name,
                    "L": c.loss.label,
                    "M": self.eps(k),
                    "I": self.iters(k),
                    "R": c.restart,
                }
                for k, c in enumerate(self.cells)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def listing(self) -> str:
        """One-line A/L/M/I/R rendering; CW cells omit the loss they ignore."""
        parts = []
        for k, c in enumerate(self.cells):
            loss = f"'L': {c.loss.label}, " if c.op.uses_loss else ""
            parts.append(
                f"'A': {c.op.name}, {loss}'M': {round(self.eps(k), 4)}, "
                f"'I': {self.iters(k)}, 'R': {c.restart}"
            )
        return "; ".join(parts)


# ---------------------------------------------------------------- encoding


def validate_vector(v, space: SearchSpace) -> list[str]:
    """Range violations of a raw design vector (restarts up to ``max_cells - 1``)."""
    v = list(v)
    problems = []
    if len(v) == 0 or len(v) % GENES_PER_CELL:
        return [f"length {len(v)} is not a positive multiple of {GENES_PER_CELL}"]
    if len(v) // GENES_PER_CELL > space.max_cells:
        problems.append(f"length {len(v) // GENES_PER_CELL} cells exceeds max_cells={space.max_cells}")
    names = ("operation", "loss", "magnitude", "iteration", "restart")
    bounds = space.gene_bounds()
    for i, value in enumerate(v):
        lo, hi = bounds[i % GENES_PER_CELL]
        if int(value) != value or not lo <= value <= hi:
            problems.append(
                f"entry {i} ({names[i % GENES_PER_CELL]} of cell {i // GENES_PER_CELL + 1}) "
                f"= {value} outside [{lo}, {hi}]"
            )
    return problems


def decode(v, space: SearchSpace) -> AttackSequence:
    """Design vector -> sequence.  Restart genes are repaired to ``r mod k``."""
    problems = validate_vector(v, space)
    if problems:
        raise ValueError("invalid design vector: " + "; ".join(problems))
    ops, losses = space.ops, space.losses
    cells = []
    for k in range(len(v) // GENES_PER_CELL):
        a, l, m, s, r = (int(g) for g in v[GENES_PER_CELL * k:GENES_PER_CELL * (k + 1)])
        cells.append(AttackCell(ops[a - 1], losses[l - 1], m, s, r % (k + 1)))
    return AttackSequence(tuple(cells), space)


def encode(seq: AttackSequence, space: SearchSpace | None = None) -> tuple[int, ...]:
    space = seq.space if space is None else space
    problems = validate(seq, space)
    if problems:
        raise ValueError("sequence not valid in space: " + "; ".join(problems))
    ops = space.ops
    labels = [s.label for s in space.losses]
    v = []
    for c in seq.cells:
        v += [ops.index(c.op) + 1, labels.index(c.loss.label) + 1, c.magnitude, c.iteration, c.restart]
    return tuple(v)


def validate(seq: AttackSequence, space: SearchSpace | None = None) -> list[str]:
    """All reasons ``seq`` cannot be encoded in ``space``; empty when valid."""
    space = seq.space if space is None else space
    problems = []
    n = len(seq.cells)
    if n == 0:
        problems.append("sequence has no cells")
    if n > space.max_cells:
        problems.append(f"length {n} exceeds max_cells={space.max_cells}")
    if seq.space.norm != space.norm:
        problems.append(f"norm {seq.space.norm} differs from search space norm {space.norm}")
    labels = [s.label for s in space.losses]
    for k, c in enumerate(seq.cells, start=1):
        if c.op not in space.ops:
            problems.append(f"cell {k}: operation {c.op.name} not in the {space.norm} search space")
        if c.loss.label not in labels:
            problems.append(f"cell {k}: loss {c.loss.label} not in search space")
        if not 1 <= c.magnitude <= space.n_eps:
            problems.append(f"cell {k}: magnitude level {c.magnitude} outside [1, {space.n_eps}]")
        if not 1 <= c.iteration <= space.n_step:
            problems.append(f"cell {k}: iteration level {c.iteration} outside [1, {space.n_step}]")
        if not 0 <= c.restart <= k - 1:
            problems.append(f"cell {k}: restart {c.restart} outside [0, {k - 1}]")
    return problems


# ----------------------------------------------------------- serialisation


def _level_from_value(value: float, unit: float, n_levels: int, what: str) -> int:
    ratio = value / unit
    level = int(round(ratio))
    if abs(ratio - level) > 0.05 or not 1 <= level <= n_levels:
        raise ValueError(f"{what} {value} is not on the grid (step {unit:g}, {n_levels} levels)")
    return level


def cell_from_fields(fields: dict, k: int, space: SearchSpace) -> AttackCell:
    op = AttackOp.from_name(str(fields["A"]))
    if op.norm != space.norm:
        raise ValueError(f"cell {k + 1}: {op.name} does not belong to the {space.norm} family")
    loss = LossSpec.from_label(str(fields.get("L", "CE")), space.kappa)
    if space.eps_max == 0:
        # zero budget: every level decodes to the identity perturbation
        if float(fields["M"]) != 0:
            raise ValueError(f"magnitude {fields['M']} exceeds eps_max=0")
        mag = space.n_eps
    else:
        mag = _level_from_value(float(fields["M"]), space.eps_max / space.n_eps, space.n_eps, "magnitude")
    its = float(fields["I"])
    unit = space.max_iters / space.n_step
    if op.family == "FGSM" and its < unit:
        # single-step listings write the effective count of 1
        it_level = 1
    else:
        it_level = _level_from_value(its, unit, space.n_step, "iteration count")
    return AttackCell(op, loss, mag, it_level, int(fields.get("R", 0)))


def sequence_from_dict(d: dict) -> AttackSequence:
    version = d.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported attack file version {version}")
    space = SearchSpace(
        norm=d["norm"],
        eps_max=float(d["eps_max"]),
        max_iters=int(d.get("max_iters", 200)),
        max_cells=int(d.get("max_cells", 4)),
        n_eps=int(d.get("n_eps", 8)),
        n_step=int(d.get("n_step", 8)),
    )
    cells = tuple(cell_from_fields(c, k, space) for k, c in enumerate(d["cells"]))
    seq = AttackSequence(cells, space)
    problems = validate(seq)
    if problems:
        raise ValueError("invalid attack sequence: " + "; ".join(problems))
    return seq


def sequence_from_json(text: str) -> AttackSequence:
    return sequence_from_dict(json.loads(text))


_FIELD = re.compile(r"'([ALMIR])'\s*:\s*'?([A-Za-z0-9_.\-\\$]+)'?")


def parse_listing(text: str, space: SearchSpace) -> AttackSequence:
    """Parse an A/L/M/I/R listing such as ``{'A': PGD-LinfAttack, 'L': CE, ...}; {...}``.

    A new cell starts at every ``'A'`` key; a missing ``'L'`` means CE.
    TeX escapes like ``DLR$\\_$P`` are accepted.
    """
    text = text.replace("$\\_$", "_").replace("\\_", "_")
    cells, current = [], None
    for key, value in _FIELD.findall(text):
        value = value.rstrip(",;")
        if key == "A":
            if current is not None:
                cells.append(current)
            current = {}
        if current is None:
            raise ValueError("listing must start with an 'A' field")
        current[key] = value
    if current is not None:
        cells.append(current)
    seq = AttackSequence(tuple(cell_from_fields(c, k, space) for k, c in enumerate(cells)), space)
    problems = validate(seq)
    if problems:
        raise ValueError("invalid listing: " + "; ".join(problems))
    return seq


# --------------------------------------------------------------- execution


@dataclass
class ExecutionTrace:
    """Per-image record of one sequence run.

    ``first_fool`` is -1 for images that survive every cell, 0 for images the
    model already misclassifies, else the 1-based cell that fooled them.
    ``cell_outputs[k]`` holds cell ``k``'s output per image; images skipped
    by that cell carry their (already fooling) adversarial example.
    """

    ids: np.ndarray
    labels: np.ndarray
    originals: np.ndarray
    clean_pred: np.ndarray
    cell_outputs: np.ndarray
    adversarial: np.ndarray
    first_fool: np.ndarray
    grad_evals: np.ndarray
    forward_evals: np.ndarray
    cell_active: list[int]
    eps_max: float
    norm: str

    @property
    def n_total(self) -> int:
        return len(self.labels)

    @property
    def success(self) -> np.ndarray:
        return self.first_fool >= 0

    @property
    def n_correct(self) -> int:
        return int((~self.success).sum())

    def max_perturbation(self) -> float:
        outs = np.concatenate([self.cell_outputs.reshape(-1, self.originals.shape[1]), self.adversarial])
        orig = np.concatenate([np.tile(self.originals, (len(self.cell_outputs), 1)), self.originals])
        return float(perturbation_norm(outs - orig, self.norm).max()) if len(orig) else 0.0


@dataclass(frozen=True)
class ExecutionOptions:
    """Operator settings shared by every cell of a run."""

    seed: int = 0
    init: str = "random"
    mi_decay: float = 1.0
    ddn_gamma: float = 0.05
    mt_targets: int | None = None


def execute(seq: AttackSequence, model: Classifier, data: Dataset, ids=None,
            options: ExecutionOptions | None = None) -> ExecutionTrace:
    """Run ``seq`` on ``data`` image by image with skip-on-success.

    ``ids`` are stable image identifiers (default ``0..N-1``) used to derive
    each image's random streams, so an image behaves identically whether it
    is attacked alone or within a larger batch.
    """
    opts = ExecutionOptions() if options is None else options
    if validate(seq):
        raise ValueError("invalid sequence: " + "; ".join(validate(seq)))
    if data.dim != model.input_dim:
        raise ValueError(f"data has {data.dim} features, model expects {model.input_dim}")
    x, y = data.images, data.labels
    n = len(y)
    ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
    if len(ids) != n:
        raise ValueError("need one id per image")

    clean_pred = model.predict(x) if n else np.zeros(0, dtype=np.int64)
    first_fool = np.where(clean_pred != y, 0, -1)
    adversarial = x.copy()
    outputs = np.empty((len(seq), n, data.dim))
    grad_evals = np.zeros(n, dtype=np.int64)
    forward_evals = np.ones(n, dtype=np.int64)
    cell_active = []

    for k, cell in enumerate(seq.cells):
        r = cell.restart
        assert 0 <= r <= k, "restart must reference an earlier cell"
        active = np.flatnonzero(first_fool < 0)
        cell_active.append(len(active))
        outputs[k] = adversarial
        if len(active) == 0:
            continue
        start = x[active] if r == 0 else outputs[r - 1][active]
        seeds = np.column_stack([np.full(len(active), opts.seed), np.full(len(active), k), ids[active]])
        result = run_operator(
            cell.op, model, start, y[active], cell.loss, seq.eps(k), seq.iters(k),
            seed=seeds, init=opts.init, mi_decay=opts.mi_decay, ddn_gamma=opts.ddn_gamma,
            mt_targets=opts.mt_targets, kappa=seq.space.kappa, anchor=x[active],
        )
        out = project(result.x, x[active], seq.eps_max, seq.norm)
        outputs[k][active] = out
        adversarial[active] = out
        grad_evals[active] += result.grad_evals
        forward_evals[active] += result.forward_evals + 1
        fooled = model.predict(out) != y[active]
        first_fool[active[fooled]] = k + 1

    return ExecutionTrace(
        ids=ids, labels=y, originals=x, clean_pred=clean_pred, cell_outputs=outputs,
        adversarial=adversarial, first_fool=first_fool, grad_evals=grad_evals,
        forward_evals=forward_evals, cell_active=cell_active, eps_max=seq.eps_max, norm=seq.norm,
    )


def expected_grad_evals(seq: AttackSequence, n_classes: int, mt_targets: int | None = None) -> list[int]:
    """Per-image gradient cost of each cell, as charged by :func:`execute`."""
    return [analytic_grad_evals(c.op, seq.iters(k), n_classes, mt_targets) for k, c in enumerate(seq.cells)]


def restart_configurations(length: int) -> list[tuple[int, ...]]:
    """All restart vectors for a sequence of ``length`` cells (``length!`` of them)."""
    configs = [()]
    for k in range(length):
        configs = [c + (r,) for c in configs for r in range(k + 1)]
    return configs


def n_restart_configurations(length: int) -> int:
    return math.factorial(length)
