"""Multi-objective memetic search over attack sequences.

Phase one runs a discrete NSGA-II on the rough evaluator; after every
generation one individual of the first front is improved by a local search
over a single randomly chosen neighbourhood.  Phase two takes the best
first-front individuals of distinct lengths, re-scores them on the accurate
evaluator and runs the full local search on the winner.

Individuals are design vectors (tuples of ints, five genes per cell), which
also key the evaluation caches.  Both objectives, robust accuracy and cost
units, are minimised.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .diffmodel import Classifier, Dataset
from .evaluator import EvalOutcome, Evaluator, RoughEvaluator, select_representative
from .sequence import (
    GENES_PER_CELL,
    AttackSequence,
    ExecutionOptions,
    SearchSpace,
    decode,
    restart_configurations,
)

logger = logging.getLogger(__name__)

LOCAL_MOVES = ("restart", "loss", "magnitude", "iteration", "operation", "length")
# neighbourhoods visited by the final local search, in move-index order 1..4
FINAL_MOVES = ("restart", "loss", "length", "operation")
# neighbourhoods the per-generation local search draws from
GENERATION_MOVES = ("restart", "loss", "magnitude", "iteration", "operation")

_OP, _LOSS, _MAG, _ITER, _RESTART = range(GENES_PER_CELL)


@dataclass(frozen=True)
class SearchConfig:
    population: int = 40
    generations: int = 20
    crossover_rate: float = 0.8
    mutation_rate: float = 0.6
    local_iterations: int = 1
    final_candidates: int = 3
    rough_size: int = 36
    selection: str = "loss_sorted"
    max_magnitude_init: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.crossover_rate <= 1.0 and 0.0 <= self.mutation_rate <= 1.0):
            raise ValueError("crossover and mutation rates must lie in [0, 1]")
        if self.population < 2:
            raise ValueError("population must hold at least 2 individuals")
        if self.generations < 0 or self.local_iterations < 1 or self.final_candidates < 1:
            raise ValueError("generations >= 0, local_iterations >= 1 and final_candidates >= 1 required")
        if self.rough_size < 1:
            raise ValueError("rough_size must be positive")

    @classmethod
    def full(cls, **kw) -> "SearchConfig":
        return cls(**kw)

    @classmethod
    def desk(cls, **kw) -> "SearchConfig":
        kw.setdefault("population", 16)
        kw.setdefault("generations", 10)
        return cls(**kw)


@dataclass
class Individual:
    vector: tuple[int, ...]
    outcome: EvalOutcome | None = None
    rank: int = 0
    crowding: float = 0.0

    @property
    def length(self) -> int:
        return len(self.vector) // GENES_PER_CELL

    def invalidate(self) -> None:
        self.outcome = None


# -------------------------------------------------------------- genotype ops


def _cells(v) -> list[list[int]]:
    return [list(v[i:i + GENES_PER_CELL]) for i in range(0, len(v), GENES_PER_CELL)]


def _flat(cells) -> tuple[int, ...]:
    return tuple(int(g) for c in cells for g in c)


def _repair(cells) -> list[list[int]]:
    for k, c in enumerate(cells):
        c[_RESTART] %= k + 1
    return cells


def random_cell(space: SearchSpace, position: int, rng: np.random.Generator,
                max_magnitude: bool = True) -> list[int]:
    """A uniformly random cell for 0-based ``position``."""
    return [
        int(rng.integers(1, space.n_attacker + 1)),
        int(rng.integers(1, space.n_loss + 1)),
        space.n_eps if max_magnitude else int(rng.integers(1, space.n_eps + 1)),
        int(rng.integers(1, space.n_step + 1)),
        int(rng.integers(0, position + 1)),
    ]


def random_vector(space: SearchSpace, rng: np.random.Generator, max_magnitude: bool = True):
    length = int(rng.integers(1, space.max_cells + 1))
    return _flat(random_cell(space, k, rng, max_magnitude) for k in range(length))


def initialize_population(space: SearchSpace, n: int, seed, max_magnitude: bool = True) -> list[Individual]:
    """``n`` random individuals with lengths uniform in ``1..max_cells``.

    With ``max_magnitude`` every cell starts at the largest magnitude level;
    otherwise magnitudes are drawn uniformly from the grid.
    """
    if n < 2:
        raise ValueError("population needs at least 2 individuals")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [Individual(random_vector(space, rng, max_magnitude)) for _ in range(n)]


def insert_cell(v, position: int, cell) -> tuple[int, ...]:
    """Insert ``cell`` before 0-based ``position``; later restarts keep their targets."""
    cells = _cells(v)
    for c in cells[position:]:
        if c[_RESTART] > position:
            c[_RESTART] += 1
    cells.insert(position, list(cell))
    return _flat(_repair(cells))


def delete_cell(v, position: int) -> tuple[int, ...]:
    """Remove cell ``position``; references to it fall back to its own input."""
    cells = _cells(v)
    removed = cells.pop(position)
    for c in cells[position:]:
        if c[_RESTART] == position + 1:
            c[_RESTART] = removed[_RESTART]
        elif c[_RESTART] > position + 1:
            c[_RESTART] -= 1
    return _flat(_repair(cells))


def crossover(a, b, rate: float, rng: np.random.Generator, space: SearchSpace, cuts=None):
    """Single-point exchange at cell boundaries.

    With probability ``rate`` the children are ``a[:i] + b[j:]`` and
    ``b[:j] + a[i:]`` for cut cells ``i`` in ``1..len(a)`` and ``j`` in
    ``1..len(b)`` (or the given ``cuts``), truncated to ``max_cells``.
    """
    a, b = tuple(a), tuple(b)
    if cuts is None and rng.random() >= rate:
        return a, b
    ca, cb = _cells(a), _cells(b)
    if cuts is None:
        i = int(rng.integers(1, len(ca) + 1))
        j = int(rng.integers(1, len(cb) + 1))
    else:
        i, j = cuts
    c1 = [list(c) for c in ca[:i] + cb[j:]][: space.max_cells]
    c2 = [list(c) for c in cb[:j] + ca[i:]][: space.max_cells]
    return _flat(_repair(c1)), _flat(_repair(c2))


def _resample_gene(cells, space: SearchSpace, rng: np.random.Generator) -> None:
    bounds = space.gene_bounds()
    choices = []
    for k in range(len(cells)):
        for g in range(GENES_PER_CELL):
            lo, hi = bounds[g]
            if g == _RESTART:
                hi = k
            if hi > lo:
                choices.append((k, g, lo, hi))
    k, g, lo, hi = choices[int(rng.integers(len(choices)))]
    alternatives = [x for x in range(lo, hi + 1) if x != cells[k][g]]
    cells[k][g] = alternatives[int(rng.integers(len(alternatives)))]


def mutate(v, rate: float, space: SearchSpace, rng: np.random.Generator) -> tuple[int, ...]:
    """With probability ``rate`` apply one move: resample a gene, insert or delete a cell."""
    v = tuple(v)
    if rng.random() >= rate:
        return v
    n = len(v) // GENES_PER_CELL
    moves = ["resample"]
    if n < space.max_cells:
        moves.append("insert")
    if n > 1:
        moves.append("delete")
    move = moves[int(rng.integers(len(moves)))]
    if move == "insert":
        pos = int(rng.integers(0, n + 1))
        return insert_cell(v, pos, random_cell(space, pos, rng, max_magnitude=False))
    if move == "delete":
        return delete_cell(v, int(rng.integers(0, n)))
    cells = _cells(v)
    _resample_gene(cells, space, rng)
    return _flat(cells)


def neighbor_space(v, move: str, space: SearchSpace) -> list[tuple[int, ...]]:
    """Distinct single-change neighbours of ``v`` for one move kind.

    ``restart`` enumerates every other restart configuration; ``loss``,
    ``magnitude``, ``iteration`` and ``operation`` change one gene of one
    cell to each alternative value (CW cells have no loss and FGSM cells no
    iteration count to change); ``length`` deletes any one cell or inserts a
    fresh max-magnitude CE cell of any operation at any position.
    """
    v = tuple(v)
    cells = _cells(v)
    n = len(cells)
    ops = space.ops
    out: list[tuple[int, ...]] = []
    if move == "restart":
        for cfg in restart_configurations(n):
            out.append(_flat([c[:_RESTART] + [r] for c, r in zip(cells, cfg)]))
    elif move in ("loss", "magnitude", "iteration", "operation"):
        gene = {"operation": _OP, "loss": _LOSS, "magnitude": _MAG, "iteration": _ITER}[move]
        lo, hi = space.gene_bounds()[gene]
        for k, c in enumerate(cells):
            family = ops[c[_OP] - 1].family
            if (move == "loss" and family == "CW") or (move == "iteration" and family == "FGSM"):
                continue
            for value in range(lo, hi + 1):
                trial = [list(x) for x in cells]
                trial[k][gene] = value
                out.append(_flat(trial))
    elif move == "length":
        if n > 1:
            out += [delete_cell(v, p) for p in range(n)]
        if n < space.max_cells:
            for p in range(n + 1):
                for a in range(1, space.n_attacker + 1):
                    out.append(insert_cell(v, p, [a, 1, space.n_eps, max(1, space.n_step // 2), 0]))
    else:
        raise ValueError(f"unknown move {move!r}; expected one of {LOCAL_MOVES}")
    seen = {v}
    unique = []
    for w in out:
        if w not in seen:
            seen.add(w)
            unique.append(w)
    return unique


# ------------------------------------------------------------- NSGA-II core


def dominates(a, b) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def fast_nondominated_sort(points) -> list[list[int]]:
    """Fronts of minimisation points as index lists, best front first."""
    pts = [tuple(p) for p in points]
    n = len(pts)
    if n == 0:
        return []
    dominated_by = [[] for _ in range(n)]
    counts = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(pts[i], pts[j]):
                dominated_by[i].append(j)
                counts[j] += 1
            elif dominates(pts[j], pts[i]):
                dominated_by[j].append(i)
                counts[i] += 1
    fronts = [[i for i in range(n) if counts[i] == 0]]
    while True:
        nxt = []
        for i in fronts[-1]:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        if not nxt:
            return fronts
        fronts.append(sorted(nxt))


def crowding_distance(points) -> np.ndarray:
    """Crowding distance of each point of one front.

    Boundary points of an objective get infinity; an objective whose values
    are all equal contributes nothing.  A lone point is its own boundary.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("crowding distance needs a non-empty (n, m) array")
    n, m = pts.shape
    if n == 1:
        return np.array([np.inf])
    dist = np.zeros(n)
    for j in range(m):
        order = np.argsort(pts[:, j], kind="stable")
        f = pts[order, j]
        span = f[-1] - f[0]
        if span == 0:
            continue
        dist[order[0]] = dist[order[-1]] = np.inf
        for pos in range(1, n - 1):
            dist[order[pos]] += (f[pos + 1] - f[pos - 1]) / span
    return dist


def assign_rank_and_crowding(pop: list[Individual]) -> list[list[int]]:
    fronts = fast_nondominated_sort([ind.outcome.objectives for ind in pop])
    for r, front in enumerate(fronts, start=1):
        cd = crowding_distance([pop[i].outcome.objectives for i in front])
        for i, d in zip(front, cd):
            pop[i].rank, pop[i].crowding = r, float(d)
    return fronts


def _better(a: Individual, b: Individual) -> bool:
    return (a.rank, -a.crowding) < (b.rank, -b.crowding)


def tournament_select(pop: list[Individual], rng: np.random.Generator) -> Individual:
    """Binary tournament on (rank ascending, crowding distance descending)."""
    if len(pop) < 2:
        raise ValueError("tournament needs at least 2 individuals")
    i, j = rng.choice(len(pop), size=2, replace=False)
    a, b = pop[int(i)], pop[int(j)]
    if _better(b, a):
        return b
    return a


def select_survivors(pop: list[Individual], n: int) -> list[Individual]:
    """Elitist truncation by front, then by crowding distance within the last front."""
    fronts = assign_rank_and_crowding(pop)
    chosen: list[Individual] = []
    for front in fronts:
        if len(chosen) + len(front) <= n:
            chosen += [pop[i] for i in front]
            continue
        rest = sorted(front, key=lambda i: (-pop[i].crowding, i))
        chosen += [pop[i] for i in rest[: n - len(chosen)]]
        break
    return chosen


def hypervolume(points, reference) -> float:
    """Area dominated by 2-D minimisation ``points`` and bounded by ``reference``."""
    rx, ry = reference
    pts = sorted((float(x), float(y)) for x, y in points if x < rx and y < ry)
    area, best_y = 0.0, ry
    for i, (x, y) in enumerate(pts):
        if y >= best_y:
            continue
        nxt = rx
        for x2, y2 in pts[i + 1:]:
            if y2 < y:
                nxt = x2
                break
        area += (nxt - x) * (ry - y)
        best_y = y
    return area


# ------------------------------------------------------------ local search


@dataclass
class ArchiveEntry:
    vector: tuple[int, ...]
    outcome: EvalOutcome
    generation: int
    phase: str

    def to_dict(self, space: SearchSpace, front: int | None = None) -> dict:
        seq = decode(self.vector, space)
        return {
            "design_vector": list(self.vector),
            "decoded_sequence": seq.to_dict()["cells"],
            "robust_accuracy": self.outcome.robust_accuracy,
            "n_correct": self.outcome.n_correct,
            "n_total": self.outcome.n_total,
            "cost_units": self.outcome.cost_units,
            "evaluator": self.outcome.evaluator,
            "front": front,
            "generation": self.generation,
            "phase": self.phase,
        }


class _Scorer:
    """Evaluator front end that records every new evaluation in an archive."""

    def __init__(self, evaluator: Evaluator, space: SearchSpace, archive: list, phase: str):
        self.evaluator, self.space, self.archive, self.phase = evaluator, space, archive, phase
        self.generation = 0
        self._seen: set = set()

    def __call__(self, v) -> EvalOutcome:
        v = tuple(v)
        outcome = self.evaluator.evaluate(decode(v, self.space))
        if v not in self._seen:
            self._seen.add(v)
            self.archive.append(ArchiveEntry(v, outcome, self.generation, self.phase))
        return outcome


def _scorer(evaluator, space):
    if isinstance(evaluator, _Scorer):
        return evaluator
    return _Scorer(evaluator, space, [], "local")


def best_neighbor(v, move: str, score, space: SearchSpace):
    """Lexicographically best (RA, cost) neighbour for one move, or None if empty."""
    best, best_out = None, None
    for w in neighbor_space(v, move, space):
        out = score(w)
        if best_out is None or out.key() < best_out.key():
            best, best_out = w, out
    return best, best_out


def local_search(v, evaluator, space: SearchSpace, iterations: int = 1, seed=0,
                 moves=FINAL_MOVES):
    """Hill climbing over the final-stage neighbourhoods.

    Every round visits ``moves`` in a random order; after each neighbourhood
    the best candidate replaces the incumbent if it is strictly better by
    (RA, cost).  Returns ``(vector, outcome, log)``.
    """
    if iterations < 1:
        raise ValueError("local search needs at least one iteration")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    score = _scorer(evaluator, space)
    best = tuple(v)
    best_out = score(best)
    log = []
    for _ in range(iterations):
        for idx in rng.permutation(len(moves)):
            move = moves[int(idx)]
            cand, cand_out = best_neighbor(best, move, score, space)
            improved = cand_out is not None and cand_out.key() < best_out.key()
            if improved:
                best, best_out = cand, cand_out
            log.append({"move": move, "improved": bool(improved),
                        "robust_accuracy": best_out.robust_accuracy, "cost_units": best_out.cost_units})
    return best, best_out, log


# ------------------------------------------------------------ full search


@dataclass
class SearchResult:
    sequence: AttackSequence
    vector: tuple[int, ...]
    outcome: EvalOutcome
    archive: list[ArchiveEntry]
    population: list[Individual]
    rough_subset: RoughEvaluator
    phase2_candidates: list[tuple[tuple[int, ...], EvalOutcome]] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    def front(self, evaluator: str = "rough") -> list[ArchiveEntry]:
        """Non-dominated archive entries of one evaluator, one per design vector."""
        unique: dict[tuple[int, ...], ArchiveEntry] = {}
        for e in self.archive:
            if e.outcome.evaluator == evaluator:
                unique.setdefault(e.vector, e)
        entries = list(unique.values())
        if not entries:
            return []
        fronts = fast_nondominated_sort([e.outcome.objectives for e in entries])
        return [entries[i] for i in fronts[0]]


def pick_by_length(pop: list[Individual], front: list[int], count: int) -> list[Individual]:
    """Best individual (by RA, cost) of each distinct length in ``front``, up to ``count``."""
    best: dict[int, Individual] = {}
    for i in front:
        ind = pop[i]
        cur = best.get(ind.length)
        if cur is None or (ind.outcome.key(), ind.vector) < (cur.outcome.key(), cur.vector):
            best[ind.length] = ind
    reps = sorted(best.values(), key=lambda ind: (ind.outcome.key(), ind.vector))
    return reps[:count]


def memetic_search(space: SearchSpace, config: SearchConfig, model: Classifier, data: Dataset,
                   options: ExecutionOptions | None = None, progress=None) -> SearchResult:
    """Two-phase memetic search; see the module docstring."""
    options = ExecutionOptions(seed=config.seed) if options is None else options
    rng = np.random.default_rng(config.seed)
    archive: list[ArchiveEntry] = []
    log: list[dict] = []

    subset = select_representative(data, model, min(config.rough_size, len(data)),
                                   config.selection, seed=config.seed)
    rough = _Scorer(Evaluator.rough(model, data, subset, options), space, archive, "nsga")

    pop = initialize_population(space, config.population, rng, config.max_magnitude_init)
    for ind in pop:
        ind.outcome = rough(ind.vector)
    assign_rank_and_crowding(pop)

    for gen in range(1, config.generations + 1):
        rough.generation = gen
        rough.phase = "nsga"
        offspring: list[Individual] = []
        while len(offspring) < config.population:
            pa, pb = tournament_select(pop, rng), tournament_select(pop, rng)
            for child in crossover(pa.vector, pb.vector, config.crossover_rate, rng, space):
                child = mutate(child, config.mutation_rate, space, rng)
                offspring.append(Individual(child))
        offspring = offspring[: config.population]
        for ind in offspring:
            ind.outcome = rough(ind.vector)
        pop = select_survivors(pop + offspring, config.population)

        rough.phase = "local"
        fronts = assign_rank_and_crowding(pop)
        target = fronts[0][int(rng.integers(len(fronts[0])))]
        move = GENERATION_MOVES[int(rng.integers(len(GENERATION_MOVES)))]
        cand, cand_out = best_neighbor(pop[target].vector, move, rough, space)
        improved = cand_out is not None and cand_out.key() < pop[target].outcome.key()
        if improved:
            pop[target] = Individual(cand, cand_out)
            assign_rank_and_crowding(pop)
        best = min(pop, key=lambda ind: ind.outcome.key())
        entry = {"phase": "rough", "generation": gen, "local_move": move, "local_improved": bool(improved),
                 "best_robust_accuracy": best.outcome.robust_accuracy, "best_cost_units": best.outcome.cost_units,
                 "evaluations": rough.evaluator.n_evaluations}
        log.append(entry)
        logger.info("generation %d: best RA %.4f cost %d", gen, best.outcome.robust_accuracy,
                    best.outcome.cost_units)
        if progress is not None:
            progress(entry)

    fronts = assign_rank_and_crowding(pop)
    candidates = pick_by_length(pop, fronts[0], config.final_candidates)
    accurate = _Scorer(Evaluator.accurate(model, data, options), space, archive, "accurate")
    accurate.generation = config.generations + 1
    scored = [(ind.vector, accurate(ind.vector)) for ind in candidates]
    start = min(scored, key=lambda p: (p[1].key(), p[0]))[0]
    final, final_out, ls_log = local_search(start, accurate, space, config.local_iterations, rng)
    for e in ls_log:
        log.append({"phase": "accurate", **e})
    return SearchResult(decode(final, space), final, final_out, archive, pop, subset, scored, log)
