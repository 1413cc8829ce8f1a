"""Search for an attack sequence against the robust desk victim.

The search optimises two things at once: robust accuracy (lower means a
stronger attack) and cost in gradient evaluations.  Generations run on a
36-image rough evaluator; the last stage re-scores a few front members on
the full test set and polishes the winner with local search.
"""

# %%
import logging

from attacksearch import (
    Evaluator, SearchConfig, SearchSpace, TrainConfig, decode, make_desk_dataset, memetic_search,
    train_adversarial,
)
from attacksearch.search import hypervolume

logging.basicConfig(level=logging.INFO, format="%(message)s")

train, test = make_desk_dataset()
victim = train_adversarial(train, TrainConfig(adversarial=True))
space = SearchSpace.for_norm("linf")  # eps_max 0.031, up to 200 iterations, 4 cells
print(space)

# %% Desk-sized run: population 16 for 10 generations.
result = memetic_search(space, SearchConfig.desk(seed=0), victim, test)

# %% The rough Pareto front, cheapest first.  Several genotypes often tie on
# both objectives (FGSM ignores its iteration gene, for one), so group them.
front = result.front("rough")
points = sorted({e.outcome.objectives for e in front}, key=lambda p: p[1])
for ra, cost in points:
    n = sum(e.outcome.objectives == (ra, cost) for e in front)
    print(f"RA {ra:.3f}  cost {cost:6d}  ({n} sequences)")
ref = (Evaluator.rough(victim, test, result.rough_subset).clean_accuracy(), max(e.outcome.cost_units for e in front))
print("front hypervolume:", hypervolume([e.outcome.objectives for e in front], ref))

# %% The final attack, as a listing that can be fed back to `attacksearch eval-attack`.
print(result.sequence.listing())
print(f"accurate RA {result.outcome.robust_accuracy:.3f} at cost {result.outcome.cost_units}")
assert decode(result.vector, space) == result.sequence
