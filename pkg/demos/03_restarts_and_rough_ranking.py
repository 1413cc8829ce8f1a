"""Two questions about the evaluation machinery.

1. Does it matter which earlier output each cell restarts from?
2. How well does a 36-image evaluator rank attacks compared with the full set?
"""

# %%
from attacksearch import (
    Evaluator, SearchSpace, TrainConfig, make_desk_dataset, parse_listing, rank_fidelity, restart_ablation,
    train_adversarial,
)

train, test = make_desk_dataset()
victim = train_adversarial(train, TrainConfig(adversarial=True))
space = SearchSpace.for_norm("linf")

# %% Two multi-targeted runs followed by a CW run.  [0,0,0] restarts every cell
# from the clean image (AutoAttack style); [0,1,2] chains them (each cell starts
# from the previous output).  Budgets are always measured from the clean image.
base = parse_listing(
    "{'A': 'MT-LinfAttack', 'L': 'CE', 'M': 0.031, 'I': 50, 'R': 0}; "
    "{'A': 'MT-LinfAttack', 'L': 'CE', 'M': 0.031, 'I': 25, 'R': 0}; "
    "{'A': 'CW-LinfAttack', 'L': 'CE', 'M': 0.031, 'I': 125, 'R': 0}",
    space,
)
for cfg, out in restart_ablation(base, Evaluator.accurate(victim, test)):
    print(f"restarts {list(cfg)}  RA {out.robust_accuracy:.3f}  cost {out.cost_units}")

# %% Rank agreement (Kendall tau) between rough and full evaluation of 20 random attacks.
# Cost ranks transfer almost perfectly; robust-accuracy ranks are noisier at this scale.
for seed in range(3):
    r = rank_fidelity(victim, test, space, n_attacks=20, m=36, seed=seed)
    print(f"seed {seed}: tau RA loss-sorted {r.tau_ra_sorted:+.3f}  random {r.tau_ra_random:+.3f}  "
          f"tau cost {r.tau_cost_sorted:+.3f}")
