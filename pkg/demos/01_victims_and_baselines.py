"""Build the desk victims and see how hard they are to break.

Run with ``python demos/01_victims_and_baselines.py``.  Takes about a minute
on one core: most of it is adversarial training.
"""

# %% A procedurally generated dataset: ten 8x8 templates plus pixel noise.

from attacksearch import (
    LossSpec, TrainConfig, accuracy, all_loss_specs, make_desk_dataset, train_adversarial, train_standard,
)
from attacksearch.attacks import fgsm, pgd

train, test = make_desk_dataset()
print(f"train {train.images.shape}, test {test.images.shape}, classes {test.n_classes}")

# %% One plain victim and one trained against 7-step PGD.
std = train_standard(train, TrainConfig())
at = train_adversarial(train, TrainConfig(adversarial=True))
for name, m in (("standard", std), ("pgd-at", at)):
    print(f"{name:9s} clean accuracy {accuracy(m, test):.3f}")


# %% Single operators at eps = 8/255.  The robust accuracy is what survives.
def robust(model, x_adv):
    return float((model.predict(x_adv) == test.labels).mean())


eps = 0.031
ce = LossSpec("CE")
for name, m in (("standard", std), ("pgd-at", at)):
    r_fgsm = robust(m, fgsm(m, test.images, test.labels, ce, eps).x)
    r_pgd = robust(m, pgd(m, test.images, test.labels, ce, eps, "linf", 50, init="random").x)
    print(f"{name:9s} FGSM RA {r_fgsm:.3f}   PGD-50 RA {r_pgd:.3f}")

# %% The loss matters as much as the operator.  PGD-200 on the robust model:
pgd200 = {}
for spec in all_loss_specs():
    x_adv = pgd(at, test.images, test.labels, spec, eps, "linf", 200, init="random").x
    pgd200[spec.label] = robust(at, x_adv)
    print(f"  {spec.label:12s} RA {pgd200[spec.label]:.3f}")

# No single loss dominates, which is the point of searching over them.
print("best single loss:", min(pgd200, key=pgd200.get))
