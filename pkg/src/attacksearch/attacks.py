"""Gradient-based attack operators under l_inf / l_2 budgets.

All operators work on a batch ``x`` of shape (n, d) (a single (d,) input is
also accepted) and return an :class:`AttackResult` whose ``grad_evals`` is
the exact number of input-gradient evaluations spent per image.  Outputs
always lie inside the operator's epsilon ball around ``x`` and inside
[0, 1].

Random starts are drawn per image from its own seed, so an image's result
does not depend on which other images share the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffmodel import Classifier, forward, value_and_input_gradient
from .losses import DEFAULT_KAPPA, LossSpec, cw_loss_spec, loss_value

NORMS = ("linf", "l2")
FAMILIES = ("FGSM", "PGD", "CW", "MT", "MI", "DDN")

# relative step size of the iterative attacks: eps_step = STEP_FACTOR * eps / iters
STEP_FACTOR = 2.5

_CE = LossSpec("CE", "prob")


@dataclass(frozen=True)
class AttackOp:
    family: str
    norm: str

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown attack family {self.family!r}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if (self.family, self.norm) not in _VALID_PAIRS:
            raise ValueError(f"{self.family} is not available under {self.norm}")

    @property
    def name(self) -> str:
        if self.family == "DDN":
            return "DDNL2Attack"
        return f"{self.family}-{'Linf' if self.norm == 'linf' else 'L2'}Attack"

    @property
    def uses_loss(self) -> bool:
        return self.family != "CW"

    @classmethod
    def from_name(cls, name: str) -> "AttackOp":
        name = name.strip().strip("'\"")
        if name == "DDNL2Attack":
            return cls("DDN", "l2")
        try:
            family, rest = name.split("-", 1)
            norm = {"LinfAttack": "linf", "L2Attack": "l2"}[rest]
        except (ValueError, KeyError):
            raise ValueError(f"unrecognised attack name {name!r}") from None
        return cls(family, norm)


# The searchable operations for each norm family, in index order.
OPERATIONS = {
    "linf": [("FGSM", "linf"), ("PGD", "linf"), ("CW", "linf"), ("MT", "linf"), ("MI", "linf")],
    "l2": [("DDN", "l2"), ("PGD", "l2"), ("CW", "l2"), ("MT", "l2"), ("MI", "l2")],
}
# FGSM also runs under l2 as a stand-alone operator.
_VALID_PAIRS = {pair for ops in OPERATIONS.values() for pair in ops} | {("FGSM", "l2")}


def operations(norm: str) -> list[AttackOp]:
    return [AttackOp(f, n) for f, n in OPERATIONS[norm]]


@dataclass(frozen=True)
class AttackBudget:
    norm: str
    eps: float
    eps_max: float

    def __post_init__(self) -> None:
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if not 0.0 <= self.eps <= self.eps_max:
            raise ValueError(f"need 0 <= eps <= eps_max, got eps={self.eps}, eps_max={self.eps_max}")

    def step_size(self, iters: int) -> float:
        return step_size(self.eps, iters)

    def project(self, x_adv, x_orig) -> np.ndarray:
        return project(x_adv, x_orig, self.eps, self.norm)


def step_size(eps: float, iters: int) -> float:
    return STEP_FACTOR * eps / max(int(iters), 1)


@dataclass
class AttackResult:
    x: np.ndarray
    grad_evals: int
    forward_evals: int = 0
    trace: dict = field(default_factory=dict)


def perturbation_norm(delta: np.ndarray, norm: str) -> np.ndarray:
    delta = np.atleast_2d(delta)
    if norm == "linf":
        return np.abs(delta).max(axis=1)
    return np.sqrt((delta * delta).sum(axis=1))


def project(x_adv, x_orig, eps: float, norm: str) -> np.ndarray:
    """Project into the ``norm`` ball of radius ``eps`` around ``x_orig``, then clip to [0, 1].

    Clipping after the radial step cannot leave the ball because ``x_orig``
    itself lies in [0, 1].
    """
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    if x_adv.shape != x_orig.shape:
        raise ValueError(f"shape mismatch {x_adv.shape} vs {x_orig.shape}")
    delta = x_adv - x_orig
    if norm == "linf":
        delta = np.clip(delta, -eps, eps)
    elif norm == "l2":
        d2 = np.atleast_2d(delta)
        n = np.sqrt((d2 * d2).sum(axis=1, keepdims=True))
        scale = np.where(n > eps, eps / np.where(n > 0, n, 1.0), 1.0)
        delta = (d2 * scale).reshape(delta.shape)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return np.clip(x_orig + delta, 0.0, 1.0)


def _direction(g: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return np.sign(g)
    n = np.sqrt((g * g).sum(axis=1, keepdims=True))
    return np.divide(g, n, out=np.zeros_like(g), where=n > 0)


def _image_seeds(seed, n: int) -> list:
    """Entropy lists per image: an int seed, one seed per image, or one row per image."""
    if np.ndim(seed) == 0:
        return [[int(seed), i] for i in range(n)]
    arr = np.asarray(seed)
    if len(arr) != n:
        raise ValueError(f"need one seed per image, got {len(arr)} for {n}")
    if arr.ndim == 1:
        return [[int(s)] for s in arr]
    return [[int(v) for v in row] for row in arr]


def ball_noise(seed, n: int, d: int, eps: float, norm: str, salt: int = 0) -> np.ndarray:
    """Uniform samples from the epsilon ball, one independent stream per image."""
    out = np.empty((n, d))
    for i, s in enumerate(_image_seeds(seed, n)):
        rng = np.random.default_rng([*s, salt])
        if norm == "linf":
            out[i] = rng.uniform(-eps, eps, size=d)
        else:
            v = rng.standard_normal(d)
            v /= max(np.linalg.norm(v), 1e-300)
            out[i] = v * eps * rng.uniform() ** (1.0 / d)
    return out


def _as_batch(model: Classifier, x, y):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != model.input_dim:
        raise ValueError(f"inputs have {xb.shape[1]} features, model expects {model.input_dim}")
    yb = np.broadcast_to(np.atleast_1d(np.asarray(y, dtype=np.int64)), (len(xb),))
    return xb, yb, single


def _anchor(anchor, xb: np.ndarray) -> np.ndarray:
    if anchor is None:
        return xb
    a = np.atleast_2d(np.asarray(anchor, dtype=np.float64))
    if a.shape != xb.shape:
        raise ValueError(f"anchor shape {a.shape} does not match inputs {xb.shape}")
    return a


def _finish(result: AttackResult, single: bool) -> AttackResult:
    if single:
        result.x = result.x[0]
    return result


def _ascend(model, x, y, spec, eps, norm, iters, step, init, seed,
            decay=None, target=None, salt=0, anchor=None):
    """Shared projected-ascent loop from ``x`` inside the ball around ``anchor``.

    ``decay`` switches on momentum.
    """
    anchor = x if anchor is None else anchor
    if init == "random":
        xt = project(x + ball_noise(seed, len(x), x.shape[1], eps, norm, salt), anchor, eps, norm)
    elif init == "original":
        xt = project(x, anchor, eps, norm)
    else:
        raise ValueError(f"unknown init {init!r}")
    momentum = np.zeros_like(x) if decay else None
    for _ in range(iters):
        _, g, _ = value_and_input_gradient(model, xt, y, spec, target=target)
        if momentum is not None:
            l1 = np.abs(g).sum(axis=1, keepdims=True)
            momentum = decay * momentum + np.divide(g, l1, out=np.zeros_like(g), where=l1 > 0)
            g = momentum
        xt = project(xt + step * _direction(g, norm), anchor, eps, norm)
    return xt, momentum


def fgsm(model: Classifier, x, y, spec: LossSpec = _CE, eps: float = 0.031,
         norm: str = "linf", step: float | None = None, anchor=None) -> AttackResult:
    """Single gradient step of length ``step`` (default ``eps``), projected.

    l_inf uses the gradient sign, l_2 the unit-norm gradient.  A zero
    gradient leaves the input unchanged.  All operators accept an
    ``anchor``: the image whose ``eps`` ball constrains the result, which
    defaults to ``x`` itself.  A distinct anchor lets an operator resume
    from an earlier adversarial example.
    """
    xb, yb, single = _as_batch(model, x, y)
    anc = _anchor(anchor, xb)
    _, g, _ = value_and_input_gradient(model, xb, yb, spec)
    a = eps if step is None else step
    out = project(xb + a * _direction(g, norm), anc, eps, norm)
    return _finish(AttackResult(out, grad_evals=1), single)


def pgd(model: Classifier, x, y, spec: LossSpec = _CE, eps: float = 0.031,
        norm: str = "linf", iters: int = 10, init: str = "original", seed=0,
        step: float | None = None, anchor=None) -> AttackResult:
    """Projected gradient ascent for ``iters`` steps."""
    if iters < 1:
        raise ValueError("PGD needs at least one iteration")
    xb, yb, single = _as_batch(model, x, y)
    a = step_size(eps, iters) if step is None else step
    out, _ = _ascend(model, xb, yb, spec, eps, norm, iters, a, init, seed, anchor=_anchor(anchor, xb))
    return _finish(AttackResult(out, grad_evals=iters), single)


def mi(model: Classifier, x, y, spec: LossSpec = _CE, eps: float = 0.031,
       norm: str = "linf", iters: int = 10, decay: float = 1.0, init: str = "original",
       seed=0, step: float | None = None, anchor=None) -> AttackResult:
    """Momentum iterative attack.

    The step direction follows ``m_t = decay * m_{t-1} + g_t / ||g_t||_1``;
    with ``decay == 0`` the update is plain PGD.  The final momentum is
    returned in ``trace["momentum"]``.
    """
    if decay < 0:
        raise ValueError("momentum decay must be non-negative")
    if iters < 1:
        raise ValueError("MI needs at least one iteration")
    xb, yb, single = _as_batch(model, x, y)
    a = step_size(eps, iters) if step is None else step
    out, momentum = _ascend(model, xb, yb, spec, eps, norm, iters, a, init, seed, decay=decay,
                            anchor=_anchor(anchor, xb))
    trace = {} if momentum is None else {"momentum": momentum}
    return _finish(AttackResult(out, grad_evals=iters, trace=trace), single)


def default_targets(n_classes: int) -> int:
    return min(3, n_classes - 1)


def mt(model: Classifier, x, y, spec: LossSpec = _CE, eps: float = 0.031,
       norm: str = "linf", iters: int = 10, n_targets: int | None = None,
       init: str = "original", seed=0, step: float | None = None, anchor=None) -> AttackResult:
    """Multi-targeted attack.

    One targeted ascent per target class, the targets being the highest
    scoring wrong classes on the clean input.  Per image the first candidate
    that is misclassified wins; otherwise the candidate with the largest
    untargeted loss.  Costs ``n_targets * iters`` gradient evaluations.
    """
    if iters < 1:
        raise ValueError("MT needs at least one iteration")
    xb, yb, single = _as_batch(model, x, y)
    anc = _anchor(anchor, xb)
    k = model.n_classes
    t_count = default_targets(k) if n_targets is None else n_targets
    t_count = max(1, min(int(t_count), k - 1))
    a = step_size(eps, iters) if step is None else step

    logits = forward(model, xb)
    masked = logits.copy()
    masked[np.arange(len(yb)), yb] = -np.inf
    targets = np.argsort(-masked, axis=1, kind="stable")[:, :t_count]

    best = xb.copy()
    best_loss = np.full(len(yb), -np.inf)
    found = np.zeros(len(yb), dtype=bool)
    for ti in range(t_count):
        cand, _ = _ascend(model, xb, yb, spec, eps, norm, iters, a, init, seed,
                          target=targets[:, ti], salt=ti, anchor=anc)
        cand_logits = forward(model, cand)
        fooled = cand_logits.argmax(axis=1) != yb
        value, _ = loss_value(spec, cand_logits, yb)
        take = ~found & (fooled | (value > best_loss))
        best[take] = cand[take]
        best_loss[take] = value[take]
        found |= fooled
    result = AttackResult(best, grad_evals=t_count * iters, forward_evals=1 + t_count,
                          trace={"targets": targets})
    return _finish(result, single)


def cw(model: Classifier, x, y, eps: float = 0.031, norm: str = "linf",
       iters: int = 10, kappa: float = DEFAULT_KAPPA, init: str = "original", seed=0,
       step: float | None = None, anchor=None) -> AttackResult:
    """Projected ascent on the fixed logit margin ``max(max_{i!=y} Z_i - Z_y, -kappa)``."""
    return pgd(model, x, y, cw_loss_spec(kappa), eps, norm, iters, init, seed, step, anchor)


def ddn(model: Classifier, x, y, spec: LossSpec = _CE, eps: float = 0.5,
        iters: int = 10, gamma: float = 0.05, step: float | None = None, anchor=None) -> AttackResult:
    """Decoupled direction and norm attack (l_2 only).

    Each iteration takes a unit gradient step of size ``step`` and then puts
    the perturbation on the sphere of the current radius.  The radius
    shrinks by ``(1 - gamma)`` while the iterate is adversarial and grows by
    ``(1 + gamma)`` otherwise, never exceeding ``eps``.  Returns the smallest
    adversarial iterate found, else the iterate with the largest loss.  The
    radius history (initial value first) is in ``trace["radii"]``.
    """
    if iters < 1:
        raise ValueError("DDN needs at least one iteration")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    xs, yb, single = _as_batch(model, x, y)
    xb = _anchor(anchor, xs)
    n = len(yb)
    a = step_size(eps, iters) if step is None else step
    radius = np.full(n, float(eps))
    radii = [radius.copy()]
    delta = project(xs, xb, eps, "l2") - xb
    best_adv, best_norm = xb.copy(), np.full(n, np.inf)
    best_loss_x, best_loss = xb.copy(), np.full(n, -np.inf)

    def record(xt, value, logits):
        fooled = logits.argmax(axis=1) != yb
        norms = perturbation_norm(xt - xb, "l2")
        upd = fooled & (norms < best_norm)
        best_adv[upd], best_norm[upd] = xt[upd], norms[upd]
        upd = value > best_loss
        best_loss_x[upd], best_loss[upd] = xt[upd], value[upd]
        return fooled

    for _ in range(iters):
        xt = np.clip(xb + delta, 0.0, 1.0)
        value, g, logits = value_and_input_gradient(model, xt, yb, spec)
        fooled = record(xt, value, logits)
        radius = np.minimum(np.where(fooled, radius * (1.0 - gamma), radius * (1.0 + gamma)), eps)
        radii.append(radius.copy())
        d = delta + a * _direction(g, "l2")
        dn = np.sqrt((d * d).sum(axis=1, keepdims=True))
        delta = np.divide(d * radius[:, None], dn, out=np.zeros_like(d), where=dn > 0)
        delta = np.clip(xb + delta, 0.0, 1.0) - xb

    xt = np.clip(xb + delta, 0.0, 1.0)
    logits = forward(model, xt)
    value, _ = loss_value(spec, logits, yb)
    record(xt, value, logits)

    found = np.isfinite(best_norm)
    out = np.where(found[:, None], best_adv, best_loss_x)
    out = project(out, xb, eps, "l2")
    result = AttackResult(out, grad_evals=iters, forward_evals=1, trace={"radii": np.array(radii)})
    return _finish(result, single)


def run_operator(op: AttackOp, model: Classifier, x, y, spec: LossSpec | None,
                 eps: float, iters: int, seed=0, init: str = "random",
                 mi_decay: float = 1.0, ddn_gamma: float = 0.05,
                 mt_targets: int | None = None, kappa: float = DEFAULT_KAPPA, anchor=None) -> AttackResult:
    """Dispatch one operator by family with the package defaults."""
    spec = _CE if spec is None else spec
    if op.family == "FGSM":
        return fgsm(model, x, y, spec, eps, op.norm, anchor=anchor)
    if op.family == "PGD":
        return pgd(model, x, y, spec, eps, op.norm, iters, init, seed, anchor=anchor)
    if op.family == "MI":
        return mi(model, x, y, spec, eps, op.norm, iters, mi_decay, init, seed, anchor=anchor)
    if op.family == "MT":
        return mt(model, x, y, spec, eps, op.norm, iters, mt_targets, init, seed, anchor=anchor)
    if op.family == "CW":
        return cw(model, x, y, eps, op.norm, iters, kappa, init, seed, anchor=anchor)
    return ddn(model, x, y, spec, eps, iters, ddn_gamma, anchor=anchor)


def analytic_grad_evals(op: AttackOp, iters: int, n_classes: int, mt_targets: int | None = None) -> int:
    """Gradient evaluations per image that :func:`run_operator` will spend."""
    if op.family == "FGSM":
        return 1
    if op.family == "MT":
        t = default_targets(n_classes) if mt_targets is None else mt_targets
        return max(1, min(int(t), n_classes - 1)) * iters
    return iters
