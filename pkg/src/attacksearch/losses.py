"""Searchable attacker losses.

Every loss is written in the attacker's convention: larger means the
classifier is closer to being fooled, so attacks ascend it.  Each loss can
read either raw logits or softmax probabilities; cross entropy only exists
on probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_KINDS = ("CE", "Hinge", "L1", "DLR")
OUTPUT_MODES = ("logit", "prob")

# Default hinge/CW margin.  The loss is max(margin, -kappa); any finite kappa
# near zero makes it constant (zero gradient) on every correctly classified
# input, so by default the floor is disabled.
DEFAULT_KAPPA = float("inf")

# Small positive term keeping the DLR denominator away from zero when the
# top and third largest scores tie.
DLR_GUARD = 1e-12


@dataclass(frozen=True)
class LossSpec:
    kind: str
    mode: str = "prob"
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.mode not in OUTPUT_MODES:
            raise ValueError(f"unknown output mode {self.mode!r}; expected one of {OUTPUT_MODES}")
        if self.kind == "CE" and self.mode != "prob":
            raise ValueError("cross entropy is only defined on probabilities")

    @property
    def label(self) -> str:
        if self.kind == "CE":
            return "CE"
        return f"{self.kind}_{self.mode}"

    @classmethod
    def from_label(cls, label: str, kappa: float = DEFAULT_KAPPA) -> "LossSpec":
        """Parse a loss label.

        Accepts this package's labels (``"CE"``, ``"DLR_logit"``, ...) and the
        listing convention where a bare name means probability output and a
        ``_P`` suffix means logit output (``"DLR"`` / ``"DLR_P"``).
        """
        label = label.strip().strip("'\"")
        if label == "CE":
            return cls("CE", "prob", kappa)
        if "_" in label:
            kind, suffix = label.split("_", 1)
            mode = {"logit": "logit", "prob": "prob", "P": "logit"}.get(suffix)
            if mode is None:
                raise ValueError(f"unrecognised loss label {label!r}")
            return cls(kind, mode, kappa)
        return cls(label, "prob", kappa)


def all_loss_specs(kappa: float = DEFAULT_KAPPA) -> list[LossSpec]:
    """The seven searchable losses, in their canonical index order."""
    specs = [LossSpec("CE", "prob", kappa)]
    for kind in ("Hinge", "L1", "DLR"):
        for mode in ("logit", "prob"):
            specs.append(LossSpec(kind, mode, kappa))
    return specs


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _runner_up(scores: np.ndarray, y: np.ndarray) -> np.ndarray:
    masked = scores.copy()
    masked[np.arange(len(y)), y] = -np.inf
    return masked.argmax(axis=1)


def _score_loss(kind: str, scores: np.ndarray, y: np.ndarray, kappa: float, target=None):
    n, k = scores.shape
    rows = np.arange(n)
    grad = np.zeros_like(scores)
    if kind == "L1":
        if target is not None:
            grad[rows, target] = 1.0
            return scores[rows, target].copy(), grad
        grad[rows, y] = -1.0
        return -scores[rows, y], grad
    j = _runner_up(scores, y) if target is None else target
    margin = scores[rows, j] - scores[rows, y]
    if kind == "Hinge":
        active = margin > -kappa
        value = np.where(active, margin, -kappa)
        grad[rows[active], j[active]] += 1.0
        grad[rows[active], y[active]] -= 1.0
        return value, grad
    # DLR
    if k < 3:
        raise ValueError("DLR loss needs at least 3 classes")
    order = np.argsort(-scores, axis=1, kind="stable")
    p1, p3 = order[:, 0], order[:, 2]
    den = scores[rows, p1] - scores[rows, p3] + DLR_GUARD
    num = scores[rows, y] - scores[rows, j]
    value = -num / den
    np.add.at(grad, (rows, y), -1.0 / den)
    np.add.at(grad, (rows, j), 1.0 / den)
    coeff = num / den**2
    np.add.at(grad, (rows, p1), coeff)
    np.add.at(grad, (rows, p3), -coeff)
    return value, grad


def loss_value(spec: LossSpec, logits, y, target=None):
    """Loss values and their gradient with respect to the logits.

    Parameters
    ----------
    spec : LossSpec
    logits : array, shape (K,) or (n, K)
    y : int or int array of shape (n,)
    target : int or int array, optional
        Targeted variant: Hinge and DLR use the target score in place of the
        strongest wrong class, CE becomes ``log p_target`` and L1 becomes the
        target score.  ``target`` must differ from ``y``.

    Returns
    -------
    value, grad
        ``value`` has shape () or (n,); ``grad`` matches ``logits``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if target is not None:
        target = np.broadcast_to(np.asarray(target, dtype=np.int64), labels.shape)
        if np.any(target == labels):
            raise ValueError("target class must differ from the true label")
    if z.shape[1] < 2:
        raise ValueError("losses need at least 2 classes")
    if spec.kind == "DLR" and z.shape[1] < 3:
        raise ValueError("DLR loss needs at least 3 classes")
    if spec.kind == "CE":
        # log-sum-exp form avoids log(0) for confidently wrong inputs
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(len(labels))
        grad = softmax(z)
        if target is None:
            value = lse - shifted[rows, labels]
            grad[rows, labels] -= 1.0
        else:
            value = shifted[rows, target] - lse
            grad = -grad
            grad[rows, target] += 1.0
    elif spec.mode == "prob":
        p = softmax(z)
        value, g = _score_loss(spec.kind, p, labels, spec.kappa, target)
        # vector-Jacobian product through the softmax
        grad = p * (g - (g * p).sum(axis=1, keepdims=True))
    else:
        value, grad = _score_loss(spec.kind, z, labels, spec.kappa, target)
    if single:
        return value[0], grad[0]
    return value, grad


def cw_loss_spec(kappa: float = DEFAULT_KAPPA) -> LossSpec:
    """The fixed margin loss used by the CW operator (hinge on logits)."""
    return LossSpec("Hinge", "logit", kappa)
