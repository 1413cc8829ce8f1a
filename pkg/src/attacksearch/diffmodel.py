"""Dense feed-forward classifiers with hand-written backpropagation.

These are the victim models.  Besides standard training the module offers
PGD adversarial training, and every attack operator relies on
:func:`input_gradient` for the gradient of a loss with respect to the input.
All arithmetic is float64.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .losses import LossSpec, loss_value, softmax

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "softplus", "relu")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "softplus":
        return np.logaddexp(0.0, z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return (z > 0).astype(np.float64)


@dataclass
class Classifier:
    """Multi-layer perceptron ``d -> hidden... -> K`` producing logits.

    ``weights[i]`` has shape ``(dims[i], dims[i + 1])``; ``activations`` has
    one entry per hidden layer.
    """

    dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.dims) < 2 or any(int(d) <= 0 for d in self.dims):
            raise ValueError(f"layer dims must be >= 2 positive integers, got {self.dims}")
        self.dims = [int(d) for d in self.dims]
        n_layers = len(self.dims) - 1
        if not self.activations:
            self.activations = ["tanh"] * (n_layers - 1)
        if len(self.activations) != n_layers - 1:
            raise ValueError("need one activation per hidden layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError("weights/biases do not match layer dims")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[i], self.dims[i + 1]) or b.shape != (self.dims[i + 1],):
                raise ValueError(f"layer {i} parameter shapes {w.shape}, {b.shape} disagree with dims")

    @classmethod
    def initialize(cls, dims, activation: str = "tanh", seed: int = 0) -> "Classifier":
        """Glorot-uniform weights and zero biases drawn from ``seed``."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(list(dims), weights, biases, [activation] * (len(dims) - 2))

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def n_classes(self) -> int:
        return self.dims[-1]

    def copy(self) -> "Classifier":
        return copy.deepcopy(self)

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())

    def _check_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise ValueError(f"expected inputs with {self.input_dim} columns, got shape {x.shape}")
        return x

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping pre-activations and activations for backprop."""
        pre, post = [], [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i == last:
                return z, (pre, post)
            h = _activate(self.activations[i], z)
            pre.append(z)
            post.append(h)
        raise AssertionError("unreachable")

    def backward(self, cache, dlogits: np.ndarray, need_params: bool = False):
        """Backpropagate ``dlogits``; returns d/dx (and parameter grads)."""
        pre, post = cache
        g = dlogits
        grads_w, grads_b = [], []
        for i in range(len(self.weights) - 1, -1, -1):
            if need_params:
                grads_w.append(post[i].T @ g)
                grads_b.append(g.sum(axis=0))
            g = g @ self.weights[i].T
            if i > 0:
                g = g * _activation_grad(self.activations[i - 1], pre[i - 1], post[i])
        if need_params:
            return g, grads_w[::-1], grads_b[::-1]
        return g

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)

    def predict(self, x) -> np.ndarray:
        return forward(self, np.atleast_2d(x)).argmax(axis=1)


def forward(model: Classifier, batch) -> np.ndarray:
    """Logits for a batch (n, d) or a single input (d,)."""
    x = model._check_batch(batch)
    logits, _ = model.forward_cache(np.atleast_2d(x))
    return logits[0] if x.ndim == 1 else logits


def value_and_input_gradient(model: Classifier, x, y, loss: LossSpec, target=None):
    """Loss values, input gradients and logits in one forward/backward pass."""
    x = model._check_batch(x)
    xb = np.atleast_2d(x)
    logits, cache = model.forward_cache(xb)
    value, dlogits = loss_value(loss, logits, y, target=target)
    dlogits = np.atleast_2d(dlogits)
    grad = model.backward(cache, dlogits)
    if x.ndim == 1:
        return np.asarray(value).reshape(-1)[0], grad[0], logits[0]
    return value, grad, logits


def input_gradient(model: Classifier, x, y, loss: LossSpec, target=None) -> np.ndarray:
    """Gradient of ``loss`` with respect to the input ``x``."""
    return value_and_input_gradient(model, x, y, loss, target=target)[1]


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "test"
    n_classes: int | None = None

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or len(self.images) != len(self.labels):
            raise ValueError("images must be (N, d) with one label per row")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels must lie in [0, K)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.split, self.n_classes)


def make_desk_dataset(
    n_train: int = 2000,
    n_test: int = 500,
    n_classes: int = 10,
    side: int = 8,
    noise: float = 0.08,
    contrast: float = 0.12,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Procedural "mini-image" classification data.

    Each class owns a smooth template (a coarse random field upsampled to
    ``side x side``) centred on mid-grey; samples are the template plus
    Gaussian pixel noise, clipped to [0, 1].  Labels are balanced by
    construction.
    """
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(-1.0, 1.0, size=(n_classes, side // 2 + 1, side // 2 + 1))
    grid = np.linspace(0, coarse.shape[1] - 1, side)
    templates = np.empty((n_classes, side * side))
    for k in range(n_classes):
        # bilinear upsampling
        rows = np.array([np.interp(grid, np.arange(coarse.shape[2]), r) for r in coarse[k]])
        full = np.array([np.interp(grid, np.arange(coarse.shape[1]), c) for c in rows.T]).T
        templates[k] = 0.5 + contrast * full.ravel()

    def sample(n: int, split: str) -> Dataset:
        labels = np.arange(n) % n_classes
        rng.shuffle(labels)
        images = templates[labels] + noise * rng.standard_normal((n, side * side))
        return Dataset(np.clip(images, 0.0, 1.0), labels, split, n_classes)

    return sample(n_train, "train"), sample(n_test, "test")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 3e-3
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    adversarial: bool = False
    at_steps: int = 7
    at_epsilon: float = 0.031
    at_norm: str = "linf"

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.at_steps < 0 or self.at_epsilon < 0:
            raise ValueError("adversarial-training steps and epsilon must be non-negative")


def accuracy(model: Classifier, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float((model.predict(data.images) == data.labels).mean())


_CE = LossSpec("CE", "prob")


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _fit(data: Dataset, cfg: TrainConfig, perturb=None) -> Classifier:
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    dims = [data.dim, *cfg.hidden, data.n_classes]
    model = Classifier.initialize(dims, cfg.activation, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = _Adam(model.parameters(), cfg.learning_rate)
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = data.images[idx], data.labels[idx]
            if perturb is not None:
                xb = perturb(model, xb, yb)
            logits, cache = model.forward_cache(xb)
            value, dlogits = loss_value(_CE, logits, yb)
            batch_loss = float(value.mean())
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch starting {start}"
                )
            _, gw, gb = model.backward(cache, dlogits / len(idx), need_params=True)
            grads = [g for pair in zip(gw, gb) for g in pair]
            opt.step(model.parameters(), grads)
            total += batch_loss * len(idx)
        if not model.is_finite():
            raise TrainingDivergedError(f"non-finite parameters after epoch {epoch}")
        logger.debug("epoch %d mean loss %.4f", epoch, total / n)
    return model


def train_standard(data: Dataset, cfg: TrainConfig) -> Classifier:
    """Minibatch Adam on clean cross entropy."""
    return _fit(data, cfg)


def train_adversarial(data: Dataset, cfg: TrainConfig) -> Classifier:
    """PGD adversarial training: each minibatch is replaced by PGD examples.

    The inner attack ascends cross entropy for ``cfg.at_steps`` steps of size
    ``2.5 * eps / steps`` from a uniform random start in the epsilon ball.
    With ``at_steps == 0`` this is exactly :func:`train_standard`.
    """
    if cfg.at_steps == 0 or cfg.at_epsilon == 0:
        return _fit(data, cfg)
    from .attacks import pgd  # attacks depends on this module

    noise_rng = np.random.default_rng([cfg.seed, 2])

    def perturb(model, xb, yb):
        seeds = noise_rng.integers(0, 2**31, size=len(yb))
        return pgd(model, xb, yb, _CE, cfg.at_epsilon, cfg.at_norm, cfg.at_steps,
                   init="random", seed=seeds).x

    return _fit(data, cfg, perturb)


__all__ = [
    "Classifier",
    "Dataset",
    "TrainConfig",
    "TrainingDivergedError",
    "accuracy",
    "forward",
    "input_gradient",
    "make_desk_dataset",
    "softmax",
    "train_adversarial",
    "train_standard",
    "value_and_input_gradient",
]
