"""Differentiable classifiers.

The engine only relies on two methods: ``predict_proba`` on a batch of
images (N, H, W, C) returning (N, K) probabilities, and ``input_gradient``
returning the derivative of one class probability with respect to each
input pixel. :class:`MLPClassifier` is the trainable reference model.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import DimensionError, Image, ParameterError
from .corpus import AnnotatedSample, stack_images

log = logging.getLogger(__name__)


class GradientUnavailable(NotImplementedError):
    """The model has no analytic input gradient."""


class TrainingFailure(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    "softplus": (lambda a: np.logaddexp(0.0, a), lambda a, h: 0.5 * (1.0 + np.tanh(0.5 * a))),
}


class ClassifierModel:
    input_shape: tuple[int, int, int]
    n_classes: int

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def input_gradient(self, x: np.ndarray, class_index: int) -> np.ndarray:
        raise GradientUnavailable(f"{type(self).__name__} has no analytic input gradient")

    def _batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise DimensionError(f"expected images of shape {self.input_shape}, got {x.shape[1:]}")
        return x

    def _check_class(self, class_index: int):
        if not 0 <= class_index < self.n_classes:
            raise ParameterError(f"class index {class_index} not in 0..{self.n_classes - 1}")


class LinearSoftmaxClassifier(ClassifierModel):
    """Multinomial logistic regression on the flattened image."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, input_shape):
        self.input_shape = tuple(input_shape)
        self.W = np.asarray(weights, dtype=np.float64)  # (D, K)
        self.b = np.asarray(bias, dtype=np.float64)
        self.n_classes = self.W.shape[1]

    def logits(self, x):
        x = self._batch(x)
        return x.reshape(len(x), -1) @ self.W + self.b

    def predict_proba(self, x):
        return softmax(self.logits(x))

    def input_gradient(self, x, class_index):
        self._check_class(class_index)
        x = self._batch(x)
        p = softmax(x.reshape(len(x), -1) @ self.W + self.b)
        dz = -p[:, class_index : class_index + 1] * p
        dz[:, class_index] += p[:, class_index]
        return (dz @ self.W.T).reshape(x.shape)


class CallableClassifier(ClassifierModel):
    """Wrap a function on image batches; no gradients."""

    def __init__(self, fn, input_shape, n_classes: int):
        self.fn = fn
        self.input_shape = tuple(input_shape)
        self.n_classes = n_classes

    def predict_proba(self, x):
        return np.asarray(self.fn(self._batch(x)), dtype=np.float64)

    def input_gradient(self, x, class_index):
        # piecewise-constant wrappers: report a zero gradient instead of failing
        if getattr(self, "zero_gradient", False):
            return np.zeros_like(self._batch(x))
        return super().input_gradient(x, class_index)


def threshold_on_mean_classifier(input_shape, level: float, n_classes: int = 2) -> CallableClassifier:
    """Class 0 with certainty while the mean intensity stays >= ``level``.

    Paired with an all-ones input and an all-zeros baseline, the mean
    intensity of the interpolated image is ``1 - mean(mask)``, so the
    decision flips exactly when the mask mass exceeds ``1 - level``.
    """

    def fn(x):
        mean = x.reshape(len(x), -1).mean(axis=1)
        p = np.zeros((len(x), n_classes))
        hit = mean >= level
        p[hit, 0] = 1.0
        p[~hit, 1] = 1.0
        return p

    model = CallableClassifier(fn, input_shape, n_classes)
    model.zero_gradient = True
    return model


class MLPClassifier(ClassifierModel):
    """One hidden layer with a smooth activation and a softmax head."""

    def __init__(self, W1, b1, W2, b2, input_shape, activation: str = "tanh"):
        if activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}")
        self.input_shape = tuple(input_shape)
        self.W1 = np.asarray(W1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.W2 = np.asarray(W2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.activation = activation
        self.n_classes = self.W2.shape[1]
        self.meta: dict = {}

    @classmethod
    def zeros(cls, input_shape, hidden: int, n_classes: int, activation="tanh"):
        D = int(np.prod(input_shape))
        return cls(np.zeros((D, hidden)), np.zeros(hidden), np.zeros((hidden, n_classes)),
                   np.zeros(n_classes), input_shape, activation)

    @classmethod
    def init_random(cls, input_shape, hidden: int, n_classes: int, rng, activation="tanh"):
        D = int(np.prod(input_shape))
        W1 = rng.standard_normal((D, hidden)) / np.sqrt(D)
        W2 = rng.standard_normal((hidden, n_classes)) / np.sqrt(hidden)
        return cls(W1, np.zeros(hidden), W2, np.zeros(n_classes), input_shape, activation)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def _forward(self, X):
        act, _ = _ACTIVATIONS[self.activation]
        a = X @ self.W1 + self.b1
        h = act(a)
        return a, h, softmax(h @ self.W2 + self.b2)

    def predict_proba(self, x):
        x = self._batch(x)
        return self._forward(x.reshape(len(x), -1))[2]

    def input_gradient(self, x, class_index):
        self._check_class(class_index)
        x = self._batch(x)
        _, dact = _ACTIVATIONS[self.activation]
        a, h, p = self._forward(x.reshape(len(x), -1))
        dz = -p[:, class_index : class_index + 1] * p
        dz[:, class_index] += p[:, class_index]
        da = (dz @ self.W2.T) * dact(a, h)
        return (da @ self.W1.T).reshape(x.shape)

    def loss_and_grads(self, X, y):
        """Mean cross-entropy on flattened inputs and its parameter gradients."""
        _, dact = _ACTIVATIONS[self.activation]
        a, h, p = self._forward(X)
        n = len(X)
        loss = -np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300)))
        dz = p.copy()
        dz[np.arange(n), y] -= 1.0
        dz /= n
        gW2 = h.T @ dz
        gb2 = dz.sum(axis=0)
        da = (dz @ self.W2.T) * dact(a, h)
        gW1 = X.T @ da
        gb1 = da.sum(axis=0)
        return loss, {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def evaluate(model: ClassifierModel, image) -> np.ndarray:
    """Probability vector for a single image."""
    values = image.values if isinstance(image, Image) else image
    return model.predict_proba(np.asarray(values)[None])[0]


def evaluate_batch(model: ClassifierModel, images) -> np.ndarray:
    return model.predict_proba(np.asarray(images))


def input_gradient(model: ClassifierModel, image, class_index: int) -> np.ndarray:
    values = image.values if isinstance(image, Image) else image
    return model.input_gradient(np.asarray(values)[None], class_index)[0]


def finite_difference_gradient(model: ClassifierModel, image, class_index: int, h: float = 1e-4,
                               coords=None) -> np.ndarray:
    """Central differences of one class probability, coordinate by coordinate.

    ``coords`` restricts the probe to a list of (row, col, channel) indices;
    other entries of the result are NaN. Very small ``h`` loses precision to
    cancellation; no error is raised.
    """
    if not h > 0:
        raise ParameterError(f"h must be > 0, got {h}")
    x = np.array(image.values if isinstance(image, Image) else image, dtype=np.float64)
    if coords is None:
        coords = list(np.ndindex(*x.shape))
        out = np.empty_like(x)
    else:
        out = np.full_like(x, np.nan)
    for idx in coords:
        idx = tuple(int(i) for i in idx)
        orig = x[idx]
        x[idx] = orig + h
        fp = model.predict_proba(x[None])[0, class_index]
        x[idx] = orig - h
        fm = model.predict_proba(x[None])[0, class_index]
        x[idx] = orig
        out[idx] = (fp - fm) / (2.0 * h)
    return out


@dataclass
class TrainingConfig:
    hidden: int = 64
    activation: str = "tanh"
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 60
    val_fraction: float = 0.2
    target_accuracy: float = 0.95
    min_accuracy: float = 0.90
    seed: int = 0


@dataclass
class TrainingReport:
    accuracy: float
    epochs: int
    history: list[dict] = field(default_factory=list)


def split_corpus(corpus, val_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    n_val = max(1, int(round(val_fraction * len(corpus))))
    val = [corpus[i] for i in order[:n_val]]
    train = [corpus[i] for i in order[n_val:]]
    return train, val


def _round_to_f32(model: MLPClassifier):
    # parameters are stored as float32; keep the in-memory model identical to its file
    for name, arr in model.params.items():
        setattr(model, name, arr.astype(np.float32).astype(np.float64))


def train_reference_model(corpus: list[AnnotatedSample], config: TrainingConfig | None = None):
    """Mini-batch gradient descent (heavy-ball momentum) on cross-entropy.

    Stops at ``target_accuracy`` on the validation split or when the epoch
    budget is spent; raises :class:`TrainingFailure` below ``min_accuracy``.
    Returns ``(model, report)``.
    """
    config = config or TrainingConfig()
    train, val = split_corpus(corpus, config.val_fraction, config.seed)
    Xtr, ytr = stack_images(train)
    Xva, yva = stack_images(val)
    input_shape = Xtr.shape[1:]
    K = int(max(ytr.max(), yva.max())) + 1
    Xtr = Xtr.reshape(len(Xtr), -1)
    Xva = Xva.reshape(len(Xva), -1)

    rng = np.random.default_rng(config.seed)
    model = MLPClassifier.init_random(input_shape, config.hidden, K, rng, config.activation)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    history = []
    acc = 0.0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(Xtr))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = model.loss_and_grads(Xtr[idx], ytr[idx])
            losses.append(loss)
            for k, g in grads.items():
                velocity[k] = config.momentum * velocity[k] - config.learning_rate * g
                setattr(model, k, getattr(model, k) + velocity[k])
        acc = float(np.mean(model._forward(Xva)[2].argmax(axis=1) == yva))
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_accuracy": acc})
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch, history[-1]["loss"], acc)
        if acc >= config.target_accuracy:
            break

    _round_to_f32(model)
    acc = float(np.mean(model._forward(Xva)[2].argmax(axis=1) == yva))
    if acc < config.min_accuracy:
        raise TrainingFailure(
            f"validation accuracy {acc:.3f} below {config.min_accuracy} after {epoch} epochs", history
        )
    model.meta = {"seed": config.seed, "accuracy": acc, "epochs": epoch}
    return model, TrainingReport(accuracy=acc, epochs=epoch, history=history)
