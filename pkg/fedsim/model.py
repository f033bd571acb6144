"""
The local learner: a ReLU MLP with softmax cross-entropy, manual
backpropagation and a plain SGD loop.

Every strategy trains through `local_train`. FedProx and Scaffold only differ
in the gradient modifier they pass to it.
"""

from __future__ import annotations

import dataclasses
import math
import os
from typing import (
    Any,
    Callable,
    Dict,
    Iterator,
    List,
    NamedTuple,
    Protocol,
    Sequence,
    Tuple,
    Union,
    runtime_checkable,
)

import numpy as np
import numpy.typing as npt
from sklearn import metrics

from fedsim import features
from fedsim.data import Dataset
from fedsim.errors import ConfigurationError, DivergenceError, SchemaError
from fedsim.numerics import Matrix, SeededRng, as_matrix

ParameterVector = npt.NDArray[np.float64]
"""Flat float64 vector holding every weight and bias of a model."""

GradientModifier = Callable[[ParameterVector, ParameterVector], ParameterVector]
"""Maps `(raw_gradient, current_params)` to the gradient SGD applies."""

DEFAULT_HIDDEN = (64, 32)
DEFAULT_BATCH_SIZE = 256


@dataclasses.dataclass(frozen=True)
class MlpConfig:
    """
    Layer sizes of an MLP: input features, hidden widths, output classes.

    Hidden layers use ReLU. The output layer produces logits.
    """

    layer_sizes: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(size) for size in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ConfigurationError("An MLP needs at least an input and an output layer")

        if any(size < 1 for size in self.layer_sizes):
            raise ConfigurationError(f"Layer sizes must be >= 1, got {self.layer_sizes}")

    @classmethod
    def for_data(
        cls, n_features: int, n_classes: int, hidden: Sequence[int] = DEFAULT_HIDDEN
    ) -> MlpConfig:
        return cls((n_features, *hidden, n_classes))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def layers(self) -> List[Tuple[int, int]]:
        """`(fan_in, fan_out)` of every affine layer"""
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def param_count(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layers)

    def unpack(self, p: ParameterVector) -> List[Tuple[Matrix, np.ndarray]]:
        """
        Views of `(weights, bias)` per layer.

        Each layer occupies `fan_in * fan_out` row-major weights followed by
        `fan_out` biases.
        """
        if p.shape != (self.param_count,):
            raise ConfigurationError(
                f"Expected {self.param_count} parameters, got shape {p.shape}"
            )

        views = []
        offset = 0
        for fan_in, fan_out in self.layers:
            weights = p[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            views.append((weights, p[offset : offset + fan_out]))
            offset += fan_out

        return views


@dataclasses.dataclass(frozen=True)
class Batch:
    features: Matrix
    labels: npt.NDArray[np.int64]

    def __post_init__(self):
        if not len(self.labels):
            raise ConfigurationError("A batch needs at least one row")

        if self.features.shape[0] != len(self.labels):
            raise ConfigurationError("Batch features and labels have different lengths")

    @classmethod
    def of(cls, dataset: Dataset) -> Batch:
        return cls(features=dataset.features, labels=dataset.labels)


@runtime_checkable
class LocalObjective(Protocol):
    """
    The loss a client minimizes.

    `batches` yields opaque batch handles for one epoch, in an order drawn
    from the given stream. `loss_and_gradient` evaluates one handle.
    """

    @property
    def sample_count(self) -> int: ...

    def loss_and_gradient(
        self, params: ParameterVector, batch: Any = None
    ) -> Tuple[float, ParameterVector]: ...

    def batches(self, rng: SeededRng, batch_size: int) -> Iterator[Any]: ...


def init_params(cfg: MlpConfig, rng: SeededRng) -> ParameterVector:
    """He-uniform weights in `±sqrt(6 / fan_in)`, zero biases"""
    chunks = []
    for fan_in, fan_out in cfg.layers:
        limit = math.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(fan_in * fan_out, -limit, limit))
        chunks.append(np.zeros(fan_out))

    return np.concatenate(chunks)


def _features_of(cfg: MlpConfig, x: Union[Batch, Matrix]) -> Matrix:
    features = x.features if isinstance(x, Batch) else as_matrix(x)
    if features.shape[1] != cfg.n_inputs:
        raise ConfigurationError(
            f"Model expects {cfg.n_inputs} features, got {features.shape[1]}"
        )

    return features


def forward(cfg: MlpConfig, p: ParameterVector, x: Union[Batch, Matrix]) -> Matrix:
    """Logits of a batch (no softmax)"""
    hidden = _features_of(cfg, x)
    layers = cfg.unpack(p)
    for weights, bias in layers[:-1]:
        hidden = np.maximum(hidden @ weights + bias, 0.0)

    weights, bias = layers[-1]
    return hidden @ weights + bias


def cross_entropy(logits: Matrix, labels: npt.NDArray[np.int64]) -> np.ndarray:
    """Per-row softmax cross-entropy, stabilized by max-subtraction"""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return log_norm - shifted[np.arange(len(labels)), labels]


def loss_and_gradient(
    cfg: MlpConfig, p: ParameterVector, batch: Batch
) -> Tuple[float, ParameterVector]:
    """
    Mean softmax cross-entropy of a batch and its gradient.

    Returns:
        The loss and a gradient with the same layout as `p`.
    """
    layers = cfg.unpack(p)
    inputs = [_features_of(cfg, batch)]
    pre_activations = []
    for index, (weights, bias) in enumerate(layers):
        z = inputs[-1] @ weights + bias
        pre_activations.append(z)
        if index < len(layers) - 1:
            inputs.append(np.maximum(z, 0.0))

    logits = pre_activations[-1]
    n_rows = len(batch.labels)
    rows = np.arange(n_rows)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(total[:, 0]) - shifted[rows, batch.labels]))

    delta = exp / total
    delta[rows, batch.labels] -= 1.0
    delta /= n_rows

    grads = [None] * len(layers)
    for index in range(len(layers) - 1, -1, -1):
        weights, _ = layers[index]
        grads[index] = (inputs[index].T @ delta, delta.sum(axis=0))
        if index:
            delta = (delta @ weights.T) * (pre_activations[index - 1] > 0)

    return loss, np.concatenate([part.ravel() for pair in grads for part in pair])


class MlpObjective:
    """Cross-entropy of an MLP over one client's dataset"""

    def __init__(self, cfg: MlpConfig, dataset: Dataset):
        if dataset.n_features != cfg.n_inputs:
            raise SchemaError(
                f"Dataset has {dataset.n_features} features, model expects {cfg.n_inputs}"
            )

        if dataset.n_classes > cfg.n_outputs:
            raise SchemaError(
                f"Dataset has {dataset.n_classes} classes, model outputs {cfg.n_outputs}"
            )

        if not dataset.n_rows:
            raise ConfigurationError("A client objective needs at least one row")

        self.cfg = cfg
        self.dataset = dataset

    @property
    def sample_count(self) -> int:
        return self.dataset.n_rows

    def batches(self, rng: SeededRng, batch_size: int) -> Iterator[np.ndarray]:
        order = rng.permutation(self.dataset.n_rows)
        for start in range(0, len(order), batch_size):
            yield order[start : start + batch_size]

    def loss_and_gradient(
        self, params: ParameterVector, batch: Union[np.ndarray, None] = None
    ) -> Tuple[float, ParameterVector]:
        rows = self.dataset if batch is None else self.dataset.take(batch)
        return loss_and_gradient(self.cfg, params, Batch.of(rows))


class QuadraticObjective:
    """
    `½ (w - a)ᵀ diag(A) (w - a)`, exactly differentiable.

    Every epoch is `steps_per_epoch` full-gradient steps.
    """

    def __init__(
        self,
        center: npt.ArrayLike,
        curvature: npt.ArrayLike,
        steps_per_epoch: int = 1,
        sample_count: int = 1,
    ):
        self.center = np.asarray(center, dtype=np.float64)
        self.curvature = np.asarray(curvature, dtype=np.float64)
        if self.center.shape != self.curvature.shape or np.any(self.curvature <= 0):
            raise ConfigurationError("Curvature must be positive and match the center's shape")

        self.steps_per_epoch = steps_per_epoch
        self._sample_count = sample_count

    @property
    def sample_count(self) -> int:
        return self._sample_count

    def batches(self, rng: SeededRng, batch_size: int) -> Iterator[None]:
        for _ in range(self.steps_per_epoch):
            yield None

    def loss_and_gradient(
        self, params: ParameterVector, batch: Any = None
    ) -> Tuple[float, ParameterVector]:
        diff = params - self.center
        return float(0.5 * np.sum(self.curvature * diff * diff)), self.curvature * diff


def identity_modifier(gradient: ParameterVector, params: ParameterVector) -> ParameterVector:
    return gradient


def proximal_modifier(mu: float, anchor: ParameterVector) -> GradientModifier:
    """
    Adds the gradient of `(mu / 2) ||w - anchor||²`.

    `mu = 0` disables the term and leaves gradients untouched.
    """
    if not mu >= 0 or not math.isfinite(mu):
        raise ConfigurationError(f"mu must be finite and >= 0, got {mu}")

    if mu == 0:
        return identity_modifier

    anchor = np.array(anchor, dtype=np.float64)

    def _proximal(gradient: ParameterVector, params: ParameterVector) -> ParameterVector:
        return gradient + mu * (params - anchor)

    return _proximal


def scaffold_modifier(
    server_control: ParameterVector, client_control: ParameterVector
) -> GradientModifier:
    """Corrects every step by `c - c_i`"""
    correction = np.asarray(server_control) - np.asarray(client_control)
    if not np.any(correction):
        return identity_modifier

    def _scaffold(gradient: ParameterVector, params: ParameterVector) -> ParameterVector:
        return gradient + correction

    return _scaffold


class TrainResult(NamedTuple):
    params: ParameterVector
    mean_loss: float
    steps: int


def local_train(
    obj: LocalObjective,
    p0: ParameterVector,
    epochs: int,
    lr: float,
    batch_size: int,
    modifier: GradientModifier = identity_modifier,
    rng: Union[SeededRng, None] = None,
    on_step: Union[Callable[[int, ParameterVector], None], None] = None,
) -> TrainResult:
    """
    Run `epochs` passes of minibatch SGD.

    Every step applies `p <- p - lr * modifier(g, p)`. Batch order is reshuffled
    each epoch from `rng`.

    Args:
        obj: The client objective.
        p0: Starting parameters. Not modified.
        epochs: Full passes over the objective's batches.
        lr: Step size. 0 leaves the parameters unchanged.
        batch_size: Rows per minibatch.
        modifier: Rewrites the raw gradient before the step.
        rng: Stream that orders the batches.
        on_step: Called with the step index and the applied gradient.

    Raises:
        DivergenceError: A loss, gradient or parameter became non-finite.
    """
    if epochs < 1:
        raise ConfigurationError(f"epochs must be >= 1, got {epochs}")

    if not lr >= 0 or not math.isfinite(lr):
        raise ConfigurationError(f"Learning rate must be finite and >= 0, got {lr}")

    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")

    rng = rng or SeededRng(0)
    params = np.array(p0, dtype=np.float64)
    losses = []
    steps = 0
    for _ in range(epochs):
        for batch in obj.batches(rng, batch_size):
            loss, gradient = obj.loss_and_gradient(params, batch)
            if not math.isfinite(loss) or not np.all(np.isfinite(gradient)):
                raise DivergenceError(f"Non-finite loss {loss}", step=steps)

            gradient = modifier(gradient, params)
            if on_step is not None:
                on_step(steps, gradient)

            params = params - lr * gradient
            if not np.all(np.isfinite(params)):
                raise DivergenceError("Parameters became non-finite", step=steps)

            losses.append(loss)
            steps += 1

    mean_loss = float(np.mean(losses)) if losses else 0.0
    return TrainResult(params=params, mean_loss=mean_loss, steps=steps)


def _logits_in_chunks(
    cfg: MlpConfig, p: ParameterVector, test: Dataset
) -> Iterator[Tuple[Matrix, np.ndarray]]:
    if not test.n_rows:
        raise ConfigurationError("Cannot evaluate on an empty test set")

    chunk = features.eval_batch_size()
    for start in range(0, test.n_rows, chunk):
        rows = slice(start, start + chunk)
        yield forward(cfg, p, test.features[rows]), test.labels[rows]


def evaluate(cfg: MlpConfig, p: ParameterVector, test: Dataset) -> Tuple[float, float]:
    """
    Accuracy and mean cross-entropy.

    Predictions are the argmax of the logits. Ties go to the lowest class index.
    """
    correct = 0
    total_loss = 0.0
    for logits, labels in _logits_in_chunks(cfg, p, test):
        correct += int(np.sum(np.argmax(logits, axis=1) == labels))
        total_loss += float(np.sum(cross_entropy(logits, labels)))

    return correct / test.n_rows, total_loss / test.n_rows


def predict(cfg: MlpConfig, p: ParameterVector, test: Dataset) -> npt.NDArray[np.int64]:
    return np.concatenate(
        [np.argmax(logits, axis=1) for logits, _ in _logits_in_chunks(cfg, p, test)]
    )


def classification_report(
    cfg: MlpConfig, p: ParameterVector, test: Dataset
) -> Dict[str, float]:
    """Accuracy plus macro precision, recall and F1 over every class"""
    predicted = predict(cfg, p, test)
    precision, recall, f1, _ = metrics.precision_recall_fscore_support(
        test.labels,
        predicted,
        labels=list(range(test.n_classes)),
        average="macro",
        zero_division=0,
    )
    return {
        "accuracy": float(metrics.accuracy_score(test.labels, predicted)),
        "precision": float(precision),
        "recall": float(recall),
        "f1": float(f1),
    }


_LENGTH = np.dtype("<u4")
_VALUE = np.dtype("<f8")


def encode_vector(v: ParameterVector) -> bytes:
    """Little-endian u32 length followed by little-endian float64 values"""
    if len(v) > np.iinfo(_LENGTH).max:
        raise ConfigurationError("Vector too long to serialize")

    return np.array([len(v)], dtype=_LENGTH).tobytes() + np.asarray(v, dtype=_VALUE).tobytes()


def decode_vector(buffer: bytes, offset: int = 0) -> Tuple[ParameterVector, int]:
    """Decode one vector, returning it and the offset just past it"""
    if len(buffer) < offset + _LENGTH.itemsize:
        raise SchemaError("Truncated vector header")

    (length,) = np.frombuffer(buffer, dtype=_LENGTH, count=1, offset=offset)
    start = offset + _LENGTH.itemsize
    end = start + int(length) * _VALUE.itemsize
    if len(buffer) < end:
        raise SchemaError("Truncated vector values")

    values = np.frombuffer(buffer, dtype=_VALUE, count=int(length), offset=start)
    return values.astype(np.float64), end


def write_vectors(path: "str | os.PathLike[str]", vectors: Sequence[ParameterVector]) -> None:
    with open(path, "wb") as f:
        for vector in vectors:
            f.write(encode_vector(vector))


def read_vectors(path: "str | os.PathLike[str]") -> List[ParameterVector]:
    with open(path, "rb") as f:
        buffer = f.read()

    vectors = []
    offset = 0
    while offset < len(buffer):
        vector, offset = decode_vector(buffer, offset)
        vectors.append(vector)

    return vectors
