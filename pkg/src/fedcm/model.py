"""Minimal dense classifier with analytic gradients and an Adam optimizer.

All weights live in flat vectors so the rest of the system (clustering,
distance metrics, averaging) can treat models opaquely. Every operation is a
pure function of its inputs plus an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LayerShape:
    """Architecture descriptor: input width, hidden widths, class count."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden dims must be positive")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    @property
    def parameter_count(self) -> int:
        dims = self.layer_dims
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class WeightVector:
    """Flattened model parameters tied to a LayerShape."""

    shape: LayerShape
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size != self.shape.parameter_count:
            raise ValueError(
                f"expected {self.shape.parameter_count} parameters, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("weight vector contains non-finite entries")


@dataclass
class OptimizerState:
    """Adam moments carried across training calls."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, dim: int, learning_rate: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> "OptimizerState":
        return cls(np.zeros(dim), np.zeros(dim), 0, learning_rate, beta1, beta2, epsilon)

    def copy(self) -> "OptimizerState":
        return replace(self, first_moment=self.first_moment.copy(),
                       second_moment=self.second_moment.copy())


@dataclass(frozen=True)
class Batch:
    """Labeled samples: inputs (n, d) and integer labels (n,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ValueError("inputs must be (n, d) with one label per row")
        if inputs.shape[0] < 1:
            raise ValueError("batch must be nonempty")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


def _split_layers(w: WeightVector) -> list[tuple[np.ndarray, np.ndarray]]:
    dims = w.shape.layer_dims
    layers = []
    offset = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        mat = w.values[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = w.values[offset:offset + fan_out]
        offset += fan_out
        layers.append((mat, bias))
    return layers


def init_weights(shape: LayerShape, seed: int) -> WeightVector:
    """He-uniform weights (uniform in +-sqrt(6/fan_in)) with zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    dims = shape.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return WeightVector(shape, np.concatenate(chunks))


def _check_inputs(w: WeightVector, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != w.shape.input_dim:
        raise ValueError(
            f"inputs must be (n, {w.shape.input_dim}), got {inputs.shape}"
        )
    return inputs


def _forward_pass(w: WeightVector, inputs: np.ndarray):
    """Returns (per-layer activations, probabilities). ReLU hidden, softmax out."""
    layers = _split_layers(w)
    activations = [inputs]
    a = inputs
    for mat, bias in layers[:-1]:
        a = np.maximum(a @ mat + bias, 0.0)
        activations.append(a)
    mat, bias = layers[-1]
    logits = a @ mat + bias
    logits = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return activations, probs


def forward(w: WeightVector, inputs: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per input; rows sum to 1."""
    inputs = _check_inputs(w, inputs)
    _, probs = _forward_pass(w, inputs)
    return probs


def _check_batch(w: WeightVector, batch: Batch) -> None:
    if batch.inputs.shape[1] != w.shape.input_dim:
        raise ValueError("batch input width does not match model input_dim")
    if batch.labels.min() < 0 or batch.labels.max() >= w.shape.output_dim:
        raise ValueError("labels out of range for model output_dim")


def loss(w: WeightVector, batch: Batch) -> float:
    """Mean cross-entropy; probabilities floored at 1e-12 before the log."""
    _check_batch(w, batch)
    probs = forward(w, batch.inputs)
    picked = probs[np.arange(len(batch)), batch.labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def gradient(w: WeightVector, batch: Batch) -> WeightVector:
    """Backpropagation gradient of the mean cross-entropy loss."""
    _check_batch(w, batch)
    layers = _split_layers(w)
    activations, probs = _forward_pass(w, batch.inputs)
    n = len(batch)

    delta = probs.copy()
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n

    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        mat, _ = layers[i]
        a_prev = activations[i]
        g_mat = a_prev.T @ delta
        g_bias = delta.sum(axis=0)
        grads.append(g_bias)
        grads.append(g_mat.ravel())
        if i > 0:
            delta = (delta @ mat.T) * (activations[i] > 0)
    grads.reverse()
    return WeightVector(w.shape, np.concatenate(grads))


def adam_step(w: WeightVector, grad: WeightVector, opt: OptimizerState) -> WeightVector:
    """One in-place Adam update of `opt`; returns the new weights."""
    opt.step_count += 1
    opt.first_moment = opt.beta1 * opt.first_moment + (1 - opt.beta1) * grad.values
    opt.second_moment = opt.beta2 * opt.second_moment + (1 - opt.beta2) * grad.values ** 2
    m_hat = opt.first_moment / (1 - opt.beta1 ** opt.step_count)
    v_hat = opt.second_moment / (1 - opt.beta2 ** opt.step_count)
    new = w.values - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon)
    return WeightVector(w.shape, new)


def train(w: WeightVector, data: Batch, opt: OptimizerState, epochs: int,
          minibatch_size: int, patience: int, holdout_fraction: float,
          seed: int) -> tuple[WeightVector, OptimizerState]:
    """Adam fine-tuning over shuffled minibatches with early stopping.

    A holdout slice of the round's data is carved off up front; when its loss
    fails to improve for `patience` consecutive epochs, training stops and the
    best-holdout weights are returned. The optimizer state is mutated in place
    and returned so it carries across rounds.
    """
    if epochs < 1 or minibatch_size < 1:
        raise ValueError("epochs and minibatch_size must be >= 1")
    _check_batch(w, data)
    rng = np.random.default_rng(seed)
    n = len(data)

    n_hold = max(1, int(round(n * holdout_fraction))) if holdout_fraction > 0 else 0
    if n_hold >= n:
        n_hold = n - 1  # never leave the training side empty
    order = rng.permutation(n)
    holdout = data.take(order[:n_hold]) if n_hold > 0 else None
    train_part = data.take(order[n_hold:])
    n_train = len(train_part)

    best_w = w
    best_loss = np.inf  # best over completed epochs
    stale = 0
    for _ in range(epochs):
        idx = rng.permutation(n_train)
        for start in range(0, n_train, minibatch_size):
            mb = train_part.take(idx[start:start + minibatch_size])
            w = adam_step(w, gradient(w, mb), opt)
        if holdout is None:
            best_w = w
            continue
        hold_loss = loss(w, holdout)
        if hold_loss < best_loss:
            best_loss = hold_loss
            best_w = w
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best_w, opt


def accuracy(w: WeightVector, batch: Batch) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    _check_batch(w, batch)
    probs = forward(w, batch.inputs)
    return float((probs.argmax(axis=1) == batch.labels).mean())
