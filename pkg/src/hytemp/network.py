"""Dense feed-forward networks trained on the multi-output pinball loss.

A network maps D inputs to K·Q outputs; output ``k * Q + q`` is room ``k`` at
level ``q``. Zero hidden layers give the linear quantile model.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from hytemp.errors import InputError, NumericalError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("sigmoid", "relu", "tanh", "identity")

# (values (N, K), weight) pairs; the first is the data term, the second the physics term.
LossTargets = Sequence[tuple[np.ndarray, float]]


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_slope(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a**2
    return np.ones_like(z)


@dataclass(frozen=True)
class DenseNetwork:
    """Weights and biases of a fully connected network.

    Attributes:
        weights: Layer matrices of shape (fan_in, fan_out).
        biases: Layer bias vectors.
        activation: Activation of every hidden layer; the output layer is linear.
        n_rooms: K.
        n_levels: Q.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str
    n_rooms: int
    n_levels: int

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise InputError(
                f"unknown activation {self.activation!r} (expected one of {', '.join(ACTIVATIONS)})"
            )
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InputError("a network needs one bias vector per weight matrix")
        weights = tuple(np.array(w, dtype=float) for w in self.weights)
        biases = tuple(np.array(b, dtype=float).ravel() for b in self.biases)
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or w.shape[1] != b.size:
                raise InputError(f"layer {i} weight {w.shape} does not match bias {b.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise InputError(f"layer {i} expects {w.shape[0]} inputs, gets {weights[i - 1].shape[1]}")
        if weights[-1].shape[1] != self.n_rooms * self.n_levels:
            raise InputError(
                f"output width {weights[-1].shape[1]} is not rooms x levels "
                f"({self.n_rooms} x {self.n_levels})"
            )
        for array in (*weights, *biases):
            array.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list ``[W1, b1, W2, b2, ...]``."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> DenseNetwork:
        """Copy holding ``params`` in ``parameters()`` order."""
        return dataclasses.replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))

    def check_inputs(self, x: np.ndarray) -> np.ndarray:
        data = np.asarray(x, dtype=float)
        if data.ndim != 2 or data.shape[1] != self.n_inputs:
            width = data.shape[-1] if data.ndim else 0
            raise InputError(f"input has {width} features, model was trained on {self.n_inputs}")
        return data

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass reshaped to (N, K, Q)."""
        data = self.check_inputs(x)
        _, post = _forward(self.parameters(), self.activation, data)
        return post[-1].reshape(data.shape[0], self.n_rooms, self.n_levels)


def init_network(
    n_inputs: int,
    hidden: Sequence[int],
    n_rooms: int,
    n_levels: int,
    activation: str,
    rng: np.random.Generator,
    output_bias: np.ndarray | None = None,
) -> DenseNetwork:
    """Draw weights and biases uniformly from ±1/√fan_in.

    Args:
        output_bias: Optional (K, Q) starting values of the output biases.
    """
    sizes = [n_inputs, *hidden, n_rooms * n_levels]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    if output_bias is not None:
        biases[-1] = np.asarray(output_bias, dtype=float).reshape(-1)
    return DenseNetwork(tuple(weights), tuple(biases), activation, n_rooms, n_levels)


def pinball_objective(
    predictions: np.ndarray, targets: LossTargets, levels: np.ndarray
) -> tuple[float, list[float], np.ndarray]:
    """Weighted sum of mean pinball losses and its gradient.

    Each term is the pinball loss averaged over rows, rooms and levels. Terms
    with zero weight are evaluated for logging but left out of the total and
    of the gradient. At a kink the subgradient of the ``y >= ŷ`` branch is used.

    Returns:
        Total loss, the unweighted term values, and d(total)/d(predictions).
    """
    total = 0.0
    terms = []
    grad = np.zeros_like(predictions)
    scale = 1.0 / predictions.size
    for values, weight in targets:
        diff = values[:, :, None] - predictions
        above = diff >= 0
        terms.append(float(np.mean(np.where(above, levels * diff, (levels - 1.0) * diff))))
        if weight == 0:
            continue
        total += weight * terms[-1]
        grad += (weight * scale) * np.where(above, -levels, 1.0 - levels)
    return total, terms, grad


def loss_and_gradients(
    network: DenseNetwork, x: np.ndarray, targets: LossTargets, levels: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Objective value and its gradient for every parameter, by backpropagation."""
    data = network.check_inputs(x)
    pre, post = _forward(network.parameters(), network.activation, data)
    n = data.shape[0]
    predictions = post[-1].reshape(n, network.n_rooms, network.n_levels)
    total, _, grad = pinball_objective(predictions, targets, levels)
    return total, _backward(network.parameters(), network.activation, pre, post, grad.reshape(n, -1))


def _forward(
    params: Sequence[np.ndarray], activation: str, x: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    pre, post = [], [x]
    a = x
    last = len(params) // 2 - 1
    for i in range(last + 1):
        z = a @ params[2 * i] + params[2 * i + 1]
        a = z if i == last else _activate(activation, z)
        pre.append(z)
        post.append(a)
    return pre, post


def _backward(
    params: Sequence[np.ndarray],
    activation: str,
    pre: list[np.ndarray],
    post: list[np.ndarray],
    delta: np.ndarray,
) -> list[np.ndarray]:
    grads: list[np.ndarray] = []
    for i in range(len(params) // 2 - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(post[i].T @ delta)
        if i:
            back = delta @ params[2 * i].T
            delta = back * _activation_slope(activation, pre[i - 1], post[i])
    grads.reverse()
    return grads


@dataclass
class TrainingHistory:
    """Per-epoch losses of a gradient-trained model.

    Entry 0 describes the starting weights, before any update.
    """

    train_loss: list[float] = field(default_factory=list)
    data_loss: list[float] = field(default_factory=list)
    physics_loss: list[float] = field(default_factory=list)
    validation_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def record(
        self, total: float, terms: Sequence[float], validation: float, learning_rate: float
    ) -> None:
        self.train_loss.append(total)
        self.data_loss.append(terms[0])
        self.physics_loss.append(terms[1] if len(terms) > 1 else float("nan"))
        self.validation_loss.append(validation)
        self.learning_rate.append(learning_rate)

    @property
    def epochs(self) -> int:
        return max(len(self.train_loss) - 1, 0)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "train_loss": np.array(self.train_loss, dtype=float),
            "data_loss": np.array(self.data_loss, dtype=float),
            "physics_loss": np.array(self.physics_loss, dtype=float),
            "validation_loss": np.array(self.validation_loss, dtype=float),
            "learning_rate": np.array(self.learning_rate, dtype=float),
            "best_epoch": np.array(self.best_epoch),
            "stopped_early": np.array(self.stopped_early),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> TrainingHistory:
        return cls(
            train_loss=arrays["train_loss"].tolist(),
            data_loss=arrays["data_loss"].tolist(),
            physics_loss=arrays["physics_loss"].tolist(),
            validation_loss=arrays["validation_loss"].tolist(),
            learning_rate=arrays["learning_rate"].tolist(),
            best_epoch=int(arrays["best_epoch"]),
            stopped_early=bool(arrays["stopped_early"]),
        )


@dataclass(frozen=True)
class TrainSettings:
    """Optimizer settings of one training run.

    Attributes:
        learning_rate: Adam step size.
        max_epochs: Upper bound on passes over the data (0 leaves the network as is).
        patience: Epochs without improvement before stopping (or decaying the rate).
        batch_size: Mini-batch size; None trains on the full batch.
        min_delta: Improvement that resets the patience counter.
        decay_on_plateau: Halve the learning rate on a plateau instead of stopping,
            until it falls below ``min_learning_rate``.
        min_learning_rate: Floor of the decayed learning rate.
        seed: Seed of the batch shuffling.
    """

    learning_rate: float = 1e-3
    max_epochs: int = 1000
    patience: int = 10
    batch_size: int | None = 32
    min_delta: float = 0.0
    decay_on_plateau: bool = False
    min_learning_rate: float = 1e-8
    seed: int = 0


class Adam:
    """Adaptive moment estimation over a list of parameter arrays."""

    def __init__(
        self,
        params: Sequence[np.ndarray],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(
        self, params: list[np.ndarray], grads: Sequence[np.ndarray], learning_rate: float
    ) -> None:
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _evaluate(
    network: DenseNetwork, x: np.ndarray, targets: LossTargets, levels: np.ndarray
) -> tuple[float, list[float]]:
    total, terms, _ = pinball_objective(network.predict(x), targets, levels)
    return total, terms


def train_network(
    network: DenseNetwork,
    x: np.ndarray,
    targets: LossTargets,
    levels: np.ndarray,
    settings: TrainSettings,
    validation: tuple[np.ndarray, LossTargets] | None = None,
) -> tuple[DenseNetwork, TrainingHistory]:
    """Minimize the weighted pinball objective with Adam.

    The monitored loss is the validation objective when ``validation`` is
    given, else the training objective on all rows. The weights with the
    lowest monitored loss are returned; the starting weights compete too.

    Raises:
        InputError: For empty training data.
        NumericalError: If the loss becomes non-finite, naming the epoch.
    """
    data = network.check_inputs(x)
    n = data.shape[0]
    if n == 0:
        raise InputError("cannot train on zero rows")
    rng = np.random.default_rng(settings.seed)
    batch = n if settings.batch_size is None else min(settings.batch_size, n)
    params = [p.copy() for p in network.parameters()]
    optimizer = Adam(params)
    learning_rate = settings.learning_rate
    history = TrainingHistory()

    def monitored(net: DenseNetwork) -> float:
        if validation is None:
            return _evaluate(net, data, targets, levels)[0]
        return _evaluate(net, validation[0], validation[1], levels)[0]

    total, terms = _evaluate(network, data, targets, levels)
    best = monitored(network)
    history.record(total, terms, best, learning_rate)
    best_params = [p.copy() for p in params]
    wait = 0

    for epoch in range(1, settings.max_epochs + 1):
        order = rng.permutation(n) if batch < n else np.arange(n)
        sums = np.zeros(1 + len(targets))
        for start in range(0, n, batch):
            rows = order[start : start + batch]
            pre, post = _forward(params, network.activation, data[rows])
            predictions = post[-1].reshape(rows.size, network.n_rooms, network.n_levels)
            batch_targets = [(values[rows], weight) for values, weight in targets]
            loss, batch_terms, grad = pinball_objective(predictions, batch_targets, levels)
            if not np.isfinite(loss):
                raise NumericalError(f"training loss became non-finite at epoch {epoch}")
            grads = _backward(params, network.activation, pre, post, grad.reshape(rows.size, -1))
            optimizer.step(params, grads, learning_rate)
            sums += rows.size * np.array([loss, *batch_terms])
        means = sums / n
        current = network.with_parameters(params)
        score = monitored(current)
        if not np.isfinite(score):
            raise NumericalError(f"monitored loss became non-finite at epoch {epoch}")
        history.record(float(means[0]), means[1:].tolist(), score, learning_rate)
        logger.debug(f"Epoch {epoch}: train {means[0]:.6f}, monitored {score:.6f}")

        if score < best - settings.min_delta:
            best = score
            best_params = [p.copy() for p in params]
            history.best_epoch = epoch
            wait = 0
            continue
        wait += 1
        if wait < settings.patience:
            continue
        if settings.decay_on_plateau and learning_rate / 2.0 >= settings.min_learning_rate:
            learning_rate /= 2.0
            wait = 0
            continue
        history.stopped_early = True
        logger.info(f"Stopped after epoch {epoch}; best epoch {history.best_epoch}")
        break

    return network.with_parameters(best_params), history
