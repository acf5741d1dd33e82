"""
Fully connected ReLU network trained by plain mini-batch gradient descent.
Shared by the fnn transform (hidden-layer features) and the fnn learner.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from factorAug.errors import NumericalError

logger = logging.getLogger(__name__)

LOSSES = ("squared", "logistic")


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(d_out: np.ndarray, pre_activation: np.ndarray) -> np.ndarray:
    d_in = d_out.copy()
    d_in[pre_activation <= 0] = 0.0
    return d_in


def dropout_forward(x: np.ndarray, rate: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: kept units are scaled by 1/(1-rate) so inference needs no rescaling."""
    mask = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return x * mask, mask


def loss_value(output: np.ndarray, y: np.ndarray, loss: str) -> float:
    if loss == "squared":
        return float(0.5 * np.mean((output - y) ** 2))
    return float(np.mean(np.logaddexp(0.0, output) - y * output))


def loss_gradient(output: np.ndarray, y: np.ndarray, loss: str) -> np.ndarray:
    n = output.shape[0]
    if loss == "squared":
        return (output - y) / n
    return (expit(output) - y) / n


class FeedForwardNetwork:
    """
    ReLU network x -> A(L+1)(relu(A(L)(... relu(A(1)(x)))) with a linear head.

    Weights are stored as (W, b) pairs with W of shape (fan_in, fan_out).
    Hidden layers use He-normal initialization; the head starts at zero
    unless zero_head is False.
    """

    def __init__(self, input_dim: int, hidden_widths: Sequence[int], output_dim: int = 1,
                 dropout: float = 0.0, seed: int = 0, zero_head: bool = True):
        if not hidden_widths or any(w < 1 for w in hidden_widths):
            raise ValueError(f"Hidden widths must be >= 1, got {list(hidden_widths)}")
        if not (0.0 <= dropout < 1.0):
            raise ValueError(f"Dropout rate must lie in [0, 1), got {dropout}")

        self.input_dim = input_dim
        self.hidden_widths = tuple(int(w) for w in hidden_widths)
        self.output_dim = output_dim
        self.dropout = dropout
        self.rng = np.random.default_rng(seed)

        self.params: List[Tuple[np.ndarray, np.ndarray]] = []
        fan_in = input_dim
        for width in self.hidden_widths:
            W = self.rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=(fan_in, width))
            self.params.append((W, np.zeros(width)))
            fan_in = width
        if zero_head:
            head = np.zeros((fan_in, output_dim))
        else:
            head = self.rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, output_dim))
        self.params.append((head, np.zeros(output_dim)))

    def forward(self, X: np.ndarray, training: bool = False) -> Tuple[np.ndarray, List[Dict]]:
        """Run the network; caches are kept for the backward pass."""
        caches = []
        h = X
        for W, b in self.params[:-1]:
            z = h @ W + b
            a = relu_forward(z)
            mask = None
            if training and self.dropout > 0:
                a, mask = dropout_forward(a, self.dropout, self.rng)
            caches.append({"input": h, "pre": z, "mask": mask})
            h = a
        W, b = self.params[-1]
        caches.append({"input": h})
        return h @ W + b, caches

    def hidden(self, X: np.ndarray) -> np.ndarray:
        """Activations of the last hidden layer at inference time."""
        h = X
        for W, b in self.params[:-1]:
            h = relu_forward(h @ W + b)
        return h

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        output, _ = self.forward(X, training=False)
        return output

    def loss_and_gradients(self, X: np.ndarray, y: np.ndarray, loss: str,
                           training: bool = False) -> Tuple[float, List[Tuple[np.ndarray, np.ndarray]]]:
        """
        Loss and analytic gradients with respect to every (W, b) pair.

        Args:
            X: Inputs, shape (n, input_dim)
            y: Targets, shape (n, output_dim)
            loss: 'squared' (0.5 * mean squared error) or 'logistic' (mean log-loss on logits)
            training: Whether dropout is active
        """
        output, caches = self.forward(X, training=training)
        value = loss_value(output, y, loss)
        d_out = loss_gradient(output, y, loss)

        grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(self.params)
        W, _ = self.params[-1]
        head_input = caches[-1]["input"]
        grads[-1] = (head_input.T @ d_out, d_out.sum(axis=0))
        d_h = d_out @ W.T

        for layer in range(len(self.params) - 2, -1, -1):
            cache = caches[layer]
            if cache["mask"] is not None:
                d_h = d_h * cache["mask"]
            d_z = relu_backward(d_h, cache["pre"])
            W, _ = self.params[layer]
            grads[layer] = (cache["input"].T @ d_z, d_z.sum(axis=0))
            d_h = d_z @ W.T

        return value, grads

    def train(self, X: np.ndarray, y: np.ndarray, loss: str, epochs: int,
              learn_rate: float, batch_size: int) -> Dict[str, object]:
        """
        Mini-batch gradient descent.

        Returns:
            dict with initial_loss, final_loss and the per-epoch loss history

        Raises:
            NumericalError: the loss became non-finite (epoch reported)
        """
        if loss not in LOSSES:
            raise ValueError(f"Unknown loss '{loss}'")
        y = y.reshape(X.shape[0], -1)
        n = X.shape[0]
        initial = loss_value(self.predict_raw(X), y, loss)
        history = []

        for epoch in range(1, epochs + 1):
            order = self.rng.permutation(n)
            for start in range(0, n, batch_size):
                batch = order[start:start + batch_size]
                value, grads = self.loss_and_gradients(X[batch], y[batch], loss, training=True)
                if not np.isfinite(value):
                    raise NumericalError(f"Non-finite training loss at epoch {epoch}")
                self.params = [(W - learn_rate * dW, b - learn_rate * db)
                               for (W, b), (dW, db) in zip(self.params, grads)]
            epoch_loss = loss_value(self.predict_raw(X), y, loss)
            if not np.isfinite(epoch_loss):
                raise NumericalError(f"Non-finite training loss at epoch {epoch}")
            history.append(epoch_loss)
            logger.debug(f"epoch {epoch}: loss {epoch_loss:.6g}")

        return {
            "initial_loss": initial,
            "final_loss": history[-1] if history else initial,
            "history": history,
        }

    def weights(self) -> Dict[str, np.ndarray]:
        """Flat name -> array mapping (W1, b1, ..., W{L+1}, b{L+1})."""
        state = {}
        for i, (W, b) in enumerate(self.params, start=1):
            state[f"W{i}"] = W
            state[f"b{i}"] = b
        return state

    @classmethod
    def from_weights(cls, state: Dict[str, np.ndarray], dropout: float = 0.0) -> "FeedForwardNetwork":
        n_layers = len([k for k in state if k.startswith("W")])
        widths = [state[f"W{i}"].shape[1] for i in range(1, n_layers)]
        net = cls(state["W1"].shape[0], widths, state[f"W{n_layers}"].shape[1], dropout=dropout)
        net.params = [(np.array(state[f"W{i}"]), np.array(state[f"b{i}"]).ravel())
                      for i in range(1, n_layers + 1)]
        return net


def binary_targets(y: np.ndarray) -> Optional[np.ndarray]:
    """Map a two-valued response to {0, 1} (larger label -> 1); None if not two-valued."""
    labels = np.unique(y)
    if labels.size != 2:
        return None
    return (y == labels[1]).astype(np.float64)
