"""Small fully-connected nets on plain numpy.

One implementation serves three callers: the shallow target MLPs, the
multi-label attack adversary, and DP-SGD (which needs per-sample gradient
norms, cheap here via the outer-product factorization of layer gradients).
Training is a pure function of (data, sizes, hyper, seed): bitwise
reproducible, no threading.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "MlpParams",
    "init_params",
    "forward_logits",
    "predict_probs",
    "bce_loss",
    "train_mlp",
    "per_sample_grad_norms",
    "flatten_params",
    "unflatten_params",
]

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpParams:
    """Layer weights (n_in, n_out) and biases, hidden layers ReLU, linear head."""

    weights: tuple
    biases: tuple

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpParams(tuple(weights), tuple(biases))


def forward_logits(params: MlpParams, X: np.ndarray):
    """Returns (logits, activations); activations[k] feeds layer k."""
    acts = [np.asarray(X, dtype=np.float64)]
    a = acts[0]
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        if k < last:
            a = np.maximum(z, 0.0)
            acts.append(a)
        else:
            return z, acts
    raise AssertionError("unreachable")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_probs(params: MlpParams, X: np.ndarray) -> np.ndarray:
    logits, _ = forward_logits(params, X)
    return _sigmoid(logits)


def bce_loss(params: MlpParams, X, Y) -> float:
    """Mean over samples of the per-output binary cross-entropies, summed."""
    Y = np.atleast_2d(Y)
    logits, _ = forward_logits(params, X)
    # stable softplus(z) - y*z
    per = np.logaddexp(0.0, logits) - Y * logits
    return float(per.sum(axis=1).mean())


def _backprop(params: MlpParams, acts, delta_out):
    """Gradients of sum_i loss_i given output-layer deltas (n, out)."""
    gw, gb = [None] * len(params.weights), [None] * len(params.biases)
    delta = delta_out
    for k in range(len(params.weights) - 1, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k].T) * (acts[k] > 0)
    return gw, gb


def _per_sample_sq_norms(params: MlpParams, acts, delta_out):
    """Squared per-sample gradient norms without materializing them.

    grad of W_k for sample i is outer(a_i, delta_i), whose Frobenius norm
    factorizes as |a_i| * |delta_i|; bias gradients are the deltas.
    """
    n = delta_out.shape[0]
    sq = np.zeros(n)
    delta = delta_out
    for k in range(len(params.weights) - 1, -1, -1):
        d2 = (delta**2).sum(axis=1)
        a2 = (acts[k] ** 2).sum(axis=1)
        sq += a2 * d2 + d2
        if k > 0:
            delta = (delta @ params.weights[k].T) * (acts[k] > 0)
    return sq


def per_sample_grad_norms(params: MlpParams, X, Y) -> np.ndarray:
    Y = np.atleast_2d(Y)
    logits, acts = forward_logits(params, X)
    delta = _sigmoid(logits) - Y
    return np.sqrt(_per_sample_sq_norms(params, acts, delta))


def train_mlp(
    X,
    Y,
    hidden: Sequence[int],
    epochs: int,
    batch_size: int,
    lr: float,
    weight_decay: float,
    seed,
    dp_clip: float | None = None,
    dp_sigma: float = 0.0,
) -> MlpParams:
    """Adam training of a ReLU net with sigmoid/BCE outputs.

    With ``dp_clip`` set, per-sample gradients are clipped to that L2 norm and
    Gaussian noise of std ``dp_sigma * dp_clip`` is added to each batch-summed
    gradient before averaging (weight decay applied after noising, to the
    averaged gradient, as is standard).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Y.shape[0] != X.shape[0]:
        Y = Y.T
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    sizes = [X.shape[1], *hidden, Y.shape[1]]
    params = init_params(sizes, rng)
    weights = [np.array(w) for w in params.weights]
    biases = [np.array(b) for b in params.biases]
    m = [np.zeros_like(w) for w in weights] + [np.zeros_like(b) for b in biases]
    v = [np.zeros_like(w) for w in weights] + [np.zeros_like(b) for b in biases]
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = X[idx], Y[idx]
            cur = MlpParams(tuple(weights), tuple(biases))
            logits, acts = forward_logits(cur, xb)
            delta = _sigmoid(logits) - yb
            if dp_clip is not None:
                norms = np.sqrt(_per_sample_sq_norms(cur, acts, delta))
                factors = np.minimum(1.0, dp_clip / np.maximum(norms, 1e-12))
                # scaling the output delta scales every layer's per-sample grad
                gw, gb = _backprop(cur, acts, delta * factors[:, None])
                if dp_sigma > 0:
                    gw = [
                        g + rng.normal(0.0, dp_sigma * dp_clip, size=g.shape)
                        for g in gw
                    ]
                    gb = [
                        g + rng.normal(0.0, dp_sigma * dp_clip, size=g.shape)
                        for g in gb
                    ]
                scale = 1.0 / len(idx)
            else:
                gw, gb = _backprop(cur, acts, delta)
                scale = 1.0 / len(idx)
            grads = [g * scale for g in gw] + [g * scale for g in gb]
            if weight_decay:
                for k, w in enumerate(weights):
                    grads[k] = grads[k] + weight_decay * w
                for k, b in enumerate(biases):
                    grads[len(weights) + k] = grads[len(weights) + k] + weight_decay * b
            t += 1
            lr_t = lr * np.sqrt(1.0 - ADAM_B2**t) / (1.0 - ADAM_B1**t)
            tensors = weights + biases
            for k, (p, g) in enumerate(zip(tensors, grads)):
                m[k] = ADAM_B1 * m[k] + (1 - ADAM_B1) * g
                v[k] = ADAM_B2 * v[k] + (1 - ADAM_B2) * g * g
                p -= lr_t * m[k] / (np.sqrt(v[k]) + ADAM_EPS)
    return MlpParams(tuple(w.copy() for w in weights), tuple(b.copy() for b in biases))


def flatten_params(params: MlpParams) -> np.ndarray:
    """Canonical order: W1, b1, W2, b2, ... row-major."""
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel(order="C"))
        parts.append(b.ravel(order="C"))
    return np.concatenate(parts)


def unflatten_params(flat: np.ndarray, sizes: Sequence[int]) -> MlpParams:
    flat = np.asarray(flat, dtype=np.float64)
    weights, biases = [], []
    pos = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos : pos + n_in * n_out].reshape(n_in, n_out).copy())
        pos += n_in * n_out
        biases.append(flat[pos : pos + n_out].copy())
        pos += n_out
    if pos != flat.size:
        raise ValueError(f"flat length {flat.size} does not match sizes {sizes}")
    return MlpParams(tuple(weights), tuple(biases))
