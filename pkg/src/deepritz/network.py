"""Fully connected sigmoid networks R^2 -> R^2 with hand-written backpropagation.

Hidden layers compute ``sigmoid(W x - b)`` and the output layer ``W x - b``
(biases are subtracted throughout).  Gradients are taken with respect to the
parameters only; spatial derivatives are formed elsewhere by differencing
forward evaluations, so the backward pass only ever needs a cotangent per
evaluated point.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHUNK = 1 << 15
# activations up to this many floats are kept between the forward and backward pass
CACHE_FLOATS = 1 << 25


class CheckpointError(ValueError):
    """Raised when a weight checkpoint cannot be parsed."""


@dataclass
class MlpParams:
    """Weights ``W[j]`` of shape ``(n_j, n_{j-1})`` and biases ``b[j]`` of shape ``(n_j,)``.

    The same container holds parameter gradients, which have identical shapes.
    Calling the object evaluates the network on an ``(n, 2)`` array of points.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        prev = self.weights[0].shape[1]
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or W.shape[1] != prev or b.shape != (W.shape[0],):
                raise ValueError("layer shapes do not chain")
            prev = W.shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, sizes, flat) -> "MlpParams":
        flat = np.asarray(flat, dtype=float)
        expected = count_params(sizes)
        if flat.shape != (expected,):
            raise ValueError(f"expected {expected} parameters for sizes {list(sizes)}, got {flat.shape}")
        weights, biases, pos = [], [], 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[pos:pos + n_in * n_out].reshape(n_out, n_in).copy())
            pos += n_in * n_out
            biases.append(flat[pos:pos + n_out].copy())
            pos += n_out
        return cls(weights, biases)

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def __call__(self, points) -> np.ndarray:
        return forward(self, points)


def count_params(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _check_sizes(sizes) -> list[int]:
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ValueError("a network needs at least an input and an output layer")
    if sizes[0] != 2 or sizes[-1] != 2:
        raise ValueError(f"input and output dimension must be 2, got {sizes}")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    return sizes


def init(sizes, seed: int) -> MlpParams:
    """Weights uniform in ``(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    sizes = _check_sizes(sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases)


def zeros(sizes) -> MlpParams:
    sizes = _check_sizes(sizes)
    return MlpParams([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                     [np.zeros(o) for o in sizes[1:]])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # in place; exp overflow for very negative z correctly yields 0
    with np.errstate(over="ignore"):
        np.negative(z, out=z)
        np.exp(z, out=z)
    z += 1.0
    return np.reciprocal(z, out=z)


def _activations(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    hs = [x]
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = hs[-1] @ W.T
        z -= b
        hs.append(_sigmoid(z))
    return hs


def forward(params: MlpParams, points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input coordinates")
    out = np.empty((len(x), params.weights[-1].shape[0]))
    for s in range(0, len(x), CHUNK):
        hs = _activations(params, x[s:s + CHUNK])
        out[s:s + CHUNK] = hs[-1] @ params.weights[-1].T - params.biases[-1]
    return out[0] if single else out


def _backprop(params: MlpParams, hs: list[np.ndarray], delta: np.ndarray, gW, gb) -> None:
    ones = np.ones(len(delta))
    for j in range(len(params.weights) - 1, -1, -1):
        gW[j] += delta.T @ hs[j]
        gb[j] -= ones @ delta
        if j == 0:
            break
        h = hs[j]
        delta = delta @ params.weights[j]
        delta *= h
        delta -= delta * h


def backward(params: MlpParams, points, cotangent) -> MlpParams:
    """Gradient of ``sum_i cotangent[i] . u(points[i])`` with respect to all parameters.

    Work is split into fixed chunks whose contributions are summed in order,
    so the result is reproducible for a given input.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    g = np.atleast_2d(np.asarray(cotangent, dtype=float))
    if g.shape != (len(x), params.weights[-1].shape[0]):
        raise ValueError(f"cotangent shape {g.shape} does not match {len(x)} points")
    gW = [np.zeros_like(W) for W in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    for s in range(0, len(x), CHUNK):
        _backprop(params, _activations(params, x[s:s + CHUNK]), g[s:s + CHUNK], gW, gb)
    return MlpParams(gW, gb)


def value_and_grad(params: MlpParams, points, loss):
    """Evaluate ``loss(u(points))`` and its parameter gradient in one sweep.

    ``loss`` maps the ``(n, 2)`` outputs to ``(value, d value / d outputs)``.
    Hidden activations are reused for the backward pass when they fit in
    :data:`CACHE_FLOATS`, otherwise recomputed chunk by chunk.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input coordinates")
    keep = len(x) * sum(params.sizes[1:-1]) <= CACHE_FLOATS
    cache = []
    out = np.empty((len(x), params.weights[-1].shape[0]))
    for s in range(0, len(x), CHUNK):
        hs = _activations(params, x[s:s + CHUNK])
        out[s:s + CHUNK] = hs[-1] @ params.weights[-1].T - params.biases[-1]
        if keep:
            cache.append(hs)
    value, g = loss(out)
    g = np.asarray(g, dtype=float)
    if g.shape != out.shape:
        raise ValueError(f"cotangent shape {g.shape} does not match outputs {out.shape}")
    gW = [np.zeros_like(W) for W in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    for k, s in enumerate(range(0, len(x), CHUNK)):
        hs = cache[k] if keep else _activations(params, x[s:s + CHUNK])
        _backprop(params, hs, g[s:s + CHUNK], gW, gb)
    return value, MlpParams(gW, gb)


def save_checkpoint(params: MlpParams, path) -> Path:
    """Text checkpoint: a ``# layers:`` header then one exact float per line."""
    path = Path(path)
    lines = ["# layers: " + " ".join(str(s) for s in params.sizes)]
    lines += [repr(float(v)) for v in params.flatten()]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> MlpParams:
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: not a text checkpoint") from exc
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# layers:"):
        raise CheckpointError(f"{path}: missing '# layers:' header")
    try:
        sizes = _check_sizes(lines[0].split(":", 1)[1].split())
    except ValueError as exc:
        raise CheckpointError(f"{path}: bad layer header: {exc}") from exc
    try:
        values = np.array([float(v) for v in lines[1:]])
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if values.size != count_params(sizes):
        raise CheckpointError(f"{path}: expected {count_params(sizes)} parameters for layers "
                              f"{sizes}, found {values.size}")
    if not np.all(np.isfinite(values)):
        raise CheckpointError(f"{path}: non-finite parameter values")
    return MlpParams.unflatten(sizes, values)
