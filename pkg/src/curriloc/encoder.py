"""Small feed-forward embedding network with hand-written backpropagation.

Architecture: ``F -> H1 -> ... -> Hk -> D``, tanh on hidden layers, a linear
output layer, then L2 normalization.  Weights are stored as ``(out, in)``
matrices so one layer computes ``h @ W.T + b``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatVersionError, InvalidShape, NonFinite, ParseError, ShapeMismatch

DEFAULT_GRID = (16, 64)
DEFAULT_HIDDEN = (256, 64)
DEFAULT_DIM = 64
NORM_EPS = 1e-12

MAGIC = b"MLOC"
FORMAT_VERSION = 1


@dataclass
class EncoderParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidShape("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidShape(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise InvalidShape(f"layer {i} expects {w.shape[1]} inputs, previous layer emits "
                                   f"{self.weights[i - 1].shape[0]}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "EncoderParams":
        return EncoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved, layer by layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other: "EncoderParams") -> bool:
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(mine, theirs))


def encoder_init(shape: Sequence[int], seed: int) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2 or any(s < 1 for s in shape):
        raise InvalidShape(f"shape must list >= 2 positive widths, got {shape}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(shape[:-1], shape[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights, biases)


def _forward(params: EncoderParams, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeMismatch(f"expected inputs of width {params.input_dim}, got shape {x.shape}")
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if i == last else np.tanh(z)
        if i != last:
            acts.append(h)
    v = h
    norm = np.sqrt(np.sum(v * v, axis=1))
    norm = np.where(norm < NORM_EPS, norm + NORM_EPS, norm)
    out = v / norm[:, None]
    if not np.all(np.isfinite(out)):
        raise NonFinite("encoder produced non-finite values")
    return out, (acts, out, norm)


def encoder_forward(params: EncoderParams, x) -> np.ndarray:
    """Unit-norm descriptor(s) for one input vector or a 2-D batch of inputs."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFinite("input has non-finite entries")
    if x.ndim == 1:
        return _forward(params, x[None, :])[0][0]
    return _forward(params, x)[0]


def encoder_backward(params: EncoderParams, x, upstream) -> EncoderParams:
    """Parameter gradients of ``sum(upstream * encoder_forward(params, x))``.

    ``upstream`` holds dLoss/d(descriptor) for every row of ``x``; the result
    has the same structure as ``params``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if g.shape != (x.shape[0], params.output_dim):
        raise ShapeMismatch(f"upstream gradient shape {g.shape} does not match "
                            f"({x.shape[0]}, {params.output_dim})")
    _, cache = _forward(params, x)
    return _backward(params, cache, g)


def _backward(params: EncoderParams, cache, g: np.ndarray) -> EncoderParams:
    acts, unit, norm = cache
    # d(v/|v|)/dv = (I - u u^T) / |v|
    delta = (g - unit * np.sum(unit * g, axis=1, keepdims=True)) / norm[:, None]

    n_layers = len(params.weights)
    grad_w: list[np.ndarray] = [None] * n_layers
    grad_b: list[np.ndarray] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = delta.T @ acts[i]
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i]) * (1.0 - acts[i] ** 2)
    return EncoderParams(grad_w, grad_b)


def sgd_step(params: EncoderParams, grads: EncoderParams, lr: float) -> EncoderParams:
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if params.shape != grads.shape:
        raise ShapeMismatch(f"parameter shape {params.shape} vs gradient shape {grads.shape}")
    return EncoderParams([w - lr * gw for w, gw in zip(params.weights, grads.weights)],
                         [b - lr * gb for b, gb in zip(params.biases, grads.biases)])


# --------------------------------------------------------------------------
# input featurization

def _bin_mean(a: np.ndarray, out: int, axis: int) -> np.ndarray:
    size = a.shape[axis]
    if size < out:
        idx = (np.arange(out) * size) // out
        return np.take(a, idx, axis=axis)
    if size % out == 0:
        k = size // out
        shape = a.shape[:axis] + (out, k) + a.shape[axis + 1:]
        return a.reshape(shape).mean(axis=axis + 1)
    bins = (np.arange(size) * out) // size
    counts = np.bincount(bins, minlength=out).astype(np.float64)
    moved = np.moveaxis(a, axis, 0)
    sums = np.zeros((out,) + moved.shape[1:])
    np.add.at(sums, bins, moved)
    sums /= counts.reshape((out,) + (1,) * (moved.ndim - 1))
    return np.moveaxis(sums, 0, axis)


def featurize(pixels: np.ndarray, grid: tuple[int, int] = DEFAULT_GRID) -> np.ndarray:
    """Area-average a uint8 raster down to ``grid`` and flatten to [0, 1] floats."""
    img = np.asarray(pixels, dtype=np.float64)
    img = _bin_mean(_bin_mean(img, grid[0], 0), grid[1], 1)
    return (img / 255.0).ravel()


# --------------------------------------------------------------------------
# binary checkpoints
#
# little-endian: b"MLOC", u32 version, u32 layer count, then per layer
# u32 rows, u32 cols, rows*cols f64 weights (row-major), rows f64 biases.

def write_layers(path, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> None:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(layers))]
    for w, b in layers:
        w = np.asarray(w, dtype="<f8")
        b = np.asarray(b, dtype="<f8")
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w).tobytes())
        parts.append(b.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_layers(path) -> list[tuple[np.ndarray, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ParseError("not an MLOC file (bad magic)", path)
    if len(data) < 12:
        raise ParseError("truncated header", path)
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: unsupported format version {version}")
    pos = 12
    layers = []
    for i in range(count):
        if pos + 8 > len(data):
            raise ParseError(f"truncated header of layer {i}", path)
        rows, cols = struct.unpack_from("<II", data, pos)
        pos += 8
        n_w, n_b = rows * cols * 8, rows * 8
        if pos + n_w + n_b > len(data):
            raise ParseError(f"truncated data in layer {i}", path)
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols)
        pos += n_w
        b = np.frombuffer(data, dtype="<f8", count=rows, offset=pos)
        pos += n_b
        layers.append((w.astype(np.float64), b.astype(np.float64)))
    if pos != len(data):
        raise ParseError("trailing bytes after last layer", path)
    return layers


def save_checkpoint(params: EncoderParams, path) -> None:
    write_layers(path, list(zip(params.weights, params.biases)))


def load_checkpoint(path) -> EncoderParams:
    layers = read_layers(path)
    return EncoderParams([w for w, _ in layers], [b for _, b in layers])
